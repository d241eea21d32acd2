#pragma once

// Experiment configuration: an INI-style file with [task], [streams],
// [fusion], [training], [ablate] and [sweep] sections. Unknown keys are
// rejected. See configs/default.ini for every key and its default.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mmtm/fusion.hpp"
#include "mmtm/network.hpp"
#include "mmtm/synthdata.hpp"
#include "mmtm/trainer.hpp"

namespace mmtm {

struct ExperimentConfig {
  SyntheticTaskSpec task;
  // Load this MMFZ1 file instead of generating the task.
  std::optional<std::filesystem::path> data_path;

  // [streams]
  std::vector<std::size_t> conv_channels{8, 16, 32};
  std::vector<bool> conv_pool{true, true, false};
  std::size_t kernel = 3;
  std::vector<std::size_t> dense_units{32, 32};
  // Dataset modalities fed to streams; empty uses all of them.
  std::vector<std::size_t> use_modalities;
  HeadPolicy head = HeadPolicy::Late;
  LateMode late_mode = LateMode::Logits;

  // [fusion]
  FusionKind variant = FusionKind::Mmtm;
  // Number of suffix-aligned fusion points for point-based variants.
  std::size_t points = 2;
  std::size_t bottleneck = 0;
  std::vector<bool> gate_mask;
  bool relu_on_joint = false;
  MmtmInit init = MmtmInit::FanIn;

  TrainConfig training;

  // [ablate] / [sweep]
  std::vector<FusionKind> ablate_variants{FusionKind::Mmtm, FusionKind::Late, FusionKind::SeLate};
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::size_t sweep_max_points = 2;
};

// Parses INI text and applies "section.key=value" overrides on top.
ExperimentConfig parse_config(std::string_view text, std::span<const std::string> overrides = {});
ExperimentConfig load_config(const std::filesystem::path& path, std::span<const std::string> overrides = {});

// Canonical text; parse_config(to_text(c)) reproduces c.
std::string to_text(const ExperimentConfig& config);

// A commented configuration with every default, printed on usage errors.
std::string example_config();

// Streams and fusion plan for `variant` on a dataset with the given modality
// shapes. Point-based variants get `points` suffix-aligned modules.
NetworkConfig network_config(const ExperimentConfig& config, const std::vector<Shape>& modality_shapes,
                             FusionKind variant, std::size_t points);
NetworkConfig network_config(const ExperimentConfig& config, const std::vector<Shape>& modality_shapes);

// The training parameters with the excitation penalty folded in.
TrainConfig train_config(const ExperimentConfig& config);

}  // namespace mmtm
