#pragma once

// Multi-seed experiment drivers: variant ablations and fusion-count sweeps.
// Each run owns its network, tape and RNG state; the data order for a given
// seed is the same for every variant.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mmtm/config.hpp"
#include "mmtm/trainer.hpp"

namespace mmtm {

struct Summary {
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation; 0 for one value
};

Summary summarize(std::span<const double> values);

// True when every modality has the same rank-3 spatial extent.
bool spatially_aligned(const std::vector<Shape>& shapes);
// Early fusion and the convolutional MMTM variants.
bool needs_aligned_task(FusionKind kind);

// The dataset a config describes: loaded from data_path when set (its stored
// task replaces config.task), generated otherwise.
Dataset load_or_generate(ExperimentConfig& config);

struct RunResult {
  RunRecord record;
  std::uint64_t params = 0;
  std::uint64_t macs = 0;
};

// Builds the network for (variant, points) with `seed` and trains it with the
// same seed driving the data order.
RunResult run_experiment(const Dataset& data, const ExperimentConfig& config, FusionKind variant,
                         std::size_t points, std::uint64_t seed);

using RunCallback = std::function<void(const std::string& label, std::uint64_t seed, const RunResult&)>;

struct AblationRow {
  std::string variant;
  bool aligned_task = false;  // ran on the aligned variant of the task
  double mean_accuracy = 0.0;
  double std_accuracy = 0.0;
  std::uint64_t params = 0;
  std::uint64_t macs = 0;
  std::vector<double> accuracies;  // per seed, in seed order
};

// Rows sorted by variant name. Variants that need aligned inputs run on
// `aligned` when `data` is unaligned; UsageError if it is null then, or
// without seeds.
std::vector<AblationRow> ablate(const Dataset& data, const Dataset* aligned, const ExperimentConfig& config,
                                std::span<const FusionKind> variants, std::span<const std::uint64_t> seeds,
                                const RunCallback& on_run = {});
// variant,mean_acc,std_acc,params,macs,task
std::string ablation_csv(std::span<const AblationRow> rows);

struct SweepRow {
  std::size_t points = 0;
  double mean_accuracy = 0.0;
  double std_accuracy = 0.0;
  std::vector<double> accuracies;
};

// One row per j = 0..max_points MMTMs on the last j block boundaries.
std::vector<SweepRow> sweep_mmtm_count(const Dataset& data, const ExperimentConfig& config, std::size_t max_points,
                                       std::span<const std::uint64_t> seeds, const RunCallback& on_run = {});
// j,mean_acc,std_acc
std::string sweep_csv(std::span<const SweepRow> rows);

}  // namespace mmtm
