#pragma once

// Synthetic multimodal classification tasks.
//
// Every modality is "signal + Gaussian noise" where the signal is built from
// fixed smooth templates (one orthonormal set per modality, derived from the
// seed). How the label is spread across modalities depends on the mode:
//
//   independent    every modality shows a template for its class; any one
//                  modality suffices.
//   complementary  classes come in pairs that share a cue template with
//                  opposite sign. One randomly chosen carrier modality shows
//                  the cue multiplied by a random polarity s in {-1, +1}; every
//                  other modality shows no class cue, only a polarity
//                  reference s * R_m over the noise. The carrier alone tells
//                  the pair, the reference is needed to resolve the sign, so
//                  the label is an interaction between modalities.
//   xor            each modality shows a random log2(C)-bit code as signed
//                  templates; the label is the XOR of all codes, so no single
//                  modality carries any information about it.
//
// Corruption replaces a non-carrier modality with pure noise and sets its
// flag. At most K-1 modalities of a sample are corrupted.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mmtm/tensor.hpp"

namespace mmtm {

enum class CrossModalMode : std::uint8_t { Independent = 0, Complementary = 1, Xor = 2 };

std::string_view mode_name(CrossModalMode mode);
CrossModalMode parse_mode(std::string_view name);

struct SyntheticTaskSpec {
  std::size_t num_classes = 4;
  std::vector<Shape> modality_shapes{{12, 12, 1}, {16}};
  CrossModalMode mode = CrossModalMode::Complementary;
  double corruption_prob = 0.3;
  double noise_sigma = 1.0;
  double signal_amplitude = 1.0;
  std::size_t train_size = 4000;
  std::size_t val_size = 1000;
  std::size_t test_size = 1000;
  std::uint64_t seed = 0;

  // Throws ConfigError on impossible specs.
  void validate() const;

  friend bool operator==(const SyntheticTaskSpec&, const SyntheticTaskSpec&) = default;
};

struct Sample {
  std::vector<Tensor> inputs;
  std::size_t label = 0;
  std::vector<bool> corrupted;

  friend bool operator==(const Sample&, const Sample&) = default;
};

struct Dataset {
  SyntheticTaskSpec spec;
  std::vector<Sample> train;
  std::vector<Sample> val;
  std::vector<Sample> test;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

Dataset generate(const SyntheticTaskSpec& spec);

// The same task with every modality shaped like the first one, so that early
// fusion and the convolutional MMTM variants apply.
SyntheticTaskSpec aligned_variant(SyntheticTaskSpec spec);

// "MMFZ1" container; layout in docs/file-formats.md.
std::vector<std::uint8_t> encode_dataset(const Dataset& dataset);
Dataset decode_dataset(std::span<const std::uint8_t> bytes);
void save_dataset(const Dataset& dataset, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace mmtm
