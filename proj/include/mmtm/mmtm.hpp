#pragma once

// Multimodal transfer module.
//
// Each modality m contributes a feature tensor of arbitrary rank with C_m
// channels in the last axis. The module squeezes every tensor to a channel
// descriptor S_m, maps the concatenation [S_1, ..., S_K] to a joint embedding
// Z = W [S_1, ..., S_K] + b, predicts one excitation E_m = W_m Z + b_m per
// modality, and recalibrates the features as 2 * sigmoid(E_m) (.) A_m with
// the gate broadcast over all non-channel positions.

#include <cstddef>
#include <span>
#include <vector>

#include "mmtm/autodiff.hpp"
#include "mmtm/linear.hpp"
#include "mmtm/random.hpp"

namespace mmtm {

struct MmtmConfig {
  std::vector<std::size_t> channel_counts;
  // 0 selects default_bottleneck(channel_counts).
  std::size_t bottleneck = 0;
  // Empty gates every modality. A false entry leaves that stream untouched.
  std::vector<bool> gate_mask;
  // L2 weight on the excitation pre-activations.
  double excitation_decay = 0.0;
  // Off by default: Z is linear.
  bool relu_on_joint = false;

  std::size_t modalities() const { return channel_counts.size(); }
  std::size_t total_channels() const;
  std::size_t bottleneck_size() const;
  bool gated(std::size_t modality) const;
  // Throws ConfigError on K < 2, zero channel counts, or a mask of the wrong length.
  void validate() const;
};

// floor(sum C_m / 4), at least 1.
std::size_t default_bottleneck(std::span<const std::size_t> channel_counts);

// C_Z * sum C_m + C_Z + sum_m (C_m * C_Z + C_m)
std::size_t mmtm_parameter_count(const MmtmConfig& config);

enum class MmtmInit {
  // W, W_m uniform fan-in; b, b_m zero.
  FanIn,
  // W fan-in, excitation heads all zero: the module starts as the identity.
  ZeroHeads,
  // Every weight and bias uniform fan-in, for ablations and gradient checks.
  FullyRandom,
};

struct MmtmState {
  Linear joint;                // [C_Z, sum C_m]
  std::vector<Linear> heads;   // [C_m, C_Z] each

  std::size_t parameter_count() const;
  // Throws ConfigError if any weight shape disagrees with the config.
  void check(const MmtmConfig& config) const;
};

MmtmState init_mmtm_state(const MmtmConfig& config, Rng& rng, MmtmInit init = MmtmInit::FanIn);

struct BoundMmtm {
  BoundLinear joint;
  std::vector<BoundLinear> heads;
};

BoundMmtm bind(Tape& tape, const MmtmState& state, Binding binding);

std::vector<Var> squeeze(std::span<const Var> features, const MmtmConfig& config);
Var joint(std::span<const Var> squeezed, const MmtmConfig& config, const BoundMmtm& state);
std::vector<Var> excite(Var z, const MmtmConfig& config, const BoundMmtm& state);
// 2 * sigmoid(E); every coefficient lies in (0, 2).
Var gate_coefficients(Var excitation);
std::vector<Var> gate(std::span<const Var> features, std::span<const Var> excitations, const MmtmConfig& config);

struct MmtmResult {
  std::vector<Var> outputs;
  std::vector<Var> excitations;
};

MmtmResult mmtm_forward(std::span<const Var> features, const MmtmConfig& config, const BoundMmtm& state);

// lambda * sum_m ||E_m||^2, shape [1].
Var excitation_penalty(std::span<const Var> excitations, double lambda);

}  // namespace mmtm
