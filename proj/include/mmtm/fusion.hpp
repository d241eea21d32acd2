#pragma once

// Fusion variants compared against MMTM: early and late fusion, unimodal
// squeeze-and-excitation with late fusion, and the convolutional MMTM that
// replaces squeeze + fully-connected layers with per-position 1x1 layers.

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mmtm/autodiff.hpp"
#include "mmtm/linear.hpp"
#include "mmtm/mmtm.hpp"

namespace mmtm {

enum class FusionKind { Mmtm, Early, Late, SeLate, ConvMmtm, ConvMmtmSum };

std::span<const FusionKind> all_fusion_kinds();
// Config-file names: mmtm, early, late, se_late, conv_mmtm, conv_mmtm_sum.
std::string_view fusion_kind_name(FusionKind kind);
// Throws UsageError listing the valid names.
FusionKind parse_fusion_kind(std::string_view name);
// True for variants inserted at block boundaries.
bool uses_fusion_points(FusionKind kind);

// ---- squeeze-and-excitation ----

struct SeState {
  Linear reduce;  // [C/4, C]
  Linear expand;  // [C, C/4]

  std::size_t parameter_count() const { return reduce.parameter_count() + expand.parameter_count(); }
};

struct BoundSe {
  BoundLinear reduce;
  BoundLinear expand;
};

std::size_t se_bottleneck(std::size_t channels);
std::size_t se_parameter_count(std::size_t channels);
SeState init_se_state(std::size_t channels, Rng& rng);
BoundSe bind(Tape& tape, const SeState& state, Binding binding);

// x * sigmoid(expand(relu(reduce(squeeze(x))))); the gate lies in (0, 1).
Var se_forward(Var feature, const BoundSe& state);

// ---- convolutional MMTM ----

// Same weights as MMTM applied per spatial position without the squeeze.
// Every modality must share one spatial shape, otherwise DimensionError with
// "unaligned spatial dimensions". use_sum replaces gating with A_m + E_m.
std::vector<Var> conv_mmtm_forward(std::span<const Var> features, const MmtmConfig& config, const BoundMmtm& state,
                                   bool use_sum, std::vector<Var>* excitations = nullptr);

// ---- early and late fusion ----

enum class LateMode { Logits, Probabilities };

// Logits: arithmetic mean of the per-stream scores. Probabilities: log of the
// mean softmax, so that cross-entropy still applies.
Var late_fuse(std::span<const Var> logits, LateMode mode = LateMode::Logits);

// Channel concatenation of spatially aligned inputs.
Var early_fuse(std::span<const Var> inputs);

// ---- fusion module at a block boundary ----

class FusionPoint {
 public:
  struct Bound {
    BoundMmtm mmtm;
    std::vector<BoundSe> se;
  };

  static FusionPoint create(FusionKind kind, MmtmConfig config, Rng& rng, MmtmInit init = MmtmInit::FanIn);

  FusionKind kind() const { return kind_; }
  const MmtmConfig& config() const { return config_; }
  const MmtmState& mmtm_state() const { return mmtm_; }
  MmtmState& mmtm_state() { return mmtm_; }
  const std::vector<SeState>& se_states() const { return se_; }

  std::size_t parameter_count() const;
  void append_parameters(std::vector<NamedTensor>& out, const std::string& prefix);
  void append_parameters(std::vector<NamedConstTensor>& out, const std::string& prefix) const;

  Bound bind(Tape& tape, Binding binding) const;
  // Rewrites the participating activations. Excitations (if any) are appended.
  std::vector<Var> forward(std::span<const Var> features, const Bound& bound,
                           std::vector<Var>* excitations = nullptr) const;

 private:
  FusionKind kind_ = FusionKind::Mmtm;
  MmtmConfig config_;
  MmtmState mmtm_;
  std::vector<SeState> se_;
};

}  // namespace mmtm
