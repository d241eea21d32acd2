#pragma once

// Multi-stream networks with fusion modules between their blocks.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mmtm/autodiff.hpp"
#include "mmtm/fusion.hpp"
#include "mmtm/linear.hpp"
#include "mmtm/mmtm.hpp"

namespace mmtm {

enum class BlockKind { Conv, Dense };

// conv: 'same' kxk convolution + bias + ReLU, then optional 2x mean pool.
// dense: flatten + fully-connected + ReLU.
struct BlockSpec {
  BlockKind kind = BlockKind::Dense;
  std::size_t out_channels = 0;
  std::size_t kernel = 3;
  bool pool = false;

  friend bool operator==(const BlockSpec&, const BlockSpec&) = default;
};

struct StreamSpec {
  std::string name;
  Shape input_shape;
  std::vector<BlockSpec> blocks;
  std::size_t num_classes = 0;

  // Shape after block b (1-based); 0 is the input.
  Shape boundary_shape(std::size_t b) const;
  void validate() const;

  friend bool operator==(const StreamSpec&, const StreamSpec&) = default;
};

// Desk-scale towers: images get conv blocks 8 -> 16 -> 32 (3x3, pooling after
// the first two); vectors get two dense blocks of 32.
StreamSpec default_stream_spec(std::string name, const Shape& input_shape, std::size_t num_classes);

// One fusion module; after_block[s] is the 1-based block of stream s after
// which the module runs.
struct FusionPointSpec {
  std::vector<std::size_t> after_block;

  friend bool operator==(const FusionPointSpec&, const FusionPointSpec&) = default;
};

using FusionPlan = std::vector<FusionPointSpec>;

// j = 0..max_points plans attaching j modules to the last j block boundaries
// of every stream. Throws ConfigError if max_points exceeds the shallowest stream.
std::vector<FusionPlan> fusion_sweep_plans(std::span<const StreamSpec> streams, std::size_t max_points);
// The single plan with `points` suffix-aligned modules.
FusionPlan suffix_plan(std::span<const StreamSpec> streams, std::size_t points);

enum class HeadPolicy { Late, Joint };

struct NetworkConfig {
  std::vector<StreamSpec> streams;
  // Dataset modality read by each stream; empty means stream s reads modality s.
  std::vector<std::size_t> stream_modality;
  FusionKind variant = FusionKind::Mmtm;
  FusionPlan plan;
  HeadPolicy head = HeadPolicy::Late;
  LateMode late_mode = LateMode::Logits;
  // MMTM hyperparameters shared by every fusion point.
  std::size_t bottleneck = 0;
  std::vector<bool> gate_mask;
  bool relu_on_joint = false;
  MmtmInit init = MmtmInit::FanIn;
  double excitation_decay = 0.0;

  std::size_t modality_of(std::size_t stream) const;
};

struct StreamWeights {
  std::vector<Linear> blocks;  // conv blocks store kernels [k,k,cin,cout] in weight
  Linear head;
};

struct ForwardTrace {
  // [stream][b] activation after block b+1, after any fusion at that boundary.
  std::vector<std::vector<Var>> boundaries;
  std::vector<Var> excitations;
};

class FusionNetwork {
 public:
  struct Bound {
    std::vector<std::vector<BoundLinear>> blocks;
    std::vector<BoundLinear> heads;
    std::vector<FusionPoint::Bound> points;
    BoundLinear joint_head;
    // Every parameter Var in declaration order (parallel to parameters()).
    std::vector<Var> all;
  };

  // Deterministic in (config, seed). Throws ConfigError on invalid plans.
  static FusionNetwork build(const NetworkConfig& config, std::uint64_t seed);

  const NetworkConfig& config() const { return config_; }
  // Streams actually executed; early fusion merges all inputs into one.
  const std::vector<StreamSpec>& streams() const { return streams_; }
  const std::vector<FusionPoint>& points() const { return points_; }
  const std::vector<StreamWeights>& weights() const { return weights_; }
  const Linear& joint_head() const { return joint_head_; }

  std::vector<NamedTensor> parameters();
  std::vector<NamedConstTensor> parameters() const;
  std::size_t parameter_count() const;

  Bound bind(Tape& tape, Binding binding) const;

  // Logits for one sample. inputs are indexed by dataset modality.
  Var forward(Tape& tape, const Bound& bound, std::span<const Tensor> inputs, ForwardTrace* trace = nullptr) const;

  // Convenience: frozen single-sample evaluation.
  Tensor logits(std::span<const Tensor> inputs) const;

 private:
  Var run_block(std::size_t stream, std::size_t block, Var x, const Bound& bound) const;

  NetworkConfig config_;
  std::vector<StreamSpec> streams_;
  std::vector<StreamWeights> weights_;
  std::vector<FusionPoint> points_;
  Linear joint_head_;
};

}  // namespace mmtm
