#include "mmtm/network.hpp"

#include <cmath>

#include "mmtm/errors.hpp"
#include "mmtm/random.hpp"

namespace mmtm {

// ---- specs ---------------------------------------------------------------

Shape StreamSpec::boundary_shape(std::size_t b) const {
  if (b > blocks.size()) {
    throw ConfigError("stream '" + name + "' has " + std::to_string(blocks.size()) + " blocks, boundary " +
                      std::to_string(b) + " requested");
  }
  Shape shape = input_shape;
  for (std::size_t i = 0; i < b; ++i) {
    const BlockSpec& blk = blocks[i];
    if (blk.kind == BlockKind::Conv) {
      shape = {shape[0], shape[1], blk.out_channels};
      if (blk.pool) shape = {shape[0] / 2, shape[1] / 2, blk.out_channels};
    } else {
      shape = {blk.out_channels};
    }
  }
  return shape;
}

void StreamSpec::validate() const {
  if (input_shape.empty() || shape_volume(input_shape) == 0) {
    throw ConfigError("stream '" + name + "' has an empty input shape " + shape_to_string(input_shape));
  }
  if (num_classes < 2) throw ConfigError("stream '" + name + "' needs at least 2 classes");
  Shape shape = input_shape;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const BlockSpec& blk = blocks[i];
    if (blk.out_channels == 0) {
      throw ConfigError("stream '" + name + "' block " + std::to_string(i + 1) + " has zero output channels");
    }
    if (blk.kind == BlockKind::Conv) {
      if (shape.size() != 3) {
        throw ConfigError("stream '" + name + "' block " + std::to_string(i + 1) + " is a conv block but its input " +
                          shape_to_string(shape) + " is not [H,W,C]");
      }
      if (blk.kernel == 0) throw ConfigError("stream '" + name + "' has a zero-size kernel");
      if (blk.pool && (shape[0] < 2 || shape[1] < 2)) {
        throw ConfigError("stream '" + name + "' block " + std::to_string(i + 1) + " pools a " +
                          shape_to_string(shape) + " map");
      }
    }
    shape = boundary_shape(i + 1);
  }
}

StreamSpec default_stream_spec(std::string name, const Shape& input_shape, std::size_t num_classes) {
  StreamSpec spec{std::move(name), input_shape, {}, num_classes};
  if (input_shape.size() == 3) {
    spec.blocks = {{BlockKind::Conv, 8, 3, true}, {BlockKind::Conv, 16, 3, true}, {BlockKind::Conv, 32, 3, false}};
  } else {
    spec.blocks = {{BlockKind::Dense, 32}, {BlockKind::Dense, 32}};
  }
  return spec;
}

FusionPlan suffix_plan(std::span<const StreamSpec> streams, std::size_t points) {
  std::size_t shallowest = streams.empty() ? 0 : streams[0].blocks.size();
  for (const auto& s : streams) shallowest = std::min(shallowest, s.blocks.size());
  if (points > shallowest) {
    throw ConfigError("requested " + std::to_string(points) + " fusion points but the shallowest stream has only " +
                      std::to_string(shallowest) + " block boundaries");
  }
  FusionPlan plan;
  for (std::size_t i = points; i-- > 0;) {
    FusionPointSpec p;
    for (const auto& s : streams) p.after_block.push_back(s.blocks.size() - i);
    plan.push_back(std::move(p));
  }
  return plan;
}

std::vector<FusionPlan> fusion_sweep_plans(std::span<const StreamSpec> streams, std::size_t max_points) {
  suffix_plan(streams, max_points);
  std::vector<FusionPlan> plans;
  for (std::size_t j = 0; j <= max_points; ++j) plans.push_back(suffix_plan(streams, j));
  return plans;
}

std::size_t NetworkConfig::modality_of(std::size_t stream) const {
  return stream_modality.empty() ? stream : stream_modality.at(stream);
}

// ---- build ---------------------------------------------------------------

namespace {

Linear conv_block_weights(const Shape& in, const BlockSpec& blk, Rng& rng) {
  const std::size_t cin = in[2];
  const double bound = 1.0 / std::sqrt(static_cast<double>(blk.kernel * blk.kernel * cin));
  return Linear{random_uniform({blk.kernel, blk.kernel, cin, blk.out_channels}, -bound, bound, rng),
                Tensor({blk.out_channels}, 0.0)};
}

}  // namespace

FusionNetwork FusionNetwork::build(const NetworkConfig& config, std::uint64_t seed) {
  if (config.streams.empty()) throw ConfigError("network has no streams");
  if (!config.stream_modality.empty() && config.stream_modality.size() != config.streams.size()) {
    throw ConfigError("stream_modality lists " + std::to_string(config.stream_modality.size()) + " entries for " +
                      std::to_string(config.streams.size()) + " streams");
  }
  const std::size_t classes = config.streams[0].num_classes;
  for (const auto& s : config.streams) {
    s.validate();
    if (s.num_classes != classes) throw ConfigError("streams disagree on the number of classes");
  }

  FusionNetwork net;
  net.config_ = config;

  if (config.variant == FusionKind::Early) {
    if (!config.plan.empty()) throw ConfigError("early fusion takes no intermediate fusion points");
    const Shape spatial(config.streams[0].input_shape.begin(), config.streams[0].input_shape.end() - 1);
    std::size_t channels = 0;
    for (const auto& s : config.streams) {
      const Shape sp(s.input_shape.begin(), s.input_shape.end() - 1);
      if (sp != spatial) {
        throw DimensionError("early fusion: unaligned spatial dimensions, " +
                             shape_to_string(config.streams[0].input_shape) + " vs " + shape_to_string(s.input_shape));
      }
      channels += s.input_shape.back();
    }
    StreamSpec merged = config.streams[0];
    merged.name = "early";
    merged.input_shape = spatial;
    merged.input_shape.push_back(channels);
    merged.validate();
    net.streams_ = {merged};
  } else {
    if (config.variant == FusionKind::Late && !config.plan.empty()) {
      throw ConfigError("late fusion takes no intermediate fusion points");
    }
    net.streams_ = config.streams;
  }

  const std::size_t n_streams = net.streams_.size();
  for (std::size_t s = 0; s < n_streams; ++s) {
    const StreamSpec& spec = net.streams_[s];
    Rng rng(derive_seed(seed, 100 + s));
    StreamWeights w;
    for (std::size_t b = 0; b < spec.blocks.size(); ++b) {
      const Shape in = spec.boundary_shape(b);
      const BlockSpec& blk = spec.blocks[b];
      if (blk.kind == BlockKind::Conv) {
        w.blocks.push_back(conv_block_weights(in, blk, rng));
      } else {
        w.blocks.push_back(fan_in_linear(blk.out_channels, shape_volume(in), rng));
      }
    }
    if (config.head == HeadPolicy::Late) {
      w.head = fan_in_linear(classes, shape_volume(spec.boundary_shape(spec.blocks.size())), rng);
    }
    net.weights_.push_back(std::move(w));
  }
  if (config.head == HeadPolicy::Joint) {
    std::size_t width = 0;
    for (const auto& s : net.streams_) width += shape_volume(s.boundary_shape(s.blocks.size()));
    Rng rng(derive_seed(seed, 99));
    net.joint_head_ = fan_in_linear(classes, width, rng);
  }

  std::vector<std::size_t> last(n_streams, 0);
  for (std::size_t p = 0; p < config.plan.size(); ++p) {
    const FusionPointSpec& point = config.plan[p];
    if (point.after_block.size() != n_streams) {
      throw ConfigError("fusion point " + std::to_string(p) + " names " + std::to_string(point.after_block.size()) +
                        " streams, network has " + std::to_string(n_streams));
    }
    MmtmConfig mc;
    mc.bottleneck = config.bottleneck;
    mc.gate_mask = config.gate_mask;
    mc.relu_on_joint = config.relu_on_joint;
    mc.excitation_decay = config.excitation_decay;
    for (std::size_t s = 0; s < n_streams; ++s) {
      const std::size_t b = point.after_block[s];
      const std::size_t depth = net.streams_[s].blocks.size();
      if (b < 1 || b > depth) {
        throw ConfigError("fusion point " + std::to_string(p) + " references block " + std::to_string(b) +
                          " of stream '" + net.streams_[s].name + "', which has blocks 1.." + std::to_string(depth));
      }
      if (b <= last[s]) {
        throw ConfigError("fusion points must follow strictly increasing blocks in stream '" + net.streams_[s].name +
                          "'");
      }
      last[s] = b;
      mc.channel_counts.push_back(net.streams_[s].boundary_shape(b).back());
    }
    Rng rng(derive_seed(seed, 1000 + p));
    net.points_.push_back(FusionPoint::create(config.variant, std::move(mc), rng, config.init));
  }
  return net;
}

// ---- parameters ----------------------------------------------------------

std::vector<NamedTensor> FusionNetwork::parameters() {
  std::vector<NamedTensor> out;
  for (std::size_t s = 0; s < streams_.size(); ++s) {
    const std::string prefix = streams_[s].name;
    for (std::size_t b = 0; b < weights_[s].blocks.size(); ++b)
      append_linear(out, prefix + ".block" + std::to_string(b + 1), weights_[s].blocks[b]);
    if (config_.head == HeadPolicy::Late) append_linear(out, prefix + ".head", weights_[s].head);
  }
  for (std::size_t p = 0; p < points_.size(); ++p)
    points_[p].append_parameters(out, "fusion" + std::to_string(p + 1));
  if (config_.head == HeadPolicy::Joint) append_linear(out, "joint_head", joint_head_);
  return out;
}

std::vector<NamedConstTensor> FusionNetwork::parameters() const {
  std::vector<NamedConstTensor> out;
  for (std::size_t s = 0; s < streams_.size(); ++s) {
    const std::string prefix = streams_[s].name;
    for (std::size_t b = 0; b < weights_[s].blocks.size(); ++b)
      append_linear(out, prefix + ".block" + std::to_string(b + 1), weights_[s].blocks[b]);
    if (config_.head == HeadPolicy::Late) append_linear(out, prefix + ".head", weights_[s].head);
  }
  for (std::size_t p = 0; p < points_.size(); ++p)
    points_[p].append_parameters(out, "fusion" + std::to_string(p + 1));
  if (config_.head == HeadPolicy::Joint) append_linear(out, "joint_head", joint_head_);
  return out;
}

std::size_t FusionNetwork::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.tensor->size();
  return n;
}

FusionNetwork::Bound FusionNetwork::bind(Tape& tape, Binding binding) const {
  Bound b;
  auto keep = [&b](const BoundLinear& l) {
    b.all.push_back(l.weight);
    b.all.push_back(l.bias);
    return l;
  };
  for (std::size_t s = 0; s < streams_.size(); ++s) {
    std::vector<BoundLinear> blocks;
    for (const auto& w : weights_[s].blocks) blocks.push_back(keep(mmtm::bind(tape, w, binding)));
    b.blocks.push_back(std::move(blocks));
    b.heads.push_back(config_.head == HeadPolicy::Late ? keep(mmtm::bind(tape, weights_[s].head, binding))
                                                       : BoundLinear{});
  }
  for (const auto& p : points_) {
    auto bp = p.bind(tape, binding);
    for (const auto& l : bp.se) {
      keep(l.reduce);
      keep(l.expand);
    }
    if (p.kind() != FusionKind::SeLate) {
      keep(bp.mmtm.joint);
      for (const auto& h : bp.mmtm.heads) keep(h);
    }
    b.points.push_back(std::move(bp));
  }
  if (config_.head == HeadPolicy::Joint) b.joint_head = keep(mmtm::bind(tape, joint_head_, binding));
  return b;
}

// ---- forward -------------------------------------------------------------

Var FusionNetwork::run_block(std::size_t stream, std::size_t block, Var x, const Bound& bound) const {
  const BlockSpec& blk = streams_[stream].blocks[block];
  const BoundLinear& w = bound.blocks[stream][block];
  if (blk.kind == BlockKind::Conv) {
    Var y = relu(channelwise_add(w.bias, conv2d(x, w.weight, 1, Padding::Same)));
    return blk.pool ? mean_pool2d(y, 2) : y;
  }
  return relu(affine(w.weight, flatten(x), w.bias));
}

Var FusionNetwork::forward(Tape& tape, const Bound& bound, std::span<const Tensor> inputs,
                           ForwardTrace* trace) const {
  const std::size_t n_streams = streams_.size();
  std::vector<Var> cur(n_streams);
  if (config_.variant == FusionKind::Early) {
    std::vector<Var> raw;
    for (std::size_t s = 0; s < config_.streams.size(); ++s) {
      const std::size_t m = config_.modality_of(s);
      if (m >= inputs.size()) throw DimensionError("sample lacks modality " + std::to_string(m));
      if (inputs[m].shape() != config_.streams[s].input_shape) {
        throw DimensionError("stream '" + config_.streams[s].name + "' block 0: input " +
                             shape_to_string(inputs[m].shape()) + ", expected " +
                             shape_to_string(config_.streams[s].input_shape));
      }
      raw.push_back(tape.constant_ref(inputs[m]));
    }
    cur[0] = early_fuse(raw);
  } else {
    for (std::size_t s = 0; s < n_streams; ++s) {
      const std::size_t m = config_.modality_of(s);
      if (m >= inputs.size()) throw DimensionError("sample lacks modality " + std::to_string(m));
      if (inputs[m].shape() != streams_[s].input_shape) {
        throw DimensionError("stream '" + streams_[s].name + "' block 0: input " + shape_to_string(inputs[m].shape()) +
                             ", expected " + shape_to_string(streams_[s].input_shape));
      }
      cur[s] = tape.constant_ref(inputs[m]);
    }
  }
  if (trace) {
    trace->boundaries.assign(n_streams, {});
    trace->excitations.clear();
  }

  std::vector<std::size_t> done(n_streams, 0);
  auto advance = [&](std::size_t s, std::size_t until) {
    while (done[s] < until) {
      cur[s] = run_block(s, done[s], cur[s], bound);
      ++done[s];
      if (trace) trace->boundaries[s].push_back(cur[s]);
    }
  };
  std::vector<Var> excitations;
  for (std::size_t p = 0; p < points_.size(); ++p) {
    for (std::size_t s = 0; s < n_streams; ++s) advance(s, config_.plan[p].after_block[s]);
    cur = points_[p].forward(cur, bound.points[p], &excitations);
    if (trace)
      for (std::size_t s = 0; s < n_streams; ++s) trace->boundaries[s].back() = cur[s];
  }
  for (std::size_t s = 0; s < n_streams; ++s) advance(s, streams_[s].blocks.size());
  if (trace) trace->excitations = excitations;

  if (config_.head == HeadPolicy::Joint) {
    std::vector<Var> flat;
    for (auto& c : cur) flat.push_back(flatten(c));
    return affine(bound.joint_head.weight, concat_channels(flat), bound.joint_head.bias);
  }
  std::vector<Var> logits;
  for (std::size_t s = 0; s < n_streams; ++s)
    logits.push_back(affine(bound.heads[s].weight, flatten(cur[s]), bound.heads[s].bias));
  return logits.size() == 1 ? logits[0] : late_fuse(logits, config_.late_mode);
}

Tensor FusionNetwork::logits(std::span<const Tensor> inputs) const {
  Tape tape;
  const Bound bound = bind(tape, Binding::Frozen);
  return forward(tape, bound, inputs).value();
}

}  // namespace mmtm
