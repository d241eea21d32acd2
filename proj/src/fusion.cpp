#include "mmtm/fusion.hpp"

#include <algorithm>
#include <array>

#include "mmtm/errors.hpp"

namespace mmtm {

namespace {
constexpr std::array kKinds{FusionKind::Mmtm,   FusionKind::Early,    FusionKind::Late,
                            FusionKind::SeLate, FusionKind::ConvMmtm, FusionKind::ConvMmtmSum};
}

std::span<const FusionKind> all_fusion_kinds() { return kKinds; }

std::string_view fusion_kind_name(FusionKind kind) {
  switch (kind) {
    case FusionKind::Mmtm: return "mmtm";
    case FusionKind::Early: return "early";
    case FusionKind::Late: return "late";
    case FusionKind::SeLate: return "se_late";
    case FusionKind::ConvMmtm: return "conv_mmtm";
    case FusionKind::ConvMmtmSum: return "conv_mmtm_sum";
  }
  return "?";
}

FusionKind parse_fusion_kind(std::string_view name) {
  for (auto k : kKinds)
    if (fusion_kind_name(k) == name) return k;
  std::string valid;
  for (auto k : kKinds) {
    if (!valid.empty()) valid += ", ";
    valid += fusion_kind_name(k);
  }
  throw UsageError("unknown fusion variant '" + std::string(name) + "'; valid names: " + valid);
}

bool uses_fusion_points(FusionKind kind) { return kind != FusionKind::Early && kind != FusionKind::Late; }

// ---- SE ----

std::size_t se_bottleneck(std::size_t channels) { return std::max<std::size_t>(1, channels / 4); }

std::size_t se_parameter_count(std::size_t channels) {
  const std::size_t r = se_bottleneck(channels);
  return r * channels + r + channels * r + channels;
}

SeState init_se_state(std::size_t channels, Rng& rng) {
  const std::size_t r = se_bottleneck(channels);
  return SeState{fan_in_linear(r, channels, rng), fan_in_linear(channels, r, rng)};
}

BoundSe bind(Tape& tape, const SeState& state, Binding binding) {
  return BoundSe{bind(tape, state.reduce, binding), bind(tape, state.expand, binding)};
}

Var se_forward(Var feature, const BoundSe& state) {
  const std::size_t c = feature.value().channels();
  if (state.reduce.weight.value().shape()[1] != c) {
    throw DimensionError("se_forward: features " + shape_to_string(feature.shape()) + " vs SE weight " +
                         shape_to_string(state.reduce.weight.shape()));
  }
  Var s = mean_over_non_channel(feature);
  Var hidden = relu(affine(state.reduce.weight, s, state.reduce.bias));
  Var g = sigmoid(affine(state.expand.weight, hidden, state.expand.bias));
  return channelwise_mul(g, feature);
}

// ---- convolutional MMTM ----

std::vector<Var> conv_mmtm_forward(std::span<const Var> features, const MmtmConfig& config, const BoundMmtm& state,
                                   bool use_sum, std::vector<Var>* excitations) {
  config.validate();
  if (features.size() != config.modalities()) {
    throw DimensionError("conv MMTM expects " + std::to_string(config.modalities()) + " modalities, got " +
                         std::to_string(features.size()));
  }
  const Shape spatial = features[0].value().spatial_shape();
  for (std::size_t m = 0; m < features.size(); ++m) {
    const Tensor& f = features[m].value();
    if (f.spatial_shape() != spatial) {
      throw DimensionError("conv MMTM: unaligned spatial dimensions, modality 0 is " +
                           shape_to_string(features[0].shape()) + " and modality " + std::to_string(m) + " is " +
                           shape_to_string(f.shape()));
    }
    if (f.channels() != config.channel_counts[m]) {
      throw DimensionError("modality " + std::to_string(m) + " has shape " + shape_to_string(f.shape()) + " but " +
                           std::to_string(config.channel_counts[m]) + " channels are configured");
    }
  }
  Var z = pointwise_affine(concat_channels(features), state.joint.weight, state.joint.bias);
  if (config.relu_on_joint) z = relu(z);
  std::vector<Var> out;
  for (std::size_t m = 0; m < features.size(); ++m) {
    Var e = pointwise_affine(z, state.heads[m].weight, state.heads[m].bias);
    if (excitations) excitations->push_back(e);
    if (!config.gated(m)) {
      out.push_back(features[m]);
    } else if (use_sum) {
      out.push_back(add(features[m], e));
    } else {
      out.push_back(mul(scale(sigmoid(e), 2.0), features[m]));
    }
  }
  return out;
}

// ---- early / late ----

Var late_fuse(std::span<const Var> logits, LateMode mode) {
  if (logits.empty()) throw UsageError("late_fuse: no streams");
  const Shape& shape = logits[0].shape();
  for (const auto& l : logits) {
    if (l.value().rank() != 1 || l.shape() != shape) {
      throw DimensionError("late_fuse: score vectors differ, " + shape_to_string(shape) + " vs " +
                           shape_to_string(l.shape()));
    }
  }
  if (mode == LateMode::Logits) return mean_of(logits);
  std::vector<Var> probs;
  for (const auto& l : logits) probs.push_back(softmax(l));
  return log(mean_of(probs));
}

Var early_fuse(std::span<const Var> inputs) {
  if (inputs.empty()) throw UsageError("early_fuse: no inputs");
  const Shape spatial = inputs[0].value().spatial_shape();
  for (const auto& v : inputs) {
    if (v.value().spatial_shape() != spatial) {
      throw DimensionError("early fusion: unaligned spatial dimensions, " + shape_to_string(inputs[0].shape()) +
                           " vs " + shape_to_string(v.shape()));
    }
  }
  return concat_channels(inputs);
}

// ---- FusionPoint ----

FusionPoint FusionPoint::create(FusionKind kind, MmtmConfig config, Rng& rng, MmtmInit init) {
  if (!uses_fusion_points(kind)) {
    throw ConfigError(std::string(fusion_kind_name(kind)) + " fusion has no intermediate fusion points");
  }
  config.validate();
  FusionPoint p;
  p.kind_ = kind;
  p.config_ = std::move(config);
  if (kind == FusionKind::SeLate) {
    for (auto c : p.config_.channel_counts) p.se_.push_back(init_se_state(c, rng));
  } else {
    p.mmtm_ = init_mmtm_state(p.config_, rng, init);
  }
  return p;
}

std::size_t FusionPoint::parameter_count() const {
  if (kind_ == FusionKind::SeLate) {
    std::size_t n = 0;
    for (const auto& s : se_) n += s.parameter_count();
    return n;
  }
  return mmtm_.parameter_count();
}

void FusionPoint::append_parameters(std::vector<NamedTensor>& out, const std::string& prefix) {
  if (kind_ == FusionKind::SeLate) {
    for (std::size_t m = 0; m < se_.size(); ++m) {
      append_linear(out, prefix + ".se" + std::to_string(m) + ".reduce", se_[m].reduce);
      append_linear(out, prefix + ".se" + std::to_string(m) + ".expand", se_[m].expand);
    }
    return;
  }
  append_linear(out, prefix + ".joint", mmtm_.joint);
  for (std::size_t m = 0; m < mmtm_.heads.size(); ++m)
    append_linear(out, prefix + ".excite" + std::to_string(m), mmtm_.heads[m]);
}

void FusionPoint::append_parameters(std::vector<NamedConstTensor>& out, const std::string& prefix) const {
  if (kind_ == FusionKind::SeLate) {
    for (std::size_t m = 0; m < se_.size(); ++m) {
      append_linear(out, prefix + ".se" + std::to_string(m) + ".reduce", se_[m].reduce);
      append_linear(out, prefix + ".se" + std::to_string(m) + ".expand", se_[m].expand);
    }
    return;
  }
  append_linear(out, prefix + ".joint", mmtm_.joint);
  for (std::size_t m = 0; m < mmtm_.heads.size(); ++m)
    append_linear(out, prefix + ".excite" + std::to_string(m), mmtm_.heads[m]);
}

FusionPoint::Bound FusionPoint::bind(Tape& tape, Binding binding) const {
  Bound b;
  if (kind_ == FusionKind::SeLate) {
    for (const auto& s : se_) b.se.push_back(mmtm::bind(tape, s, binding));
  } else {
    b.mmtm = mmtm::bind(tape, mmtm_, binding);
  }
  return b;
}

std::vector<Var> FusionPoint::forward(std::span<const Var> features, const Bound& bound,
                                      std::vector<Var>* excitations) const {
  switch (kind_) {
    case FusionKind::Mmtm: {
      auto r = mmtm_forward(features, config_, bound.mmtm);
      if (excitations) excitations->insert(excitations->end(), r.excitations.begin(), r.excitations.end());
      return std::move(r.outputs);
    }
    case FusionKind::ConvMmtm:
    case FusionKind::ConvMmtmSum:
      return conv_mmtm_forward(features, config_, bound.mmtm, kind_ == FusionKind::ConvMmtmSum, excitations);
    case FusionKind::SeLate: {
      if (features.size() != se_.size()) {
        throw DimensionError("SE fusion point expects " + std::to_string(se_.size()) + " streams, got " +
                             std::to_string(features.size()));
      }
      std::vector<Var> out;
      for (std::size_t m = 0; m < features.size(); ++m) out.push_back(se_forward(features[m], bound.se[m]));
      return out;
    }
    default:
      throw ConfigError("fusion point of kind " + std::string(fusion_kind_name(kind_)));
  }
}

}  // namespace mmtm
