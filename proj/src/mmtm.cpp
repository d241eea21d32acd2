#include "mmtm/mmtm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "mmtm/errors.hpp"

namespace mmtm {

std::size_t default_bottleneck(std::span<const std::size_t> channel_counts) {
  const std::size_t total = std::accumulate(channel_counts.begin(), channel_counts.end(), std::size_t{0});
  return std::max<std::size_t>(1, total / 4);
}

std::size_t MmtmConfig::total_channels() const {
  return std::accumulate(channel_counts.begin(), channel_counts.end(), std::size_t{0});
}

std::size_t MmtmConfig::bottleneck_size() const {
  return bottleneck ? bottleneck : default_bottleneck(channel_counts);
}

bool MmtmConfig::gated(std::size_t modality) const { return gate_mask.empty() || gate_mask.at(modality); }

void MmtmConfig::validate() const {
  if (channel_counts.size() < 2) {
    throw ConfigError("MMTM needs at least 2 modalities, got " + std::to_string(channel_counts.size()));
  }
  for (std::size_t m = 0; m < channel_counts.size(); ++m) {
    if (channel_counts[m] == 0) throw ConfigError("modality " + std::to_string(m) + " has zero channels");
  }
  if (!gate_mask.empty() && gate_mask.size() != channel_counts.size()) {
    throw ConfigError("gate_mask has " + std::to_string(gate_mask.size()) + " entries for " +
                      std::to_string(channel_counts.size()) + " modalities");
  }
  if (excitation_decay < 0.0) throw ConfigError("excitation_decay must be non-negative");
}

std::size_t mmtm_parameter_count(const MmtmConfig& config) {
  const std::size_t cz = config.bottleneck_size();
  const std::size_t total = config.total_channels();
  std::size_t count = cz * total + cz;
  for (auto c : config.channel_counts) count += c * cz + c;
  return count;
}

std::size_t MmtmState::parameter_count() const {
  std::size_t n = joint.parameter_count();
  for (const auto& h : heads) n += h.parameter_count();
  return n;
}

void MmtmState::check(const MmtmConfig& config) const {
  const std::size_t cz = config.bottleneck_size();
  const Shape joint_shape{cz, config.total_channels()};
  if (joint.weight.shape() != joint_shape || joint.bias.shape() != Shape{cz}) {
    throw ConfigError("MMTM joint layer " + shape_to_string(joint.weight.shape()) + " does not match config " +
                      shape_to_string(joint_shape));
  }
  if (heads.size() != config.modalities()) {
    throw ConfigError("MMTM state has " + std::to_string(heads.size()) + " excitation heads for " +
                      std::to_string(config.modalities()) + " modalities");
  }
  for (std::size_t m = 0; m < heads.size(); ++m) {
    const std::size_t c = config.channel_counts[m];
    if (heads[m].weight.shape() != Shape{c, cz} || heads[m].bias.shape() != Shape{c}) {
      throw ConfigError("MMTM head " + std::to_string(m) + " has shape " + shape_to_string(heads[m].weight.shape()) +
                        ", expected " + shape_to_string({c, cz}));
    }
  }
}

MmtmState init_mmtm_state(const MmtmConfig& config, Rng& rng, MmtmInit init) {
  config.validate();
  const std::size_t cz = config.bottleneck_size();
  MmtmState state;
  state.joint = fan_in_linear(cz, config.total_channels(), rng);
  for (auto c : config.channel_counts) {
    state.heads.push_back(init == MmtmInit::ZeroHeads ? zero_linear(c, cz) : fan_in_linear(c, cz, rng));
  }
  if (init == MmtmInit::FullyRandom) {
    const double bz = 1.0 / std::sqrt(static_cast<double>(config.total_channels()));
    state.joint.bias = random_uniform({cz}, -bz, bz, rng);
    const double bh = 1.0 / std::sqrt(static_cast<double>(cz));
    for (auto& h : state.heads) h.bias = random_uniform(h.bias.shape(), -bh, bh, rng);
  }
  return state;
}

BoundMmtm bind(Tape& tape, const MmtmState& state, Binding binding) {
  BoundMmtm b{bind(tape, state.joint, binding), {}};
  for (const auto& h : state.heads) b.heads.push_back(bind(tape, h, binding));
  return b;
}

std::vector<Var> squeeze(std::span<const Var> features, const MmtmConfig& config) {
  if (features.size() != config.modalities()) {
    throw DimensionError("MMTM expects " + std::to_string(config.modalities()) + " modalities, got " +
                         std::to_string(features.size()));
  }
  std::vector<Var> out;
  out.reserve(features.size());
  for (std::size_t m = 0; m < features.size(); ++m) {
    const Tensor& f = features[m].value();
    if (f.channels() != config.channel_counts[m]) {
      throw DimensionError("modality " + std::to_string(m) + " has shape " + shape_to_string(f.shape()) + " but " +
                           std::to_string(config.channel_counts[m]) + " channels are configured");
    }
    out.push_back(mean_over_non_channel(features[m]));
  }
  return out;
}

Var joint(std::span<const Var> squeezed, const MmtmConfig& config, const BoundMmtm& state) {
  Var cat = concat_channels(squeezed);
  if (cat.value().size() != config.total_channels() ||
      state.joint.weight.value().shape() != Shape{config.bottleneck_size(), config.total_channels()}) {
    throw ConfigError("MMTM joint layer " + shape_to_string(state.joint.weight.shape()) +
                      " does not accept squeezed width " + std::to_string(cat.value().size()));
  }
  Var z = affine(state.joint.weight, cat, state.joint.bias);
  return config.relu_on_joint ? relu(z) : z;
}

std::vector<Var> excite(Var z, const MmtmConfig& config, const BoundMmtm& state) {
  if (z.value().size() != config.bottleneck_size()) {
    throw ConfigError("joint embedding has " + std::to_string(z.value().size()) + " entries, bottleneck is " +
                      std::to_string(config.bottleneck_size()));
  }
  if (state.heads.size() != config.modalities()) {
    throw ConfigError("MMTM state has " + std::to_string(state.heads.size()) + " excitation heads for " +
                      std::to_string(config.modalities()) + " modalities");
  }
  std::vector<Var> out;
  out.reserve(state.heads.size());
  for (const auto& head : state.heads) out.push_back(affine(head.weight, z, head.bias));
  return out;
}

Var gate_coefficients(Var excitation) { return scale(sigmoid(excitation), 2.0); }

std::vector<Var> gate(std::span<const Var> features, std::span<const Var> excitations, const MmtmConfig& config) {
  if (features.size() != excitations.size()) {
    throw DimensionError("gate: " + std::to_string(features.size()) + " feature tensors but " +
                         std::to_string(excitations.size()) + " excitations");
  }
  std::vector<Var> out;
  out.reserve(features.size());
  for (std::size_t m = 0; m < features.size(); ++m) {
    if (excitations[m].value().size() != features[m].value().channels()) {
      throw DimensionError("gate: modality " + std::to_string(m) + " excitation " +
                           shape_to_string(excitations[m].shape()) + " vs features " +
                           shape_to_string(features[m].shape()));
    }
    out.push_back(config.gated(m) ? channelwise_mul(gate_coefficients(excitations[m]), features[m]) : features[m]);
  }
  return out;
}

MmtmResult mmtm_forward(std::span<const Var> features, const MmtmConfig& config, const BoundMmtm& state) {
  config.validate();
  const auto squeezed = squeeze(features, config);
  Var z = joint(squeezed, config, state);
  auto excitations = excite(z, config, state);
  auto outputs = gate(features, excitations, config);
  return MmtmResult{std::move(outputs), std::move(excitations)};
}

Var excitation_penalty(std::span<const Var> excitations, double lambda) {
  if (lambda < 0.0) throw DomainError("excitation penalty weight must be non-negative");
  if (excitations.empty()) throw UsageError("excitation_penalty: no excitations");
  Var total = sum_squares(excitations[0]);
  for (std::size_t m = 1; m < excitations.size(); ++m) total = add(total, sum_squares(excitations[m]));
  return scale(total, lambda);
}

}  // namespace mmtm
