#include "mmtm/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "mmtm/trainer.hpp"

namespace mmtm {

double gradcheck_relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1.0, std::abs(numeric));
}

namespace {

double loss_value(const FusionNetwork& net, const std::vector<const Sample*>& batch, double decay) {
  Tape tape;
  const auto bound = net.bind(tape, Binding::Frozen);
  return batch_loss(net, tape, bound, batch, decay).value()[0];
}

}  // namespace

GradcheckResult gradcheck_network(FusionNetwork& net, const std::vector<Sample>& samples, double excitation_decay) {
  std::vector<const Sample*> batch;
  for (const auto& s : samples) batch.push_back(&s);

  Tape tape;
  const auto bound = net.bind(tape, Binding::Trainable);
  const Var loss = batch_loss(net, tape, bound, batch, excitation_decay);
  tape.backward(loss);

  GradcheckResult result;
  auto params = net.parameters();
  for (std::size_t p = 0; p < params.size(); ++p) {
    const Tensor grad = tape.grad(bound.all[p]);
    auto values = params[p].tensor->data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + kGradcheckEpsilon;
      const double up = loss_value(net, batch, excitation_decay);
      values[i] = saved - kGradcheckEpsilon;
      const double down = loss_value(net, batch, excitation_decay);
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * kGradcheckEpsilon);
      const double err = gradcheck_relative_error(grad.data()[i], numeric);
      ++result.parameters;
      if (err > result.max_error || result.worst_parameter.empty()) {
        result.max_error = std::max(result.max_error, err);
        result.worst_parameter = params[p].name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return result;
}

GradcheckResult gradcheck_variant(FusionKind kind, std::uint64_t seed) {
  const bool aligned = kind == FusionKind::Early || kind == FusionKind::ConvMmtm || kind == FusionKind::ConvMmtmSum;

  SyntheticTaskSpec task;
  task.num_classes = 4;
  task.modality_shapes = aligned ? std::vector<Shape>{{6, 6, 1}, {6, 6, 1}} : std::vector<Shape>{{6, 6, 1}, {8}};
  task.train_size = 3;
  task.val_size = 1;
  task.test_size = 1;
  task.seed = seed;
  const Dataset data = generate(task);

  NetworkConfig config;
  for (std::size_t m = 0; m < task.modality_shapes.size(); ++m) {
    StreamSpec s;
    s.name = "m" + std::to_string(m);
    s.input_shape = task.modality_shapes[m];
    s.num_classes = task.num_classes;
    if (s.input_shape.size() == 3) {
      s.blocks = {{BlockKind::Conv, 4, 3, true}, {BlockKind::Conv, 8, 3, false}};
    } else {
      s.blocks = {{BlockKind::Dense, 8, 3, false}, {BlockKind::Dense, 8, 3, false}};
    }
    config.streams.push_back(std::move(s));
  }
  config.variant = kind;
  if (uses_fusion_points(kind)) config.plan = suffix_plan(config.streams, 2);
  config.init = MmtmInit::FullyRandom;
  config.excitation_decay = 0.1;

  FusionNetwork net = FusionNetwork::build(config, seed);
  GradcheckResult r = gradcheck_network(net, data.train, config.excitation_decay);
  r.variant = std::string(fusion_kind_name(kind));
  return r;
}

std::vector<GradcheckResult> gradcheck_all(std::uint64_t seed) {
  std::vector<GradcheckResult> out;
  for (auto kind : all_fusion_kinds()) out.push_back(gradcheck_variant(kind, seed));
  return out;
}

}  // namespace mmtm
