#include "mmtm/linear.hpp"

#include <cmath>

namespace mmtm {

Var bind_tensor(Tape& tape, const Tensor& t, Binding binding) {
  return binding == Binding::Trainable ? tape.parameter(t) : tape.constant_ref(t);
}

Linear fan_in_linear(std::size_t out, std::size_t in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  return Linear{random_uniform({out, in}, -bound, bound, rng), Tensor({out}, 0.0)};
}

Linear zero_linear(std::size_t out, std::size_t in) { return Linear{Tensor({out, in}, 0.0), Tensor({out}, 0.0)}; }

BoundLinear bind(Tape& tape, const Linear& layer, Binding binding) {
  return BoundLinear{bind_tensor(tape, layer.weight, binding), bind_tensor(tape, layer.bias, binding)};
}

void append_linear(std::vector<NamedTensor>& out, const std::string& prefix, Linear& layer) {
  out.push_back({prefix + ".weight", &layer.weight});
  out.push_back({prefix + ".bias", &layer.bias});
}

void append_linear(std::vector<NamedConstTensor>& out, const std::string& prefix, const Linear& layer) {
  out.push_back({prefix + ".weight", &layer.weight});
  out.push_back({prefix + ".bias", &layer.bias});
}

}  // namespace mmtm
