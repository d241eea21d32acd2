#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "mmtm/autodiff.hpp"
#include "mmtm/random.hpp"

namespace mmtm {

// How parameters enter a tape: as differentiable leaves or as constants.
enum class Binding { Trainable, Frozen };

Var bind_tensor(Tape& tape, const Tensor& t, Binding binding);

// Fully-connected layer: weight [out, in], bias [out].
struct Linear {
  Tensor weight;
  Tensor bias;

  std::size_t in_features() const { return weight.shape()[1]; }
  std::size_t out_features() const { return weight.shape()[0]; }
  std::size_t parameter_count() const { return weight.size() + bias.size(); }
};

struct BoundLinear {
  Var weight;
  Var bias;
};

// Weights uniform in +-1/sqrt(in), zero bias.
Linear fan_in_linear(std::size_t out, std::size_t in, Rng& rng);
Linear zero_linear(std::size_t out, std::size_t in);

BoundLinear bind(Tape& tape, const Linear& layer, Binding binding);

// Name and storage of one learnable tensor, listed in declaration order.
struct NamedTensor {
  std::string name;
  Tensor* tensor;
};

struct NamedConstTensor {
  std::string name;
  const Tensor* tensor;
};

void append_linear(std::vector<NamedTensor>& out, const std::string& prefix, Linear& layer);
void append_linear(std::vector<NamedConstTensor>& out, const std::string& prefix, const Linear& layer);

}  // namespace mmtm
