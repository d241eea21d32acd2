#pragma once

#include <cstdint>
#include <random>

#include "mmtm/tensor.hpp"

namespace mmtm {

using Rng = std::mt19937_64;

// Mixes a base seed with a stream tag so that separate consumers (weight init,
// data order, data generation) draw from unrelated sequences.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

Tensor random_uniform(Shape shape, double lo, double hi, Rng& rng);
Tensor random_normal(Shape shape, double mean, double stddev, Rng& rng);

}  // namespace mmtm
