#pragma once

// Finite-difference verification of the analytic gradients of a whole
// network (loss including the excitation penalty) for every fusion variant.

#include <cstddef>
#include <string>
#include <vector>

#include "mmtm/fusion.hpp"
#include "mmtm/network.hpp"
#include "mmtm/synthdata.hpp"

namespace mmtm {

inline constexpr double kGradcheckTolerance = 1e-5;
inline constexpr double kGradcheckEpsilon = 1e-5;

// |analytic - numeric| / max(1, |numeric|)
double gradcheck_relative_error(double analytic, double numeric);

struct GradcheckResult {
  std::string variant;
  std::size_t parameters = 0;  // scalar parameters checked
  double max_error = 0.0;
  std::string worst_parameter;  // "name[flat index]"

  bool passed() const { return max_error < kGradcheckTolerance; }
};

// Central differences over every scalar parameter of `net` for the mean batch
// loss on `samples`.
GradcheckResult gradcheck_network(FusionNetwork& net, const std::vector<Sample>& samples, double excitation_decay);

// Builds a small randomly initialised two-stream network for `kind` and checks it.
GradcheckResult gradcheck_variant(FusionKind kind, std::uint64_t seed = 7);
std::vector<GradcheckResult> gradcheck_all(std::uint64_t seed = 7);

}  // namespace mmtm
