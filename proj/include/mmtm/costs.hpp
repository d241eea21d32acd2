#pragma once

// Exact parameter and multiply-accumulate counts.
//
// One MAC is one multiply (fused with its add). Convolutions count
// k*k*Cin*Cout per output position including zero-padded taps; ReLU, pooling,
// bias and residual additions count zero; gating counts one multiply per
// gated activation element.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mmtm/fusion.hpp"
#include "mmtm/mmtm.hpp"
#include "mmtm/network.hpp"

namespace mmtm {

struct CostRow {
  std::string name;
  std::uint64_t params = 0;
  std::uint64_t macs = 0;
};

struct CostReport {
  std::vector<CostRow> rows;

  std::uint64_t total_params() const;
  std::uint64_t total_macs() const;
  // Header "component,params,macs", one line per row, then a "total" line.
  std::string to_csv() const;
};

std::uint64_t linear_params(std::uint64_t out, std::uint64_t in);
std::uint64_t linear_macs(std::uint64_t out, std::uint64_t in);
std::uint64_t conv_params(std::uint64_t kernel, std::uint64_t cin, std::uint64_t cout);
std::uint64_t conv_macs(std::uint64_t out_h, std::uint64_t out_w, std::uint64_t kernel, std::uint64_t cin,
                        std::uint64_t cout);
std::uint64_t gating_macs(const Shape& feature_shape);

struct ModuleMacs {
  std::uint64_t projection = 0;  // fully-connected or 1x1 layers
  std::uint64_t gating = 0;

  std::uint64_t total() const { return projection + gating; }
};

ModuleMacs mmtm_macs(const MmtmConfig& config, std::span<const Shape> feature_shapes);
// Throws DimensionError on unaligned spatial shapes.
ModuleMacs conv_mmtm_macs(const MmtmConfig& config, std::span<const Shape> feature_shapes, bool use_sum);
ModuleMacs se_macs(const Shape& feature_shape);

std::uint64_t count_params(const FusionPoint& point);
std::uint64_t count_macs(const FusionPoint& point, std::span<const Shape> feature_shapes);

// Rows: every block and head of every stream, then every fusion point.
CostReport report(const FusionNetwork& net);

}  // namespace mmtm
