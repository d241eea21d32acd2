#include <gtest/gtest.h>

#include "mmtm/costs.hpp"
#include "mmtm/errors.hpp"
#include "mmtm/random.hpp"

namespace mmtm {
namespace {

MmtmConfig config_for(std::vector<std::size_t> channels) {
  MmtmConfig c;
  c.channel_counts = std::move(channels);
  return c;
}

TEST(Costs, HandExamples) {
  EXPECT_EQ(mmtm_parameter_count(config_for({4, 4})), 42u);
  EXPECT_EQ(linear_params(3, 5), 18u);
  EXPECT_EQ(linear_macs(3, 5), 15u);
  EXPECT_EQ(gating_macs({2, 2, 8}), 32u);
  EXPECT_EQ(conv_params(3, 2, 4), 76u);
  EXPECT_EQ(conv_macs(5, 5, 3, 2, 4), 25u * 72u);
}

TEST(Costs, MmtmMacsByHand) {
  // C_Z = 2: squeeze FC 8->2 (16), heads 2->4 twice (16), gating 2*2*4 + 4.
  const std::vector<Shape> shapes = {{2, 2, 4}, {4}};
  const ModuleMacs m = mmtm_macs(config_for({4, 4}), shapes);
  EXPECT_EQ(m.projection, 32u);
  EXPECT_EQ(m.gating, 20u);
  auto masked = config_for({4, 4});
  masked.gate_mask = {false, true};
  EXPECT_EQ(mmtm_macs(masked, shapes).gating, 4u);
}

TEST(Costs, ConvParamsEqualMmtmParams) {
  Rng rng(1);
  for (std::size_t trial = 0; trial < 10; ++trial) {
    const auto cfg = config_for({1 + rng() % 20, 1 + rng() % 20});
    Rng a(2), b(2), c(2);
    EXPECT_EQ(count_params(FusionPoint::create(FusionKind::ConvMmtm, cfg, a)),
              count_params(FusionPoint::create(FusionKind::Mmtm, cfg, b)));
    EXPECT_EQ(count_params(FusionPoint::create(FusionKind::ConvMmtmSum, cfg, c)),
              mmtm_parameter_count(cfg));
  }
}

TEST(Costs, ConvOverMmtmRatioIsLinearInPositions) {
  const auto cfg = config_for({16, 32});
  std::vector<double> ratios;
  for (std::size_t side : {2u, 4u, 8u}) {
    const std::vector<Shape> shapes = {{side, side, 16}, {side, side, 32}};
    const ModuleMacs m = mmtm_macs(cfg, shapes);
    const ModuleMacs c = conv_mmtm_macs(cfg, shapes, false);
    const std::uint64_t S = side * side;
    // Exact in integers for the projection part.
    EXPECT_EQ(c.projection, S * m.projection);
    EXPECT_EQ(c.gating, m.gating);
    ratios.push_back(static_cast<double>(c.total()) / static_cast<double>(m.total()));
  }
  EXPECT_LT(ratios[0], ratios[1]);
  EXPECT_LT(ratios[1], ratios[2]);
}

TEST(Costs, SumVariantHasNoGating) {
  const auto cfg = config_for({4, 4});
  const std::vector<Shape> shapes = {{3, 3, 4}, {3, 3, 4}};
  EXPECT_EQ(conv_mmtm_macs(cfg, shapes, true).gating, 0u);
  EXPECT_EQ(conv_mmtm_macs(cfg, shapes, true).projection, conv_mmtm_macs(cfg, shapes, false).projection);
}

TEST(Costs, ConvOnUnalignedShapesIsDimensionError) {
  const std::vector<Shape> shapes = {{3, 3, 4}, {4}};
  try {
    conv_mmtm_macs(config_for({4, 4}), shapes, false);
    FAIL();
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("unaligned spatial dimensions"), std::string::npos);
  }
}

TEST(Costs, SeMacs) {
  // r = 2: 8->2 and 2->8 FCs, 2*2*8 gating.
  const ModuleMacs m = se_macs({2, 2, 8});
  EXPECT_EQ(m.projection, 32u);
  EXPECT_EQ(m.gating, 32u);
}

// ---- network reports ----

NetworkConfig aligned_config(FusionKind kind, std::size_t points) {
  NetworkConfig c;
  c.streams = {default_stream_spec("m0", {12, 12, 1}, 4), default_stream_spec("m1", {12, 12, 1}, 4)};
  c.variant = kind;
  if (kind != FusionKind::Late && kind != FusionKind::Early) c.plan = suffix_plan(c.streams, points);
  return c;
}

CostReport report_for(FusionKind kind, std::size_t points = 2) {
  return report(FusionNetwork::build(aligned_config(kind, points), 1));
}

TEST(CostReport, LateHasNoFusionRows) {
  for (const auto& r : report_for(FusionKind::Late).rows) EXPECT_EQ(r.name.find("fusion"), std::string::npos);
}

TEST(CostReport, AddingMmtmIncreasesBothTotals) {
  const auto late = report_for(FusionKind::Late);
  const auto one = report_for(FusionKind::Mmtm, 1);
  const auto two = report_for(FusionKind::Mmtm, 2);
  EXPECT_LT(late.total_params(), one.total_params());
  EXPECT_LT(one.total_params(), two.total_params());
  EXPECT_LT(late.total_macs(), one.total_macs());
  EXPECT_LT(one.total_macs(), two.total_macs());
}

TEST(CostReport, TotalsAreSumsOfComponents) {
  const auto net = FusionNetwork::build(aligned_config(FusionKind::ConvMmtm, 2), 1);
  const auto rep = report(net);
  std::uint64_t fusion = 0;
  std::uint64_t rest = 0;
  for (const auto& r : rep.rows) (r.name.starts_with("fusion") ? fusion : rest) += r.params;
  std::uint64_t points = 0;
  for (const auto& p : net.points()) points += count_params(p);
  EXPECT_EQ(fusion, points);
  EXPECT_EQ(rep.total_params(), fusion + rest);
  EXPECT_EQ(rep.total_params(), net.parameter_count());
}

TEST(CostReport, ParamsMatchNetworkForEveryVariant) {
  for (auto kind : all_fusion_kinds()) {
    const auto net = FusionNetwork::build(aligned_config(kind, 2), 1);
    EXPECT_EQ(report(net).total_params(), net.parameter_count()) << fusion_kind_name(kind);
  }
}

TEST(CostReport, Orderings) {
  const auto early = report_for(FusionKind::Early);
  const auto late = report_for(FusionKind::Late);
  EXPECT_LT(early.total_params(), late.total_params());
  for (auto kind : {FusionKind::Mmtm, FusionKind::ConvMmtm, FusionKind::ConvMmtmSum, FusionKind::SeLate})
    EXPECT_LT(late.total_params(), report_for(kind).total_params()) << fusion_kind_name(kind);
  EXPECT_EQ(report_for(FusionKind::Mmtm).total_params(), report_for(FusionKind::ConvMmtm).total_params());
  EXPECT_GT(report_for(FusionKind::ConvMmtm).total_macs(), report_for(FusionKind::Mmtm).total_macs());
}

TEST(CostReport, Csv) {
  const auto csv = report_for(FusionKind::Mmtm, 1).to_csv();
  EXPECT_TRUE(csv.starts_with("component,params,macs\nm0.block1,80,"));
  EXPECT_NE(csv.find("\nfusion1.mmtm,"), std::string::npos);
  EXPECT_NE(csv.find("\ntotal,"), std::string::npos);
  EXPECT_EQ(csv.back(), '\n');
}

}  // namespace
}  // namespace mmtm
