#include <gtest/gtest.h>

#include <cmath>

#include "mmtm/errors.hpp"
#include "mmtm/fusion.hpp"
#include "test_util.hpp"

namespace mmtm {
namespace {

using testing::max_fd_error;
using testing::rand_tensor;
using testing::weighted_sum;

MmtmConfig config_for(std::vector<std::size_t> channels) {
  MmtmConfig c;
  c.channel_counts = std::move(channels);
  return c;
}

std::vector<Var> constants(Tape& t, const std::vector<Tensor>& xs) {
  std::vector<Var> out;
  for (const auto& x : xs) out.push_back(t.constant(x));
  return out;
}

// ---- names ----

TEST(FusionKind, NamesRoundTrip) {
  for (auto k : all_fusion_kinds()) EXPECT_EQ(parse_fusion_kind(fusion_kind_name(k)), k);
  EXPECT_EQ(all_fusion_kinds().size(), 6u);
  EXPECT_EQ(fusion_kind_name(FusionKind::ConvMmtmSum), "conv_mmtm_sum");
}

TEST(FusionKind, UnknownNameListsValidOnes) {
  try {
    parse_fusion_kind("gmu");
    FAIL();
  } catch (const UsageError& e) {
    const std::string msg = e.what();
    for (auto k : all_fusion_kinds()) EXPECT_NE(msg.find(fusion_kind_name(k)), std::string::npos) << msg;
  }
}

// ---- SE ----

TEST(Se, ZeroedExpandHalvesInput) {
  Rng rng(1);
  SeState st = init_se_state(8, rng);
  st.expand.weight = Tensor(st.expand.weight.shape(), 0.0);
  st.expand.bias = Tensor(st.expand.bias.shape(), 0.0);
  const Tensor x = rand_tensor({3, 3, 8}, rng);
  Tape t;
  const Tensor y = se_forward(t.constant(x), bind(t, st, Binding::Frozen)).value();
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_DOUBLE_EQ(y[i], x[i] / 2.0);
}

TEST(Se, ConstantChannelInputMatchesHandMatvecs) {
  Rng rng(2);
  const SeState st = init_se_state(4, rng);
  Tensor x({2, 2, 4});
  const double vals[4] = {0.5, -1.0, 2.0, 0.25};
  for (std::size_t p = 0; p < 4; ++p)
    for (std::size_t c = 0; c < 4; ++c) x[p * 4 + c] = vals[c];
  // reduce: 1x4, expand: 4x1.
  double h = st.reduce.bias[0];
  for (std::size_t c = 0; c < 4; ++c) h += st.reduce.weight[c] * vals[c];
  h = std::max(0.0, h);
  Tape t;
  const Tensor y = se_forward(t.constant(x), bind(t, st, Binding::Frozen)).value();
  for (std::size_t c = 0; c < 4; ++c) {
    const double g = 1.0 / (1.0 + std::exp(-(st.expand.weight[c] * h + st.expand.bias[c])));
    EXPECT_NEAR(y[c], g * vals[c], 1e-15);
  }
}

TEST(Se, GateInUnitInterval) {
  Rng rng(3);
  const SeState st = init_se_state(8, rng);
  const Tensor x = rand_tensor({2, 2, 8}, rng, 0.1, 2.0);
  Tape t;
  const Tensor y = se_forward(t.constant(x), bind(t, st, Binding::Frozen)).value();
  for (std::size_t i = 0; i < x.size(); ++i) {
    EXPECT_GT(y[i] / x[i], 0.0);
    EXPECT_LT(y[i] / x[i], 1.0);
  }
}

TEST(Se, FiniteDifferenceCheck) {
  Rng rng(4);
  const SeState st = init_se_state(8, rng);
  const testing::ScalarFn f = [](Tape& t, const std::vector<Var>& v) {
    return weighted_sum(t, se_forward(v[0], BoundSe{{v[1], v[2]}, {v[3], v[4]}}));
  };
  EXPECT_LT(max_fd_error(f, {rand_tensor({3, 2, 8}, rng), st.reduce.weight, rand_tensor({2}, rng, 0.2, 0.5),
                             st.expand.weight, st.expand.bias}),
            1e-5);
}

TEST(Se, ChannelMismatchIsDimensionError) {
  Rng rng(5);
  const SeState st = init_se_state(8, rng);
  Tape t;
  EXPECT_THROW(se_forward(t.constant(Tensor({2, 2, 4})), bind(t, st, Binding::Frozen)), DimensionError);
}

// ---- conv MMTM ----

TEST(ConvMmtm, SpatiallyConstantInputsMatchMmtm) {
  Rng rng(6);
  auto cfg = config_for({3, 5});
  const MmtmState st = init_mmtm_state(cfg, rng, MmtmInit::FullyRandom);
  const Tensor c0 = rand_tensor({3}, rng), c1 = rand_tensor({5}, rng);
  Tensor a({4, 4, 3}), b({4, 4, 5});
  for (std::size_t p = 0; p < 16; ++p) {
    for (std::size_t c = 0; c < 3; ++c) a[p * 3 + c] = c0[c];
    for (std::size_t c = 0; c < 5; ++c) b[p * 5 + c] = c1[c];
  }
  Tape t;
  const auto bound = bind(t, st, Binding::Frozen);
  const auto ref = mmtm_forward(constants(t, {a, b}), cfg, bound);
  const auto conv = conv_mmtm_forward(constants(t, {a, b}), cfg, bound, false);
  for (std::size_t m = 0; m < 2; ++m) {
    const Tensor& x = ref.outputs[m].value();
    const Tensor& y = conv[m].value();
    ASSERT_EQ(x.shape(), y.shape());
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(x[i], y[i], 1e-12);
  }
}

TEST(ConvMmtm, SumWithZeroHeadsIsIdentity) {
  Rng rng(7);
  auto cfg = config_for({3, 2});
  const MmtmState st = init_mmtm_state(cfg, rng, MmtmInit::ZeroHeads);
  const std::vector<Tensor> feats = {rand_tensor({3, 3, 3}, rng), rand_tensor({3, 3, 2}, rng)};
  Tape t;
  const auto out = conv_mmtm_forward(constants(t, feats), cfg, bind(t, st, Binding::Frozen), true);
  EXPECT_EQ(out[0].value(), feats[0]);
  EXPECT_EQ(out[1].value(), feats[1]);
}

TEST(ConvMmtm, UnalignedInputsRaiseWhileMmtmSucceeds) {
  Rng rng(8);
  auto cfg = config_for({3, 2});
  const MmtmState st = init_mmtm_state(cfg, rng);
  const std::vector<Tensor> feats = {rand_tensor({4, 4, 3}, rng), rand_tensor({2, 2, 2}, rng)};
  Tape t;
  const auto bound = bind(t, st, Binding::Frozen);
  EXPECT_NO_THROW(mmtm_forward(constants(t, feats), cfg, bound));
  try {
    conv_mmtm_forward(constants(t, feats), cfg, bound, false);
    FAIL();
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("unaligned spatial dimensions"), std::string::npos);
  }
  // Mixed ranks are unaligned too.
  EXPECT_THROW(conv_mmtm_forward(constants(t, {feats[0], rand_tensor({2}, rng)}), cfg, bound, false),
               DimensionError);
}

TEST(ConvMmtm, GatesPerPosition) {
  Rng rng(9);
  auto cfg = config_for({2, 2});
  const MmtmState st = init_mmtm_state(cfg, rng, MmtmInit::FullyRandom);
  const std::vector<Tensor> feats = {rand_tensor({2, 2, 2}, rng, 0.5, 1.0), rand_tensor({2, 2, 2}, rng)};
  Tape t;
  const auto out = conv_mmtm_forward(constants(t, feats), cfg, bind(t, st, Binding::Frozen), false);
  // Unlike MMTM, the ratio out/in changes between positions.
  const double r0 = out[0].value()[0] / feats[0][0];
  const double r1 = out[0].value()[2] / feats[0][2];
  EXPECT_GT(std::abs(r0 - r1), 1e-9);
}

TEST(ConvMmtm, FiniteDifferenceCheck) {
  Rng rng(10);
  auto cfg = config_for({3, 2});
  const MmtmState st = init_mmtm_state(cfg, rng, MmtmInit::FullyRandom);
  for (bool use_sum : {false, true}) {
    const testing::ScalarFn f = [&](Tape& t, const std::vector<Var>& v) {
      BoundMmtm b{{v[2], v[3]}, {{v[4], v[5]}, {v[6], v[7]}}};
      const auto out = conv_mmtm_forward(std::vector<Var>{v[0], v[1]}, cfg, b, use_sum);
      return add(weighted_sum(t, out[0]), weighted_sum(t, out[1]));
    };
    EXPECT_LT(max_fd_error(f, {rand_tensor({2, 3, 3}, rng), rand_tensor({2, 3, 2}, rng), st.joint.weight,
                               st.joint.bias, st.heads[0].weight, st.heads[0].bias, st.heads[1].weight,
                               st.heads[1].bias}),
              1e-5);
  }
}

// ---- late / early ----

TEST(LateFuse, Examples) {
  Rng rng(11);
  Tape t;
  const Tensor x = rand_tensor({4}, rng);
  EXPECT_EQ(late_fuse(constants(t, {x, x})).value(), x);
  EXPECT_EQ(late_fuse(constants(t, {Tensor::vector({2, 0}), Tensor::vector({0, 2})})).value(),
            Tensor::vector({1, 1}));
  const Tensor a = rand_tensor({5}, rng), b = rand_tensor({5}, rng), c = rand_tensor({5}, rng);
  const Tensor m = late_fuse(constants(t, {a, b, c})).value();
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(m[i], (a[i] + b[i] + c[i]) / 3.0, 1e-15);
}

TEST(LateFuse, LengthMismatchIsDimensionError) {
  Tape t;
  EXPECT_THROW(late_fuse(constants(t, {Tensor({3}), Tensor({4})})), DimensionError);
}

TEST(LateFuse, ProbabilityModeIsLogMeanSoftmax) {
  Tape t;
  const Tensor a = Tensor::vector({1, 0, -1}), b = Tensor::vector({0, 2, 0});
  const Tensor y = late_fuse(constants(t, {a, b}), LateMode::Probabilities).value();
  const double za = std::exp(1) + 1 + std::exp(-1), zb = 2 + std::exp(2);
  const double pa[3] = {std::exp(1) / za, 1 / za, std::exp(-1) / za};
  const double pb[3] = {1 / zb, std::exp(2) / zb, 1 / zb};
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(y[i], std::log((pa[i] + pb[i]) / 2), 1e-14);
}

TEST(EarlyFuse, Examples) {
  Rng rng(12);
  Tape t;
  EXPECT_EQ(early_fuse(constants(t, {Tensor({2, 2, 1}), Tensor({2, 2, 1})})).shape(), (Shape{2, 2, 2}));
  EXPECT_EQ(early_fuse(constants(t, {Tensor({2, 2, 1}), Tensor({2, 2, 3}), Tensor({2, 2, 2})})).shape(),
            (Shape{2, 2, 6}));
  const Tensor a = rand_tensor({3, 2, 2}, rng), b = rand_tensor({3, 2, 1}, rng);
  const Var f = early_fuse(constants(t, {a, b}));
  EXPECT_EQ(slice_channels(f, 0, 2).value(), a);
  EXPECT_EQ(slice_channels(f, 2, 1).value(), b);
}

TEST(EarlyFuse, UnalignedIsDimensionError) {
  Tape t;
  EXPECT_THROW(early_fuse(constants(t, {Tensor({2, 2, 1}), Tensor({3, 2, 1})})), DimensionError);
}

// ---- fusion points ----

TEST(FusionPoint, ParameterParityAcrossMmtmVariants) {
  Rng rng(13);
  for (auto cs : {std::vector<std::size_t>{4, 4}, {16, 32}, {8, 8, 8}}) {
    const auto cfg = config_for(cs);
    const auto mmtm = FusionPoint::create(FusionKind::Mmtm, cfg, rng);
    const auto conv = FusionPoint::create(FusionKind::ConvMmtm, cfg, rng);
    const auto sum = FusionPoint::create(FusionKind::ConvMmtmSum, cfg, rng);
    EXPECT_EQ(mmtm.parameter_count(), mmtm_parameter_count(cfg));
    EXPECT_EQ(conv.parameter_count(), mmtm.parameter_count());
    EXPECT_EQ(sum.parameter_count(), mmtm.parameter_count());
  }
}

TEST(FusionPoint, SeCountIsSameOrderAsMmtm) {
  Rng rng(14);
  const auto cfg = config_for({16, 32});
  const auto se = FusionPoint::create(FusionKind::SeLate, cfg, rng);
  EXPECT_EQ(se.parameter_count(), se_parameter_count(16) + se_parameter_count(32));
  const double ratio = static_cast<double>(se.parameter_count()) / static_cast<double>(mmtm_parameter_count(cfg));
  EXPECT_GT(ratio, 0.1);
  EXPECT_LT(ratio, 10.0);
}

TEST(FusionPoint, EarlyAndLateHaveNoPoints) {
  Rng rng(15);
  EXPECT_THROW(FusionPoint::create(FusionKind::Late, config_for({2, 2}), rng), ConfigError);
  EXPECT_THROW(FusionPoint::create(FusionKind::Early, config_for({2, 2}), rng), ConfigError);
}

TEST(FusionPoint, ParameterNames) {
  Rng rng(16);
  auto p = FusionPoint::create(FusionKind::Mmtm, config_for({4, 4}), rng);
  std::vector<NamedTensor> names;
  p.append_parameters(names, "fusion1");
  ASSERT_EQ(names.size(), 6u);
  EXPECT_EQ(names[0].name, "fusion1.joint.weight");
  EXPECT_EQ(names[5].name, "fusion1.excite1.bias");
}

}  // namespace
}  // namespace mmtm
