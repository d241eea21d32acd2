#include <gtest/gtest.h>

#include <cmath>

#include "mmtm/errors.hpp"
#include "mmtm/experiments.hpp"
#include "mmtm/gradcheck.hpp"

namespace mmtm {
namespace {

ExperimentConfig tiny_experiment() {
  ExperimentConfig c;
  c.task.modality_shapes = {{6, 6, 1}, {8}};
  c.task.train_size = 60;
  c.task.val_size = 30;
  c.task.test_size = 30;
  c.conv_channels = {4, 8};
  c.conv_pool = {true, false};
  c.dense_units = {8, 8};
  c.training.max_epochs = 1;
  return c;
}

TEST(Summary, MeanAndSampleStd) {
  const std::vector<double> v = {1, 2, 3, 4};
  const Summary s = summarize(v);
  EXPECT_DOUBLE_EQ(s.mean, 2.5);
  EXPECT_DOUBLE_EQ(s.stddev, std::sqrt(5.0 / 3.0));
  EXPECT_EQ(summarize(std::vector<double>{0.7}).stddev, 0.0);
  EXPECT_EQ(summarize(std::vector<double>{}).mean, 0.0);
}

TEST(Experiments, AlignmentHelpers) {
  EXPECT_TRUE(spatially_aligned({{4, 4, 1}, {4, 4, 3}}));
  EXPECT_FALSE(spatially_aligned({{4, 4, 1}, {8}}));
  EXPECT_FALSE(spatially_aligned({{4, 4, 1}, {4, 5, 1}}));
  EXPECT_TRUE(needs_aligned_task(FusionKind::Early));
  EXPECT_TRUE(needs_aligned_task(FusionKind::ConvMmtm));
  EXPECT_FALSE(needs_aligned_task(FusionKind::SeLate));
}

TEST(Experiments, RunEchoDescribesTheRun) {
  const auto c = tiny_experiment();
  const Dataset d = generate(c.task);
  const RunResult r = run_experiment(d, c, FusionKind::SeLate, 1, 17);
  const ExperimentConfig echo = parse_config(r.record.config_echo);
  EXPECT_EQ(echo.variant, FusionKind::SeLate);
  EXPECT_EQ(echo.points, 1u);
  EXPECT_EQ(echo.training.seed, 17u);
  EXPECT_GT(r.params, 0u);
  EXPECT_GT(r.macs, 0u);
  // Rerunning from the echo reproduces the result.
  const RunResult again = run_experiment(generate(echo.task), echo, echo.variant, echo.points, echo.training.seed);
  EXPECT_EQ(again.record.test_accuracy, r.record.test_accuracy);
}

TEST(Experiments, AblateRowsAndCsv) {
  auto c = tiny_experiment();
  const Dataset d = generate(c.task);
  const Dataset aligned = generate(aligned_variant(c.task));
  const std::vector<FusionKind> variants = {FusionKind::Mmtm, FusionKind::Late, FusionKind::ConvMmtm};
  const std::vector<std::uint64_t> seeds = {1, 2};
  std::size_t runs = 0;
  const auto rows = ablate(d, &aligned, c, variants, seeds, [&](auto&&...) { ++runs; });
  EXPECT_EQ(runs, 6u);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0].variant, "conv_mmtm");
  EXPECT_TRUE(rows[0].aligned_task);
  EXPECT_EQ(rows[1].variant, "late");
  EXPECT_FALSE(rows[1].aligned_task);
  for (const auto& r : rows) EXPECT_EQ(r.accuracies.size(), 2u);
  const std::string csv = ablation_csv(rows);
  EXPECT_TRUE(csv.starts_with("variant,mean_acc,std_acc,params,macs,task\nconv_mmtm,"));
  EXPECT_NE(csv.find(",aligned\n"), std::string::npos);
  EXPECT_THROW(ablate(d, nullptr, c, variants, seeds), UsageError);
  EXPECT_THROW(ablate(d, &aligned, c, variants, std::vector<std::uint64_t>{}), UsageError);
}

TEST(Experiments, SweepStartsAtLate) {
  auto c = tiny_experiment();
  const Dataset d = generate(c.task);
  const std::vector<std::uint64_t> seeds = {3};
  const auto rows = sweep_mmtm_count(d, c, 2, seeds);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0].points, 0u);
  const RunResult late = run_experiment(d, c, FusionKind::Late, 0, 3);
  EXPECT_EQ(rows[0].mean_accuracy, late.record.test_accuracy);
  EXPECT_TRUE(sweep_csv(rows).starts_with("j,mean_acc,std_acc\n0,"));
  EXPECT_THROW(sweep_mmtm_count(d, c, 3, seeds), ConfigError);
}

TEST(Gradcheck, EveryVariantPasses) {
  for (const auto& r : gradcheck_all(7)) {
    EXPECT_TRUE(r.passed()) << r.variant << " " << r.max_error << " at " << r.worst_parameter;
    EXPECT_GT(r.parameters, 0u);
  }
  EXPECT_DOUBLE_EQ(gradcheck_relative_error(2.0, 1.0), 1.0);
  EXPECT_DOUBLE_EQ(gradcheck_relative_error(0.3, 0.1), 0.2);
}

}  // namespace
}  // namespace mmtm
