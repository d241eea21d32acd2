#include "mmtm/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "mmtm/costs.hpp"
#include "mmtm/errors.hpp"

namespace mmtm {

namespace {
std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}
}  // namespace

Summary summarize(std::span<const double> values) {
  Summary s;
  if (values.empty()) return s;
  for (double v : values) s.mean += v;
  s.mean /= static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return s;
}

bool spatially_aligned(const std::vector<Shape>& shapes) {
  if (shapes.empty()) return false;
  for (const auto& s : shapes)
    if (s.size() != 3 || s[0] != shapes[0][0] || s[1] != shapes[0][1]) return false;
  return true;
}

bool needs_aligned_task(FusionKind kind) {
  return kind == FusionKind::Early || kind == FusionKind::ConvMmtm || kind == FusionKind::ConvMmtmSum;
}

Dataset load_or_generate(ExperimentConfig& config) {
  if (!config.data_path) return generate(config.task);
  Dataset d = load_dataset(*config.data_path);
  config.task = d.spec;
  return d;
}

RunResult run_experiment(const Dataset& data, const ExperimentConfig& config, FusionKind variant,
                         std::size_t points, std::uint64_t seed) {
  // The echo describes exactly this run.
  ExperimentConfig run = config;
  run.task = data.spec;
  run.variant = variant;
  run.points = points;
  run.training.seed = seed;
  FusionNetwork net = FusionNetwork::build(network_config(run, data.spec.modality_shapes), seed);
  RunResult r;
  const CostReport costs = report(net);
  r.params = costs.total_params();
  r.macs = costs.total_macs();
  r.record = train(net, data, train_config(run));
  r.record.config_echo = to_text(run);
  return r;
}

std::vector<AblationRow> ablate(const Dataset& data, const Dataset* aligned, const ExperimentConfig& config,
                                std::span<const FusionKind> variants, std::span<const std::uint64_t> seeds,
                                const RunCallback& on_run) {
  if (seeds.empty()) throw UsageError("ablate needs at least one seed");
  if (variants.empty()) throw UsageError("ablate needs at least one variant");
  std::vector<AblationRow> rows;
  for (auto kind : variants) {
    AblationRow row;
    row.variant = std::string(fusion_kind_name(kind));
    const Dataset* task = &data;
    if (needs_aligned_task(kind) && !spatially_aligned(data.spec.modality_shapes)) {
      if (!aligned) throw UsageError("variant '" + row.variant + "' needs spatially aligned modalities");
      task = aligned;
      row.aligned_task = true;
    }
    for (auto seed : seeds) {
      const RunResult r = run_experiment(*task, config, kind, config.points, seed);
      row.accuracies.push_back(r.record.test_accuracy);
      row.params = r.params;
      row.macs = r.macs;
      if (on_run) on_run(row.variant, seed, r);
    }
    const Summary s = summarize(row.accuracies);
    row.mean_accuracy = s.mean;
    row.std_accuracy = s.stddev;
    rows.push_back(std::move(row));
  }
  std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.variant < b.variant; });
  return rows;
}

std::string ablation_csv(std::span<const AblationRow> rows) {
  std::ostringstream out;
  out << "variant,mean_acc,std_acc,params,macs,task\n";
  for (const auto& r : rows)
    out << r.variant << ',' << fmt(r.mean_accuracy) << ',' << fmt(r.std_accuracy) << ',' << r.params << ','
        << r.macs << ',' << (r.aligned_task ? "aligned" : "default") << '\n';
  return out.str();
}

std::vector<SweepRow> sweep_mmtm_count(const Dataset& data, const ExperimentConfig& config, std::size_t max_points,
                                       std::span<const std::uint64_t> seeds, const RunCallback& on_run) {
  if (seeds.empty()) throw UsageError("sweep needs at least one seed");
  // Validates max_points against the stream depths before any training.
  const NetworkConfig probe = network_config(config, data.spec.modality_shapes, FusionKind::Late, 0);
  fusion_sweep_plans(probe.streams, max_points);
  std::vector<SweepRow> rows;
  for (std::size_t j = 0; j <= max_points; ++j) {
    SweepRow row;
    row.points = j;
    // j = 0 is the late-fusion baseline by construction.
    const FusionKind kind = j == 0 ? FusionKind::Late : FusionKind::Mmtm;
    for (auto seed : seeds) {
      const RunResult r = run_experiment(data, config, kind, j, seed);
      row.accuracies.push_back(r.record.test_accuracy);
      if (on_run) on_run("j=" + std::to_string(j), seed, r);
    }
    const Summary s = summarize(row.accuracies);
    row.mean_accuracy = s.mean;
    row.std_accuracy = s.stddev;
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string sweep_csv(std::span<const SweepRow> rows) {
  std::ostringstream out;
  out << "j,mean_acc,std_acc\n";
  for (const auto& r : rows) out << r.points << ',' << fmt(r.mean_accuracy) << ',' << fmt(r.std_accuracy) << '\n';
  return out.str();
}

}  // namespace mmtm
