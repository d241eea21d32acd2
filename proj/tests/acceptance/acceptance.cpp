// Acceptance checks 1-9. Prints one PASS/FAIL line per criterion and writes
// the ablation and sweep CSVs to the output directory.
//
// Exit status is non-zero if any criterion fails, except those listed with
// --known-failure. Those still print FAIL. A listed criterion that passes is
// an error too, so a stale list cannot hide anything.

#include <CLI11.hpp>
#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mmtm/checkpoint.hpp"
#include "mmtm/config.hpp"
#include "mmtm/costs.hpp"
#include "mmtm/errors.hpp"
#include "mmtm/experiments.hpp"
#include "mmtm/gradcheck.hpp"
#include "mmtm/random.hpp"

namespace fs = std::filesystem;
using namespace mmtm;

namespace {

const fs::path kConfigs = fs::path(MMTM_SOURCE_DIR) / "configs";
const std::vector<std::uint64_t> kSeeds = {1, 2, 3, 4, 5};

// Pinned thresholds.
constexpr double kGradTol = 1e-5;
constexpr double kGradSeconds = 60.0;
constexpr std::size_t kGradMaxParams = 5000;
constexpr double kSqueezeTol = 1e-12;
constexpr double kMmtmOverLate = 0.02;
constexpr double kTieAlpha = 0.05;
constexpr double kXorChanceSlack = 0.05;
constexpr double kXorFused = 0.90;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::vector<std::pair<int, Outcome>> g_results;

void report(int n, const Outcome& o) {
  std::printf("criterion %d: %s  %s\n", n, o.pass ? "PASS" : "FAIL", o.detail.c_str());
  std::fflush(stdout);
  g_results.emplace_back(n, o);
}

// Exceptions inside a check turn into a FAIL line instead of aborting the rest.
void run(int n, const std::function<Outcome()>& check) {
  try {
    report(n, check());
  } catch (const std::exception& e) {
    report(n, {false, std::string("exception: ") + e.what()});
  }
}

void log_run(const std::string& label, std::uint64_t seed, const RunResult& r) {
  std::fprintf(stderr, "  %-26s seed %llu  test acc %.4f  (%.1fs)\n", label.c_str(),
               static_cast<unsigned long long>(seed), r.record.test_accuracy, r.record.wall_seconds);
}

std::vector<double> accuracies(const Dataset& data, const ExperimentConfig& cfg, FusionKind kind, std::size_t points,
                               const std::string& label) {
  std::vector<double> out;
  for (auto seed : kSeeds) {
    const RunResult r = run_experiment(data, cfg, kind, points, seed);
    log_run(label, seed, r);
    out.push_back(r.record.test_accuracy);
  }
  return out;
}

// Two-sided Welch t-test p-value.
double welch_p(const std::vector<double>& a, const std::vector<double>& b) {
  const Summary sa = summarize(a), sb = summarize(b);
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  const double va = sa.stddev * sa.stddev / na, vb = sb.stddev * sb.stddev / nb;
  if (va + vb == 0.0) return sa.mean == sb.mean ? 1.0 : 0.0;
  const double t = (sa.mean - sb.mean) / std::sqrt(va + vb);
  const double df = (va + vb) * (va + vb) / (va * va / (na - 1) + vb * vb / (nb - 1));
  const boost::math::students_t dist(df);
  return 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
}

// ---- 1 ----

Outcome gradient_fidelity() {
  const auto start = Clock::now();
  const auto results = gradcheck_all(7);
  const double secs = seconds_since(start);
  double worst = 0.0;
  std::string where;
  std::size_t biggest = 0;
  for (const auto& r : results) {
    if (r.max_error >= worst) {
      worst = r.max_error;
      where = r.variant + ":" + r.worst_parameter;
    }
    biggest = std::max(biggest, r.parameters);
  }
  const bool pass = results.size() == all_fusion_kinds().size() && worst < kGradTol && secs < kGradSeconds &&
                    biggest <= kGradMaxParams;
  return {pass, std::to_string(results.size()) + " variants, max rel error " + fmt("%.2e", worst) + " (" + where +
                    "), largest net " + std::to_string(biggest) + " params, " + fmt("%.1f", secs) + "s"};
}

// ---- 2 ----

Outcome identity_at_init() {
  Rng rng(21);
  MmtmConfig cfg;
  cfg.channel_counts = {4, 5, 6};
  const MmtmState st = init_mmtm_state(cfg, rng, MmtmInit::ZeroHeads);
  const std::vector<Tensor> feats = {random_normal({2, 3, 3, 4}, 0, 1, rng), random_normal({3, 3, 5}, 0, 1, rng),
                                     random_normal({6}, 0, 1, rng)};
  Tape t;
  std::vector<Var> in;
  for (const auto& f : feats) in.push_back(t.constant(f));
  const MmtmResult out = mmtm_forward(in, cfg, bind(t, st, Binding::Frozen));
  bool module_identity = true;
  for (std::size_t m = 0; m < feats.size(); ++m) module_identity = module_identity && out.outputs[m].value() == feats[m];

  const ExperimentConfig ec = load_config(kConfigs / "default.ini");
  ExperimentConfig zero = ec;
  zero.init = MmtmInit::ZeroHeads;
  const auto shapes = ec.task.modality_shapes;
  const auto fused = FusionNetwork::build(network_config(zero, shapes, FusionKind::Mmtm, 2), 5);
  const auto late = FusionNetwork::build(network_config(ec, shapes, FusionKind::Late, 0), 5);
  SyntheticTaskSpec spec = ec.task;
  spec.train_size = spec.val_size = spec.test_size = 20;
  const Dataset d = generate(spec);
  std::size_t equal = 0;
  for (const auto& s : d.test) equal += fused.logits(s.inputs) == late.logits(s.inputs);
  return {module_identity && equal == d.test.size(),
          std::string("ranks (4,3,1) identity ") + (module_identity ? "bit-exact" : "BROKEN") + ", network logits equal " +
              std::to_string(equal) + "/" + std::to_string(d.test.size())};
}

// ---- 3 ----

Outcome squeeze_oracle() {
  Rng rng(33);
  std::uniform_int_distribution<std::size_t> rank_d(1, 4), extent_d(1, 5);
  double worst = 0.0;
  std::size_t tensors = 0;
  for (int pair = 0; pair < 50; ++pair) {
    std::vector<Tensor> xs;
    MmtmConfig cfg;
    for (int k = 0; k < 2; ++k) {
      Shape shape(rank_d(rng));
      for (auto& e : shape) e = extent_d(rng);
      xs.push_back(random_normal(shape, 0.0, 3.0, rng));
      cfg.channel_counts.push_back(shape.back());
    }
    Tape t;
    std::vector<Var> in;
    for (const auto& x : xs) in.push_back(t.constant(x));
    const auto sq = squeeze(in, cfg);
    for (std::size_t k = 0; k < 2; ++k) {
      const std::size_t C = xs[k].shape().back();
      const std::size_t positions = xs[k].size() / C;
      std::vector<double> sum(C, 0.0);
      for (std::size_t i = 0; i < xs[k].size(); ++i) sum[i % C] += xs[k][i];
      for (std::size_t c = 0; c < C; ++c)
        worst = std::max(worst, std::abs(sq[k].value()[c] - sum[c] / static_cast<double>(positions)));
      ++tensors;
    }
  }
  return {tensors == 100 && worst < kSqueezeTol,
          std::to_string(tensors) + " tensors of rank 1-4, max abs error " + fmt("%.2e", worst)};
}

// ---- 4 ----

Outcome mixed_rank_legality() {
  Rng rng(44);
  MmtmConfig cfg;
  cfg.channel_counts = {8, 16};
  const MmtmState st = init_mmtm_state(cfg, rng, MmtmInit::FullyRandom);
  Tape t;
  const std::vector<Var> in = {t.constant(random_normal({6, 6, 8}, 0, 1, rng)),
                               t.constant(random_normal({16}, 0, 1, rng))};
  const auto bound = bind(t, st, Binding::Frozen);
  const MmtmResult out = mmtm_forward(in, cfg, bound);
  const bool fused = out.outputs[0].shape() == Shape{6, 6, 8} && out.outputs[1].shape() == Shape{16};

  bool raised = false;
  std::string message;
  try {
    conv_mmtm_forward(in, cfg, bound, false);
  } catch (const DimensionError& e) {
    message = e.what();
    raised = message.find("unaligned spatial dimensions") != std::string::npos;
  }
  // The same through a full network on the default task shapes.
  const ExperimentConfig ec = load_config(kConfigs / "default.ini");
  const auto conv_net = FusionNetwork::build(network_config(ec, ec.task.modality_shapes, FusionKind::ConvMmtm, 2), 1);
  bool net_raised = false;
  try {
    conv_net.logits(std::vector<Tensor>{Tensor(ec.task.modality_shapes[0]), Tensor(ec.task.modality_shapes[1])});
  } catch (const DimensionError& e) {
    net_raised = std::string(e.what()).find("unaligned spatial dimensions") != std::string::npos;
  }
  return {fused && raised && net_raised, std::string("mmtm [6,6,8]+[16] ") + (fused ? "ok" : "WRONG SHAPES") +
                                             "; conv_mmtm raises: \"" + message + "\"" +
                                             (net_raised ? "" : "; network-level check did not raise")};
}

// ---- 5 and 8 share the default-task runs ----

struct AblationRuns {
  std::vector<double> mmtm_default, late_default;
  std::map<FusionKind, std::vector<double>> aligned;
  std::size_t params_default_mmtm = 0;
};

Outcome ablation_ordering(const fs::path& out_dir, AblationRuns& runs) {
  const auto start = Clock::now();
  const ExperimentConfig ec = load_config(kConfigs / "default.ini");
  const Dataset data = generate(ec.task);
  const Dataset aligned = generate(aligned_variant(ec.task));

  runs.mmtm_default = accuracies(data, ec, FusionKind::Mmtm, ec.points, "mmtm (default task)");
  runs.late_default = accuracies(data, ec, FusionKind::Late, 0, "late (default task)");
  std::vector<AblationRow> rows;
  for (auto kind : all_fusion_kinds()) {
    const std::string name(fusion_kind_name(kind));
    runs.aligned[kind] = accuracies(aligned, ec, kind, ec.points, name + " (aligned task)");
    const FusionNetwork net = FusionNetwork::build(network_config(ec, aligned.spec.modality_shapes, kind, ec.points), 1);
    const CostReport costs = report(net);
    const Summary s = summarize(runs.aligned[kind]);
    rows.push_back({name, true, s.mean, s.stddev, costs.total_params(), costs.total_macs(), runs.aligned[kind]});
  }
  for (auto [kind, accs] : {std::pair{FusionKind::Mmtm, runs.mmtm_default}, {FusionKind::Late, runs.late_default}}) {
    const FusionNetwork net =
        FusionNetwork::build(network_config(ec, data.spec.modality_shapes, kind, kind == FusionKind::Late ? 0 : ec.points), 1);
    const CostReport costs = report(net);
    const Summary s = summarize(accs);
    rows.push_back({std::string(fusion_kind_name(kind)), false, s.mean, s.stddev, costs.total_params(),
                    costs.total_macs(), accs});
  }
  std::sort(rows.begin(), rows.end(),
            [](const auto& a, const auto& b) { return std::tie(a.variant, a.aligned_task) < std::tie(b.variant, b.aligned_task); });
  std::ofstream(out_dir / "ablation.csv") << ablation_csv(rows);

  const double mmtm = summarize(runs.mmtm_default).mean;
  const double late = summarize(runs.late_default).mean;
  const bool beats_late = mmtm - late > kMmtmOverLate;

  const double mmtm_al = summarize(runs.aligned[FusionKind::Mmtm]).mean;
  const double conv = summarize(runs.aligned[FusionKind::ConvMmtm]).mean;
  const double conv_sum = summarize(runs.aligned[FusionKind::ConvMmtmSum]).mean;
  const bool beats_conv = mmtm_al >= conv && mmtm_al >= conv_sum;

  const double early = summarize(runs.aligned[FusionKind::Early]).mean;
  FusionKind lowest_other = FusionKind::Late;
  double lowest = 2.0;
  for (const auto& [kind, accs] : runs.aligned) {
    if (kind == FusionKind::Early) continue;
    const double m = summarize(accs).mean;
    if (m < lowest) {
      lowest = m;
      lowest_other = kind;
    }
  }
  const double p = welch_p(runs.aligned[FusionKind::Early], runs.aligned[lowest_other]);
  const bool early_lowest = early <= lowest || p >= kTieAlpha;

  std::ostringstream d;
  d << "default task: mmtm " << fmt("%.4f", mmtm) << " vs late " << fmt("%.4f", late) << " ("
    << (beats_late ? "ok" : "NOT > 2 pts") << "); aligned task: mmtm " << fmt("%.4f", mmtm_al) << ", conv_mmtm "
    << fmt("%.4f", conv) << ", conv_mmtm_sum " << fmt("%.4f", conv_sum) << " (" << (beats_conv ? "ok" : "NOT >=")
    << "); early " << fmt("%.4f", early) << " vs lowest other " << fusion_kind_name(lowest_other) << " "
    << fmt("%.4f", lowest) << ", Welch p " << fmt("%.3g", p) << " (" << (early_lowest ? "ok" : "early NOT lowest")
    << "); " << fmt("%.0f", seconds_since(start)) << "s";
  return {beats_late && beats_conv && early_lowest, d.str()};
}

// ---- 6 ----

Outcome xor_separation() {
  const ExperimentConfig ec = load_config(kConfigs / "xor.ini");
  const Dataset data = generate(ec.task);
  const double chance = 1.0 / static_cast<double>(ec.task.num_classes);
  std::ostringstream d;
  bool pass = true;
  for (std::size_t m = 0; m < ec.task.modality_shapes.size(); ++m) {
    ExperimentConfig uni = ec;
    uni.use_modalities = {m};
    const double acc = summarize(accuracies(data, uni, FusionKind::Late, 0, "xor stream m" + std::to_string(m))).mean;
    pass = pass && acc <= chance + kXorChanceSlack;
    d << "stream m" << m << " " << fmt("%.4f", acc) << ", ";
  }
  const double fused = summarize(accuracies(data, ec, FusionKind::Mmtm, ec.points, "xor mmtm")).mean;
  pass = pass && fused >= kXorFused;
  d << "mmtm " << fmt("%.4f", fused) << " (chance " << fmt("%.2f", chance) << ", need unimodal <= "
    << fmt("%.2f", chance + kXorChanceSlack) << ", fused >= " << fmt("%.2f", kXorFused) << ")";
  return {pass, d.str()};
}

// ---- 7 ----

Outcome cost_model() {
  Rng rng(77);
  std::uniform_int_distribution<std::size_t> k_d(2, 3), c_d(1, 64);
  std::size_t matched = 0;
  bool parity = true;
  for (int i = 0; i < 20; ++i) {
    MmtmConfig cfg;
    if (i == 0) {
      cfg.channel_counts = {4, 4};
    } else {
      const std::size_t k = k_d(rng);
      for (std::size_t m = 0; m < k; ++m) cfg.channel_counts.push_back(c_d(rng));
    }
    std::size_t total = 0;
    for (auto c : cfg.channel_counts) total += c;
    const std::size_t cz = std::max<std::size_t>(1, total / 4);
    std::size_t closed = total * cz + cz;
    for (auto c : cfg.channel_counts) closed += cz * c + c;
    Rng a(1), b(1);
    const auto mmtm = FusionPoint::create(FusionKind::Mmtm, cfg, a);
    const auto conv = FusionPoint::create(FusionKind::ConvMmtm, cfg, b);
    std::size_t stored = 0;
    std::vector<NamedConstTensor> named;
    mmtm.append_parameters(named, "p");
    for (const auto& n : named) stored += n.tensor->size();
    matched += count_params(mmtm) == closed && stored == closed && (i != 0 || closed == 42);
    parity = parity && count_params(conv) == count_params(mmtm);
  }

  MmtmConfig cfg;
  cfg.channel_counts = {16, 32};
  bool linear = true;
  std::ostringstream ratios;
  for (std::size_t side : {2u, 4u, 8u}) {
    const std::vector<Shape> shapes = {{side, side, 16}, {side, side, 32}};
    const ModuleMacs m = mmtm_macs(cfg, shapes);
    const ModuleMacs c = conv_mmtm_macs(cfg, shapes, false);
    const std::uint64_t S = side * side;
    linear = linear && c.projection == S * m.projection && c.projection % m.projection == 0;
    ratios << " S=" << S << ":" << c.projection / m.projection << "x";
  }
  return {matched == 20 && parity && linear, "closed form matched " + std::to_string(matched) +
                                                 "/20 (incl. 42), conv params == mmtm params " +
                                                 (parity ? "yes" : "NO") + ", FC MAC ratio" + ratios.str()};
}

// ---- 8 ----

Outcome sweep_curve(const fs::path& out_dir, const AblationRuns& runs) {
  if (runs.late_default.size() != kSeeds.size() || runs.mmtm_default.size() != kSeeds.size())
    throw Error("ablation runs missing; the sweep reuses them");
  const ExperimentConfig ec = load_config(kConfigs / "default.ini");
  if (ec.points != 2 || ec.sweep_max_points != 2) throw ConfigError("sweep check expects points = sweep.max_points = 2");
  const Dataset data = generate(ec.task);
  std::vector<SweepRow> rows(3);
  rows[0].accuracies = runs.late_default;
  rows[1].accuracies = accuracies(data, ec, FusionKind::Mmtm, 1, "sweep j=1");
  rows[2].accuracies = runs.mmtm_default;
  for (std::size_t j = 0; j < 3; ++j) {
    rows[j].points = j;
    const Summary s = summarize(rows[j].accuracies);
    rows[j].mean_accuracy = s.mean;
    rows[j].std_accuracy = s.stddev;
  }
  std::ofstream(out_dir / "sweep.csv") << sweep_csv(rows);
  const bool pass = std::any_of(rows.begin() + 1, rows.end(),
                                [&](const SweepRow& r) { return r.mean_accuracy > rows[0].mean_accuracy; });
  std::ostringstream d;
  for (const auto& r : rows) d << "j=" << r.points << " " << fmt("%.4f", r.mean_accuracy) << "  ";
  d << "-> " << (out_dir / "sweep.csv").string();
  return {pass, d.str()};
}

// ---- 9 ----

Outcome determinism(const fs::path& out_dir) {
  ExperimentConfig ec = load_config(kConfigs / "smoke.ini");
  const Dataset a = generate(ec.task);
  const Dataset b = generate(ec.task);
  const bool data_same = encode_dataset(a) == encode_dataset(b);

  const std::vector<FusionKind> variants = {FusionKind::Mmtm, FusionKind::Late};
  const std::vector<std::uint64_t> seeds = {1, 2};
  const std::string csv1 = ablation_csv(ablate(a, nullptr, ec, variants, seeds));
  const std::string csv2 = ablation_csv(ablate(b, nullptr, ec, variants, seeds));
  const RunResult r1 = run_experiment(a, ec, FusionKind::Mmtm, 2, 3);
  const RunResult r2 = run_experiment(a, ec, FusionKind::Mmtm, 2, 3);
  const bool runs_same = csv1 == csv2 && r1.record.epochs_csv() == r2.record.epochs_csv();

  const fs::path dpath = out_dir / "roundtrip.mmfz";
  save_dataset(a, dpath);
  const bool data_rt = load_dataset(dpath) == a && encode_dataset(load_dataset(dpath)) == encode_dataset(a);

  auto net = FusionNetwork::build(network_config(ec, a.spec.modality_shapes), 3);
  train(net, a, train_config(ec));
  const fs::path cpath = out_dir / "roundtrip.mmck";
  save_checkpoint(net, to_text(ec), 3, cpath);
  const Checkpoint ck = load_checkpoint(cpath);
  auto restored = FusionNetwork::build(network_config(parse_config(ck.config_echo), a.spec.modality_shapes), ck.seed);
  load_parameters(restored, ck);
  const bool ckpt_rt = encode_checkpoint(restored, ck.config_echo, ck.seed) == encode_checkpoint(net, to_text(ec), 3) &&
                       evaluate(restored, a.test).accuracy == evaluate(net, a.test).accuracy;

  auto yn = [](bool v) { return v ? "identical" : "DIFFERENT"; };
  return {data_same && runs_same && data_rt && ckpt_rt, std::string("regenerated data ") + yn(data_same) +
                                                            ", repeated run CSVs " + yn(runs_same) +
                                                            ", dataset round-trip " + yn(data_rt) +
                                                            ", checkpoint round-trip " + yn(ckpt_rt)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance checks"};
  std::string out = "acceptance_out";
  std::vector<int> known;
  app.add_option("out", out, "directory for CSVs and round-trip files");
  app.add_option("--known-failure", known, "criterion expected to fail (repeatable)")
      ->allow_extra_args(false)
      ->check(CLI::Range(1, 9));
  CLI11_PARSE(app, argc, argv);
  const fs::path out_dir = out;
  const std::set<int> known_failures(known.begin(), known.end());
  fs::create_directories(out_dir);
  const auto start = Clock::now();

  run(1, gradient_fidelity);
  run(2, identity_at_init);
  run(3, squeeze_oracle);
  run(4, mixed_rank_legality);
  run(7, cost_model);
  run(9, [&] { return determinism(out_dir); });
  run(6, xor_separation);
  AblationRuns runs;
  run(5, [&] { return ablation_ordering(out_dir, runs); });
  run(8, [&] { return sweep_curve(out_dir, runs); });

  std::sort(g_results.begin(), g_results.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  std::printf("\nsummary (%.0fs):\n", seconds_since(start));
  int unexpected = 0;
  for (const auto& [n, o] : g_results) {
    const bool listed = known_failures.count(n) > 0;
    const char* note = "";
    if (listed) note = o.pass ? "  (listed as a known failure but passed)" : "  (known failure)";
    std::printf("criterion %d: %s%s\n", n, o.pass ? "PASS" : "FAIL", note);
    unexpected += o.pass == listed;
  }
  return unexpected == 0 ? 0 : 1;
}
