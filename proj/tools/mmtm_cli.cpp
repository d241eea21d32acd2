// mmtm: train, evaluate and compare multimodal fusion networks on synthetic tasks.

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mmtm/checkpoint.hpp"
#include "mmtm/config.hpp"
#include "mmtm/costs.hpp"
#include "mmtm/errors.hpp"
#include "mmtm/experiments.hpp"
#include "mmtm/gradcheck.hpp"

namespace fs = std::filesystem;
using namespace mmtm;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::string> overrides;
  std::string data;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("-c,--config", c.config, "experiment config file");
  cmd->add_option("--seed", c.seed, "run seed (replaces the configured seed or seed list)");
  cmd->add_option("-o,--out", c.out, "output directory (default: $MMTM_OUT_ROOT or ./runs)");
  cmd->add_option("--set", c.overrides, "config override section.key=value (repeatable)");
  cmd->add_option("--data", c.data, "dataset file (MMFZ1) used instead of generating the task");
}

fs::path out_dir(const Common& c) {
  if (!c.out.empty()) return c.out;
  if (const char* root = std::getenv("MMTM_OUT_ROOT"); root && *root) return root;
  return "runs";
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write " + path.string());
  f << text;
  if (!f) throw Error("write failed: " + path.string());
}

ExperimentConfig load(const Common& c) {
  if (c.config.empty()) {
    throw UsageError("missing --config\n\nexample config:\n\n" + example_config());
  }
  ExperimentConfig cfg = load_config(c.config, c.overrides);
  if (!c.data.empty()) cfg.data_path = c.data;
  return cfg;
}

void print_epoch(const EpochRecord& e) {
  std::printf("epoch %3zu  lr %-8.3g  train loss %.4f acc %.4f  val loss %.4f acc %.4f\n", e.epoch, e.lr,
              e.train_loss, e.train_accuracy, e.val_loss, e.val_accuracy);
  std::fflush(stdout);
}

std::string fmt6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

int cmd_train(const Common& c) {
  ExperimentConfig cfg = load(c);
  if (c.seed) cfg.training.seed = *c.seed;
  const Dataset data = load_or_generate(cfg);
  const std::uint64_t seed = cfg.training.seed;
  FusionNetwork net = FusionNetwork::build(network_config(cfg, data.spec.modality_shapes), seed);
  const CostReport costs = report(net);
  std::printf("variant %s  params %llu  macs %llu  seed %llu\n", std::string(fusion_kind_name(cfg.variant)).c_str(),
              static_cast<unsigned long long>(costs.total_params()), static_cast<unsigned long long>(costs.total_macs()),
              static_cast<unsigned long long>(seed));
  RunRecord rec = train(net, data, train_config(cfg), print_epoch);
  rec.config_echo = to_text(cfg);

  const fs::path dir = out_dir(c);
  write_text(dir / "epochs.csv", rec.epochs_csv());
  write_text(dir / "run.jsonl", rec.to_jsonl());
  write_text(dir / "summary.csv", "seed,variant,best_epoch,test_loss,test_acc,params,macs\n" + std::to_string(seed) +
                                      "," + std::string(fusion_kind_name(cfg.variant)) + "," +
                                      std::to_string(rec.best_epoch) + "," + fmt6(rec.test_loss) + "," +
                                      fmt6(rec.test_accuracy) + "," + std::to_string(costs.total_params()) + "," +
                                      std::to_string(costs.total_macs()) + "\n");
  save_checkpoint(net, rec.config_echo, seed, dir / "checkpoint.mmck");
  std::printf("best epoch %zu  test loss %.6f  test accuracy %.6f\nwrote %s\n", rec.best_epoch, rec.test_loss,
              rec.test_accuracy, dir.string().c_str());
  return 0;
}

int cmd_eval(const Common& c, const std::string& checkpoint_arg) {
  const fs::path dir = out_dir(c);
  const fs::path ckpt_path = checkpoint_arg.empty() ? dir / "checkpoint.mmck" : fs::path(checkpoint_arg);
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  // The checkpoint carries its own config; --config is not needed here.
  ExperimentConfig cfg = parse_config(ckpt.config_echo, c.overrides);
  if (!c.data.empty()) cfg.data_path = c.data;
  const Dataset data = load_or_generate(cfg);
  FusionNetwork net = FusionNetwork::build(network_config(cfg, data.spec.modality_shapes), ckpt.seed);
  load_parameters(net, ckpt);
  const Evaluation ev = evaluate(net, data.test);
  write_text(dir / "eval.csv", "split,loss,acc\ntest," + fmt6(ev.loss) + "," + fmt6(ev.accuracy) + "\n");
  std::printf("test loss %.6f  test accuracy %.6f\n", ev.loss, ev.accuracy);
  return 0;
}

std::vector<std::uint64_t> seeds_for(const Common& c, const ExperimentConfig& cfg) {
  if (c.seed) return {*c.seed};
  return cfg.seeds;
}

void print_run(const std::string& label, std::uint64_t seed, const RunResult& r) {
  std::printf("%-16s seed %-4llu test acc %.4f  (best epoch %zu, %.1fs)\n", label.c_str(),
              static_cast<unsigned long long>(seed), r.record.test_accuracy, r.record.best_epoch,
              r.record.wall_seconds);
  std::fflush(stdout);
}

int cmd_ablate(const Common& c) {
  ExperimentConfig cfg = load(c);
  const Dataset data = load_or_generate(cfg);
  std::optional<Dataset> aligned;
  bool need = false;
  for (auto k : cfg.ablate_variants) need = need || needs_aligned_task(k);
  if (need && !spatially_aligned(data.spec.modality_shapes)) aligned = generate(aligned_variant(data.spec));
  const auto seeds = seeds_for(c, cfg);
  const auto rows = ablate(data, aligned ? &*aligned : nullptr, cfg, cfg.ablate_variants, seeds, print_run);
  const std::string csv = ablation_csv(rows);
  write_text(out_dir(c) / "ablation.csv", csv);
  std::cout << csv;
  return 0;
}

int cmd_sweep(const Common& c) {
  ExperimentConfig cfg = load(c);
  const Dataset data = load_or_generate(cfg);
  const auto rows = sweep_mmtm_count(data, cfg, cfg.sweep_max_points, seeds_for(c, cfg), print_run);
  const std::string csv = sweep_csv(rows);
  write_text(out_dir(c) / "sweep.csv", csv);
  std::cout << csv;
  return 0;
}

int cmd_gen_data(const Common& c, const std::string& file) {
  ExperimentConfig cfg = load(c);
  if (c.seed) cfg.task.seed = *c.seed;
  const Dataset data = generate(cfg.task);
  const fs::path path = file.empty() ? out_dir(c) / "dataset.mmfz" : fs::path(file);
  save_dataset(data, path);
  std::printf("wrote %s (%zu/%zu/%zu samples, %s mode)\n", path.string().c_str(), data.train.size(), data.val.size(),
              data.test.size(), std::string(mode_name(data.spec.mode)).c_str());
  return 0;
}

int cmd_count_costs(const Common& c) {
  ExperimentConfig cfg = load(c);
  if (c.seed) cfg.training.seed = *c.seed;
  std::vector<Shape> shapes = cfg.task.modality_shapes;
  if (cfg.data_path) shapes = load_dataset(*cfg.data_path).spec.modality_shapes;
  const FusionNetwork net = FusionNetwork::build(network_config(cfg, shapes), cfg.training.seed);
  const std::string csv = report(net).to_csv();
  write_text(out_dir(c) / "costs.csv", csv);
  std::cout << csv;
  return 0;
}

int cmd_gradcheck(const Common& c) {
  const std::uint64_t seed = c.seed.value_or(7);
  std::ostringstream csv;
  csv << "variant,scalars,max_rel_error,worst,pass\n";
  bool ok = true;
  for (const auto& r : gradcheck_all(seed)) {
    std::printf("%-14s %6zu scalars  max rel error %.3e  %s\n", r.variant.c_str(), r.parameters, r.max_error,
                r.passed() ? "pass" : "FAIL");
    char err[32];
    std::snprintf(err, sizeof err, "%.6e", r.max_error);
    csv << r.variant << ',' << r.parameters << ',' << err << ',' << r.worst_parameter << ','
        << (r.passed() ? "true" : "false") << '\n';
    ok = ok && r.passed();
  }
  write_text(out_dir(c) / "gradcheck.csv", csv.str());
  if (!ok) std::fprintf(stderr, "gradcheck: relative error at or above %.0e\n", kGradcheckTolerance);
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multimodal transfer module experiments"};
  app.require_subcommand(1);

  Common train_o, eval_o, ablate_o, sweep_o, gen_o, cost_o, grad_o;
  std::string checkpoint, data_file;

  auto* train_cmd = app.add_subcommand("train", "train one network and write its checkpoint");
  add_common(train_cmd, train_o);
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on its test split");
  add_common(eval_cmd, eval_o);
  eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint file (default: <out>/checkpoint.mmck)");
  auto* ablate_cmd = app.add_subcommand("ablate", "compare fusion variants over several seeds");
  add_common(ablate_cmd, ablate_o);
  auto* sweep_cmd = app.add_subcommand("sweep", "accuracy against the number of MMTM modules");
  add_common(sweep_cmd, sweep_o);
  auto* gen_cmd = app.add_subcommand("gen-data", "generate and save a synthetic dataset");
  add_common(gen_cmd, gen_o);
  gen_cmd->add_option("-f,--file", data_file, "output file (default: <out>/dataset.mmfz)");
  auto* cost_cmd = app.add_subcommand("count-costs", "parameter and MAC counts per component");
  add_common(cost_cmd, cost_o);
  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference check of every fusion variant");
  add_common(grad_cmd, grad_o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*train_cmd) return cmd_train(train_o);
    if (*eval_cmd) return cmd_eval(eval_o, checkpoint);
    if (*ablate_cmd) return cmd_ablate(ablate_o);
    if (*sweep_cmd) return cmd_sweep(sweep_o);
    if (*gen_cmd) return cmd_gen_data(gen_o, data_file);
    if (*cost_cmd) return cmd_count_costs(cost_o);
    if (*grad_cmd) return cmd_gradcheck(grad_o);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
