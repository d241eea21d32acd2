#include "mmtm/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>

#include "mmtm/errors.hpp"
#include "mmtm/random.hpp"

namespace mmtm {

void TrainConfig::validate() const {
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (!(base_lr >= 0.0)) throw ConfigError("base_lr must be non-negative");
  if (!(lr_drop_factor > 1.0)) throw ConfigError("lr_drop_factor must exceed 1");
  if (patience < 1) throw ConfigError("patience must be at least 1");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
  if (!(excitation_decay >= 0.0)) throw ConfigError("excitation_decay must be non-negative");
  if (!(min_lr > 0.0)) throw ConfigError("min_lr must be positive");
}

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string fmt_g(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::size_t argmax(const Tensor& t) {
  return static_cast<std::size_t>(std::max_element(t.data().begin(), t.data().end()) - t.data().begin());
}

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace

std::string RunRecord::epochs_csv() const {
  std::ostringstream out;
  out << "epoch,lr,train_loss,train_acc,val_loss,val_acc\n";
  for (const auto& e : epochs) {
    out << e.epoch << ',' << fmt_g(e.lr) << ',' << fmt(e.train_loss) << ',' << fmt(e.train_accuracy) << ','
        << fmt(e.val_loss) << ',' << fmt(e.val_accuracy) << '\n';
  }
  return out.str();
}

std::string RunRecord::to_jsonl() const {
  std::ostringstream out;
  for (const auto& e : epochs) {
    out << "{\"epoch\":" << e.epoch << ",\"lr\":" << fmt_g(e.lr) << ",\"train_loss\":" << fmt(e.train_loss)
        << ",\"train_acc\":" << fmt(e.train_accuracy) << ",\"val_loss\":" << fmt(e.val_loss)
        << ",\"val_acc\":" << fmt(e.val_accuracy) << "}\n";
  }
  out << "{\"summary\":true,\"seed\":" << seed << ",\"best_epoch\":" << best_epoch
      << ",\"test_loss\":" << fmt(test_loss) << ",\"test_acc\":" << fmt(test_accuracy)
      << ",\"wall_seconds\":" << fmt(wall_seconds) << "}\n";
  return out.str();
}

Evaluation evaluate(const FusionNetwork& net, std::span<const Sample> samples) {
  Evaluation ev;
  if (samples.empty()) return ev;
  std::size_t correct = 0;
  for (const auto& s : samples) {
    Tape tape;
    const auto bound = net.bind(tape, Binding::Frozen);
    Var logits = net.forward(tape, bound, s.inputs);
    ev.loss += cross_entropy(logits, s.label).value()[0];
    if (argmax(logits.value()) == s.label) ++correct;
  }
  ev.loss /= static_cast<double>(samples.size());
  ev.accuracy = static_cast<double>(correct) / static_cast<double>(samples.size());
  return ev;
}

Var batch_loss(const FusionNetwork& net, Tape& tape, const FusionNetwork::Bound& bound,
               std::span<const Sample* const> batch, double excitation_decay, BatchStats* stats) {
  if (batch.empty()) throw UsageError("batch_loss: empty batch");
  std::vector<Var> losses;
  losses.reserve(batch.size());
  for (const Sample* s : batch) {
    ForwardTrace trace;
    Var logits = net.forward(tape, bound, s->inputs, &trace);
    Var ce = cross_entropy(logits, s->label);
    if (stats) {
      stats->cross_entropy_sum += ce.value()[0];
      if (argmax(logits.value()) == s->label) ++stats->correct;
    }
    if (excitation_decay > 0.0 && !trace.excitations.empty()) {
      ce = add(ce, excitation_penalty(trace.excitations, excitation_decay));
    }
    losses.push_back(ce);
  }
  return scale(sum(concat_channels(losses)), 1.0 / static_cast<double>(losses.size()));
}

PlateauSchedule::PlateauSchedule(const TrainConfig& config)
    : lr_(config.base_lr),
      factor_(config.lr_drop_factor),
      min_lr_(config.min_lr),
      min_delta_(config.min_delta),
      patience_(config.patience),
      best_(std::numeric_limits<double>::infinity()) {}

bool PlateauSchedule::step(double val_loss) {
  if (val_loss < best_ - min_delta_) {
    best_ = val_loss;
    wait_ = 0;
    return false;
  }
  if (++wait_ < patience_) return false;
  wait_ = 0;
  const double next = lr_ / factor_;
  if (next < min_lr_) return false;
  lr_ = next;
  ++drops_;
  return true;
}

RunRecord train(FusionNetwork& net, const Dataset& data, const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  if (data.train.empty()) throw ConfigError("training split is empty");
  const auto start = std::chrono::steady_clock::now();

  RunRecord record;
  record.seed = config.seed;

  auto params = net.parameters();
  std::vector<std::vector<double>> velocity;
  for (const auto& p : params) velocity.emplace_back(p.tensor->size(), 0.0);

  auto snapshot = [&params]() {
    std::vector<Tensor> s;
    for (const auto& p : params) s.push_back(*p.tensor);
    return s;
  };

  {
    const Evaluation tr = evaluate(net, data.train);
    const Evaluation va = evaluate(net, data.val);
    EpochRecord e{0, config.base_lr, tr.loss, tr.accuracy, va.loss, va.accuracy};
    record.epochs.push_back(e);
    if (on_epoch) on_epoch(e);
  }
  std::vector<Tensor> best_params = snapshot();
  double best_acc = record.epochs[0].val_accuracy;
  double best_loss = record.epochs[0].val_loss;

  PlateauSchedule schedule(config);
  Rng order_rng(derive_seed(config.seed, 3));
  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const double lr = schedule.lr();
    std::shuffle(order.begin(), order.end(), order_rng);
    double loss_sum = 0.0;
    std::size_t correct = 0;

    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      Tape tape;
      const auto bound = net.bind(tape, Binding::Trainable);
      std::vector<const Sample*> batch;
      for (std::size_t i = begin; i < end; ++i) batch.push_back(&data.train[order[i]]);
      BatchStats stats;
      Var loss = batch_loss(net, tape, bound, batch, config.excitation_decay, &stats);
      loss_sum += stats.cross_entropy_sum;
      correct += stats.correct;
      if (!std::isfinite(loss.value()[0])) {
        std::string culprit = "the loss itself (all parameters finite)";
        for (const auto& p : params) {
          if (!all_finite(p.tensor->data())) {
            culprit = "parameter " + p.name;
            break;
          }
        }
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", batch starting at sample " +
                           std::to_string(begin) + "; first offending component: " + culprit);
      }
      tape.backward(loss);
      for (std::size_t k = 0; k < params.size(); ++k) {
        const Tensor g = tape.grad(bound.all[k]);
        if (!all_finite(g.data())) {
          throw NumericError("non-finite gradient at epoch " + std::to_string(epoch) + " in parameter " +
                             params[k].name);
        }
        auto w = params[k].tensor->data();
        auto& v = velocity[k];
        for (std::size_t i = 0; i < w.size(); ++i) {
          const double grad = g[i] + config.weight_decay * w[i];
          v[i] = config.momentum * v[i] + grad;
          w[i] -= lr * v[i];
        }
      }
    }

    const Evaluation va = evaluate(net, data.val);
    EpochRecord e{epoch, lr, loss_sum / static_cast<double>(order.size()),
                  static_cast<double>(correct) / static_cast<double>(order.size()), va.loss, va.accuracy};
    record.epochs.push_back(e);
    if (on_epoch) on_epoch(e);
    if (va.accuracy > best_acc || (va.accuracy == best_acc && va.loss < best_loss)) {
      best_acc = va.accuracy;
      best_loss = va.loss;
      best_params = snapshot();
      record.best_epoch = epoch;
    }
    schedule.step(va.loss);
  }

  for (std::size_t k = 0; k < params.size(); ++k) *params[k].tensor = best_params[k];
  const Evaluation te = evaluate(net, data.test);
  record.test_loss = te.loss;
  record.test_accuracy = te.accuracy;
  record.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return record;
}

}  // namespace mmtm
