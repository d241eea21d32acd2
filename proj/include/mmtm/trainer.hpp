#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mmtm/network.hpp"
#include "mmtm/synthdata.hpp"

namespace mmtm {

struct TrainConfig {
  double momentum = 0.9;
  double base_lr = 1e-2;
  double lr_drop_factor = 10.0;
  // Epochs without a val-loss improvement of at least min_delta before a drop.
  std::size_t patience = 5;
  double min_delta = 1e-4;
  // No drop may take the learning rate below this.
  double min_lr = 1e-5;
  std::size_t batch_size = 16;
  std::size_t max_epochs = 20;
  double weight_decay = 0.0;
  double excitation_decay = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 0 is the untrained network
  double lr = 0.0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
};

struct RunRecord {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double test_loss = 0.0;
  double test_accuracy = 0.0;
  std::uint64_t seed = 0;
  std::string config_echo;
  double wall_seconds = 0.0;

  // epoch,lr,train_loss,train_acc,val_loss,val_acc
  std::string epochs_csv() const;
  // One JSON object per epoch plus a final summary line.
  std::string to_jsonl() const;
};

struct Evaluation {
  double loss = 0.0;
  double accuracy = 0.0;
};

Evaluation evaluate(const FusionNetwork& net, std::span<const Sample> samples);

struct BatchStats {
  double cross_entropy_sum = 0.0;
  std::size_t correct = 0;
};

// Mean over the batch of cross-entropy plus excitation_decay * sum ||E||^2
// over every fusion point's excitations.
Var batch_loss(const FusionNetwork& net, Tape& tape, const FusionNetwork::Bound& bound,
               std::span<const Sample* const> batch, double excitation_decay, BatchStats* stats = nullptr);

// Learning-rate schedule: divide by the drop factor after `patience` epochs
// without val-loss improvement, never below min_lr.
class PlateauSchedule {
 public:
  explicit PlateauSchedule(const TrainConfig& config);
  double lr() const { return lr_; }
  std::size_t drops() const { return drops_; }
  // Feeds one epoch's val loss; returns true if the rate dropped.
  bool step(double val_loss);

 private:
  double lr_;
  double factor_;
  double min_lr_;
  double min_delta_;
  std::size_t patience_;
  double best_;
  std::size_t wait_ = 0;
  std::size_t drops_ = 0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// SGD with momentum on mean cross-entropy over each batch plus the excitation
// penalty; weight decay is applied in the update. Leaves the network at its
// best-validation-accuracy parameters. Deterministic in (net, data, config).
RunRecord train(FusionNetwork& net, const Dataset& data, const TrainConfig& config,
                const EpochCallback& on_epoch = {});

}  // namespace mmtm
