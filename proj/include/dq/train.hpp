#pragma once

// Momentum-SGD training with milestone learning-rate decay, the regularized
// objective from the model's RegConfig, and optional adversarial training.

#include <cstdint>
#include <functional>
#include <vector>

#include "dq/data.hpp"
#include "dq/defenses.hpp"
#include "dq/optim.hpp"

namespace dq {

struct TrainConfig {
  int epochs = 200;
  double lr = 0.1;
  double decay = 0.2;
  std::vector<int> milestones{60, 120, 160};
  double momentum = 0.9;
  std::size_t batch_size = 128;
  std::uint64_t seed = 0;
  bool augment = false;  // random horizontal flip + 2-pixel shift

  void validate() const;
};

// lr * decay^(number of milestones <= epoch); epochs count from 0.
double learning_rate_at(const TrainConfig& cfg, int epoch);

struct EpochStats {
  int epoch = 0;
  double lr = 0;
  double loss = 0;      // mean regularized loss over batches
  double accuracy = 0;  // training accuracy in percent, on the (possibly adversarial) batches
};

struct TrainResult {
  std::vector<EpochStats> curve;
};

using EpochHook = std::function<void(const EpochStats&, const Model&)>;

class Trainer {
 public:
  Trainer(Model& model, TrainConfig cfg);

  // One pass over the data. Non-finite loss raises NumericError naming the
  // epoch and batch.
  EpochStats run_epoch(const Dataset& data, int epoch, const AdvTrainConfig* adv = nullptr);

  const TrainConfig& config() const noexcept { return cfg_; }

 private:
  Model& model_;
  TrainConfig cfg_;
  std::vector<Tensor<float>> params_;
  SgdMomentum<float> opt_;
};

// Full schedule. `on_milestone` fires after each milestone epoch and after the
// final epoch.
TrainResult train(Model& model, const Dataset& data, const TrainConfig& cfg, const AdvTrainConfig* adv = nullptr,
                  const EpochHook& on_milestone = {});

// One epoch where a `mix` fraction of every batch is replaced by adversarial
// samples crafted against the current weights (R+FGSM or PGD), with eps drawn
// per batch from sample_epsilon(delta).
EpochStats adv_train_epoch(Trainer& trainer, const Dataset& data, int epoch, const AdvTrainConfig& adv);

// Adversarial examples crafted on `source`, scored on `target` (percent).
double transfer_attack(const Classifier& source, const Classifier& target, const Dataset& data,
                       const AttackConfig& atk, std::size_t batch_size = 100);

}  // namespace dq
