#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "hsic/model.hpp"
#include "hsic/optim.hpp"
#include "hsic/pipeline.hpp"

namespace hsic {

struct TrainConfig {
  std::size_t batch_size = 256;
  std::size_t epochs = 100;
  double learning_rate = 0.001;
  std::uint64_t shuffle_seed = 2;
  /// Share of each class held out of the training partition for the
  /// validation columns of the history.
  double validation_fraction = 0.1;
  /// Workers for per-sample gradients within a batch. Results are bitwise
  /// reproducible for a fixed thread count.
  std::size_t threads = 1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-7;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0;  // mean per-sample loss during the updates (dropout on)
  double train_acc = 0;   // eval-mode accuracy on the training samples after the epoch
  double val_loss = 0;    // NaN without a validation split
  double val_acc = 0;
  double seconds = 0;
};

struct History {
  std::vector<EpochRecord> epochs;

  /// `epoch,train_loss,train_acc,val_loss,val_acc,seconds`, one row per epoch.
  std::string to_csv() const;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Mini-batch Adam training. Each epoch reshuffles the training samples with
/// a generator derived from (shuffle_seed, epoch); the last partial batch is
/// kept; the batch gradient is the mean of per-sample gradients.
History train(Model& model, const PatchSet& data, const TrainConfig& config, const EpochCallback& on_epoch = {});

struct EvalResult {
  double loss = 0;
  double accuracy = 0;
  std::vector<std::size_t> predictions;
};

/// Eval-mode pass; argmax with the lowest index winning ties.
EvalResult evaluate(const Model& model, const PatchSet& data, std::size_t threads = 1);

/// Index of the largest logit, lowest index on ties.
std::size_t argmax(const Tensor<float>& logits);

/// Splits [0, n) into `parts` contiguous ranges whose sizes differ by at most one.
std::vector<std::pair<std::size_t, std::size_t>> chunk_ranges(std::size_t n, std::size_t parts);

}  // namespace hsic
