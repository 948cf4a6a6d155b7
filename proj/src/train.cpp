#include "hsic/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>
#include <mutex>
#include <thread>

namespace hsic {

namespace {

constexpr std::uint64_t kValidationStream = 0x76616c;  // "val"

struct Worker {
  ForwardCache<float> cache;
  GradientSet<float> grads;
  Tensor<float> patch;
  double loss_sum = 0;
};

/// Holds out round-half-up(fraction * n) samples of each class, leaving at
/// least one behind for training.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> carve_validation(const PatchSet& data, double fraction,
                                                                               std::uint64_t seed) {
  std::vector<std::size_t> train, val;
  if (fraction <= 0.0) {
    train.resize(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) train[i] = i;
    return {train, val};
  }
  std::vector<std::vector<std::size_t>> by_class(data.classes());
  for (std::size_t i = 0; i < data.size(); ++i) by_class[data.label(i)].push_back(i);
  Rng rng(seed);
  for (auto& members : by_class) {
    if (members.empty()) continue;
    auto hold = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(members.size()) + 0.5));
    hold = std::min(hold, members.size() - 1);
    std::shuffle(members.begin(), members.end(), rng);
    val.insert(val.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(hold));
    train.insert(train.end(), members.begin() + static_cast<std::ptrdiff_t>(hold), members.end());
  }
  std::sort(train.begin(), train.end());
  std::sort(val.begin(), val.end());
  return {train, val};
}

template <typename Fn>
void run_chunks(const std::vector<std::pair<std::size_t, std::size_t>>& chunks, Fn&& fn) {
  if (chunks.size() == 1) {
    fn(0, chunks[0].first, chunks[0].second);
    return;
  }
  std::vector<std::thread> pool;
  std::exception_ptr error;
  std::mutex error_mutex;
  for (std::size_t w = 0; w < chunks.size(); ++w)
    pool.emplace_back([&, w] {
      try {
        fn(w, chunks[w].first, chunks[w].second);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace

std::vector<std::pair<std::size_t, std::size_t>> chunk_ranges(std::size_t n, std::size_t parts) {
  parts = std::max<std::size_t>(1, std::min(parts, std::max<std::size_t>(n, 1)));
  std::vector<std::pair<std::size_t, std::size_t>> ranges;
  std::size_t begin = 0;
  for (std::size_t p = 0; p < parts; ++p) {
    const std::size_t len = n / parts + (p < n % parts ? 1 : 0);
    ranges.emplace_back(begin, begin + len);
    begin += len;
  }
  return ranges;
}

std::size_t argmax(const Tensor<float>& logits) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i)
    if (logits[i] > logits[best]) best = i;
  return best;
}

std::string History::to_csv() const {
  std::ostringstream os;
  os << "epoch,train_loss,train_acc,val_loss,val_acc,seconds\n";
  os << std::setprecision(9);
  for (const auto& r : epochs)
    os << r.epoch << ',' << r.train_loss << ',' << r.train_acc << ',' << r.val_loss << ',' << r.val_acc << ','
       << r.seconds << '\n';
  return os.str();
}

EvalResult evaluate(const Model& model, const PatchSet& data, std::size_t threads) {
  if (data.empty()) throw DataError("cannot evaluate on an empty dataset");
  if (data.classes() > model.config().classes)
    throw LabelError("dataset has " + std::to_string(data.classes()) + " classes, model has " +
                     std::to_string(model.config().classes));
  std::vector<double> losses(data.size());
  EvalResult result;
  result.predictions.resize(data.size());
  const auto chunks = chunk_ranges(data.size(), threads);
  run_chunks(chunks, [&](std::size_t, std::size_t begin, std::size_t end) {
    Tensor<float> patch;
    for (std::size_t i = begin; i < end; ++i) {
      data.patch_into(i, patch);
      const Tensor<float> logits = model.forward(patch, Mode::Eval);
      losses[i] = softmax_cross_entropy(logits, data.label(i)).loss;
      result.predictions[i] = argmax(logits);
    }
  });
  double loss = 0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    loss += losses[i];
    correct += result.predictions[i] == data.label(i) ? 1 : 0;
  }
  result.loss = loss / static_cast<double>(data.size());
  result.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
  return result;
}

History train(Model& model, const PatchSet& data, const TrainConfig& config, const EpochCallback& on_epoch) {
  if (data.empty()) throw DataError("cannot train on an empty dataset");
  if (config.batch_size == 0) throw ConfigError("batch size must be positive");
  if (!(config.learning_rate >= 0.0) || !std::isfinite(config.learning_rate))
    throw ConfigError("learning rate must be a finite non-negative number");
  if (!(config.validation_fraction >= 0.0 && config.validation_fraction < 1.0))
    throw ConfigError("validation fraction must lie in [0, 1)");
  for (const auto& e : data.entries())
    if (e.label >= model.config().classes)
      throw LabelError("label " + std::to_string(e.label) + " out of range for " +
                       std::to_string(model.config().classes) + " classes");

  History history;
  if (config.epochs == 0) return history;

  auto [train_idx, val_idx] =
      carve_validation(data, config.validation_fraction, derive_seed(config.shuffle_seed, kValidationStream));
  const PatchSet train_set = data.subset(train_idx);
  const PatchSet val_set = data.subset(val_idx);

  auto params = model.parameters();
  std::vector<const Tensor<float>*> const_params(params.begin(), params.end());
  AdamState<float> adam(const_params, {config.learning_rate, config.beta1, config.beta2, config.epsilon});

  const std::size_t workers = std::max<std::size_t>(1, std::min(config.threads, config.batch_size));
  std::vector<Worker> pool(workers);
  for (auto& w : pool) w.grads = model.zero_gradients();

  std::vector<std::size_t> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    Rng shuffle_rng(derive_seed(config.shuffle_seed, epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double epoch_loss = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += config.batch_size) {
      const std::size_t b1 = std::min(order.size(), b0 + config.batch_size);
      const auto chunks = chunk_ranges(b1 - b0, workers);
      run_chunks(chunks, [&](std::size_t w, std::size_t begin, std::size_t end) {
        Worker& wk = pool[w];
        for (auto& g : wk.grads) g.fill(0.0f);
        wk.loss_sum = 0;
        for (std::size_t k = b0 + begin; k < b0 + end; ++k) {
          const std::size_t idx = order[k];
          train_set.patch_into(idx, wk.patch);
          Rng drop_rng(derive_seed(config.shuffle_seed, epoch, k + 1));
          const Tensor<float> logits = model.forward(wk.patch, Mode::Train, &drop_rng, &wk.cache);
          auto loss = softmax_cross_entropy(logits, train_set.label(idx));
          if (!std::isfinite(loss.loss))
            throw NumericError("non-finite training loss at epoch " + std::to_string(epoch));
          wk.loss_sum += loss.loss;
          model.backward(wk.cache, loss.grad_logits, wk.grads);
        }
      });

      GradientSet<float>& total = pool[0].grads;
      for (std::size_t w = 1; w < chunks.size(); ++w)
        for (std::size_t p = 0; p < total.size(); ++p) {
          float* dst = total[p].data();
          const float* src = pool[w].grads[p].data();
          for (std::size_t i = 0; i < total[p].size(); ++i) dst[i] += src[i];
        }
      const float scale = 1.0f / static_cast<float>(b1 - b0);
      for (auto& g : total)
        for (float& x : g.values()) x *= scale;
      for (std::size_t w = 0; w < chunks.size(); ++w) epoch_loss += pool[w].loss_sum;

      adam_step<float>(params, total, adam);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = epoch_loss / static_cast<double>(order.size());
    if (!std::isfinite(rec.train_loss)) throw NumericError("non-finite training loss at epoch " + std::to_string(epoch));
    rec.train_acc = evaluate(model, train_set, workers).accuracy;
    if (!val_set.empty()) {
      const auto v = evaluate(model, val_set, workers);
      rec.val_loss = v.loss;
      rec.val_acc = v.accuracy;
    } else {
      rec.val_loss = rec.val_acc = std::numeric_limits<double>::quiet_NaN();
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    history.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return history;
}

}  // namespace hsic
