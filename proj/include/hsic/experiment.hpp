#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "hsic/metrics.hpp"
#include "hsic/model.hpp"
#include "hsic/pipeline.hpp"
#include "hsic/train.hpp"
#include "json.hpp"

namespace hsic {

/// Every knob of a run. Defaults are the Indian Pines setup: 25x25 windows,
/// 30 PCA bands, 30% training, Adam at 0.001, batch 256, 100 epochs.
struct ExperimentConfig {
  std::string dataset;
  std::string labels;
  std::string preset;  // "", "ip", "up" or "sa"
  std::string checkpoint;
  std::size_t window = 25;
  std::size_t bands = 30;
  bool whiten = true;
  Padding padding = Padding::Zero;
  double train_fraction = 0.3;
  double validation_fraction = 0.1;
  std::size_t epochs = 100;
  std::size_t batch_size = 256;
  double lr = 0.001;
  double dropout = 0.4;
  Variant variant = Variant::Hybrid;
  std::uint64_t seed_init = 1;
  std::uint64_t seed_shuffle = 2;
  std::uint64_t seed_split = 3;
  std::size_t repeats = 1;
  std::size_t threads = 1;
  std::string out = "out";

  nlohmann::ordered_json to_json() const;

  /// Builds a config from a flat JSON object. Unknown keys and wrong types
  /// raise ConfigError. A preset fills in `bands` when the object leaves it out.
  static ExperimentConfig from_json(const nlohmann::json& j);

  /// Keys from_json accepts.
  static const std::vector<std::string>& keys();
};

struct DatasetGeometry {
  std::string name;
  std::size_t width, height, bands, classes, pca_bands;
};

/// Published geometries of the three benchmark scenes.
std::optional<DatasetGeometry> preset_geometry(const std::string& preset);

struct RunMetrics {
  double oa = 0, aa = 0, kappa = 0;
};

struct TrainOutcome {
  std::vector<RunMetrics> runs;
  RunMetrics mean, stddev;
};

/// load -> PCA -> patches -> split -> train -> test, once per repeat.
/// Writes model.hsnm, history.csv, metrics.json, confusion.csv and
/// resolved_config.json under cfg.out (run_<k>/ subdirectories when
/// repeats > 1, plus summary.json).
TrainOutcome run_train(const ExperimentConfig& cfg, std::ostream& log);

/// Re-creates the test partition from the config's split seed and scores the
/// checkpoint on it. Writes eval_metrics.json and eval_confusion.csv.
RunMetrics run_evaluate(const ExperimentConfig& cfg, std::ostream& log);

/// Classifies every labeled pixel and writes map_pred.ppm and map_truth.ppm.
/// Returns the accuracy over all labeled pixels.
double run_map(const ExperimentConfig& cfg, std::ostream& log);

/// Layer table for a checkpoint (when cfg.checkpoint is set) or for the
/// window/bands/classes given.
std::string run_info(const ExperimentConfig& cfg, std::size_t classes);

/// Stage tag for error messages: rethrows any hsic::Error with "[stage] "
/// prepended, keeping its family.
template <typename Fn>
auto with_stage(const char* stage, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const Error& e) {
    throw Error(e.family(), std::string("[") + stage + "] " + e.what());
  }
}

/// Process exit code for an error family.
int exit_code_for(ErrorFamily family);

}  // namespace hsic
