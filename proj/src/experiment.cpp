#include "hsic/experiment.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <ostream>

namespace hsic {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

template <typename V>
V get_field(const nlohmann::json& j, const char* key) {
  try {
    return j.at(key).get<V>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config key \"") + key + "\": " + e.what());
  }
}

std::string padding_name(Padding p) { return p == Padding::Zero ? "zero" : "valid"; }

Padding parse_padding(const std::string& s) {
  if (s == "zero") return Padding::Zero;
  if (s == "valid") return Padding::Valid;
  throw ConfigError("padding must be \"zero\" or \"valid\", got \"" + s + "\"");
}

struct Prepared {
  DataCube cube;
  ReducedCube reduced;
  PatchSet patches;
  std::size_t classes = 0;
};

Prepared prepare(const ExperimentConfig& cfg, std::size_t window, std::size_t bands, Padding padding,
                 std::ostream& log) {
  if (cfg.dataset.empty() || cfg.labels.empty()) throw ConfigError("--dataset and --labels are required");
  Prepared p;
  auto t0 = Clock::now();
  p.cube = with_stage("hsi-pipeline/load", [&] { return load_cube(cfg.dataset, cfg.labels); });
  p.classes = p.cube.num_classes();
  log << "dataset: " << p.cube.height << " x " << p.cube.width << " pixels, " << p.cube.bands << " bands, "
      << p.classes << " classes, " << p.cube.labeled_pixels() << " labeled pixels\n";
  if (auto geo = preset_geometry(cfg.preset)) {
    const bool spatial_ok = (geo->width == p.cube.width && geo->height == p.cube.height) ||
                            (geo->width == p.cube.height && geo->height == p.cube.width);
    if (!spatial_ok || geo->bands != p.cube.bands || geo->classes != p.classes)
      log << "warning: cube geometry differs from the " << geo->name << " reference (" << geo->height << " x "
          << geo->width << " x " << geo->bands << ", " << geo->classes << " classes)\n";
  }
  if (p.classes < 2) throw DataError("[hsi-pipeline] label grid needs at least two classes");
  if (bands > p.cube.bands)
    throw ConfigError("[hsi-pipeline] cannot keep " + std::to_string(bands) + " PCA bands from a " +
                      std::to_string(p.cube.bands) + "-band cube");

  p.reduced = with_stage("hsi-pipeline/pca", [&] { return pca_reduce(p.cube, bands, cfg.whiten); });
  double kept = 0, total = 0;
  for (double e : p.reduced.eigenvalues) kept += e;
  {
    // Total variance is the trace of the covariance: sum of per-band variances.
    const std::size_t pixels = p.cube.width * p.cube.height, d = p.cube.bands;
    for (std::size_t b = 0; b < d; ++b) {
      double s = 0;
      for (std::size_t i = 0; i < pixels; ++i) {
        const double v = p.cube.values[i * d + b] - p.reduced.mean[b];
        s += v * v;
      }
      total += s / static_cast<double>(pixels > 1 ? pixels - 1 : 1);
    }
  }
  log << "pca: " << p.cube.bands << " -> " << bands << " bands, " << std::fixed << std::setprecision(4)
      << (total > 0 ? 100.0 * kept / total : 100.0) << "% variance kept" << (cfg.whiten ? ", whitened" : "") << '\n'
      << std::defaultfloat;

  p.patches = with_stage("hsi-pipeline/patches",
                         [&] { return extract_patches(p.reduced, p.cube.labels, window, padding, p.classes); });
  log << "patches: " << p.patches.size() << " labeled " << window << "x" << window << "x" << bands << " windows ("
      << padding_name(padding) << " padding, " << candidate_positions(p.cube.width, p.cube.height, window, padding)
      << " candidate centers) in " << std::setprecision(3) << seconds_since(t0) << " s\n"
      << std::defaultfloat;
  return p;
}

RunMetrics metrics_of(const ConfusionMatrix& cm) { return {overall_accuracy(cm), average_accuracy(cm), kappa(cm)}; }

ConfusionMatrix confusion_of(const PatchSet& set, const std::vector<std::size_t>& predictions, std::size_t classes) {
  std::vector<std::size_t> truths(set.size());
  for (std::size_t i = 0; i < set.size(); ++i) truths[i] = set.label(i);
  return with_stage("eval-metrics", [&] { return confusion_matrix(truths, predictions, classes); });
}

ExperimentConfig repeat_config(const ExperimentConfig& cfg, std::size_t r) {
  ExperimentConfig c = cfg;
  c.seed_init += r;
  c.seed_shuffle += r;
  c.seed_split += r;
  c.repeats = 1;
  if (cfg.repeats > 1) c.out = (std::filesystem::path(cfg.out) / ("run_" + std::to_string(r))).string();
  c.checkpoint = (std::filesystem::path(c.out) / "model.hsnm").string();
  return c;
}

}  // namespace

const std::vector<std::string>& ExperimentConfig::keys() {
  static const std::vector<std::string> k = {
      "dataset", "labels", "preset", "checkpoint", "window", "bands", "whiten", "padding",
      "train_fraction", "validation_fraction", "epochs", "batch_size", "lr", "dropout", "variant",
      "seed_init", "seed_shuffle", "seed_split", "repeats", "threads", "out"};
  return k;
}

nlohmann::ordered_json ExperimentConfig::to_json() const {
  nlohmann::ordered_json j;
  j["dataset"] = dataset;
  j["labels"] = labels;
  j["preset"] = preset;
  j["checkpoint"] = checkpoint;
  j["window"] = window;
  j["bands"] = bands;
  j["whiten"] = whiten;
  j["padding"] = padding_name(padding);
  j["train_fraction"] = train_fraction;
  j["validation_fraction"] = validation_fraction;
  j["epochs"] = epochs;
  j["batch_size"] = batch_size;
  j["lr"] = lr;
  j["dropout"] = dropout;
  j["variant"] = to_string(variant);
  j["seed_init"] = seed_init;
  j["seed_shuffle"] = seed_shuffle;
  j["seed_split"] = seed_split;
  j["repeats"] = repeats;
  j["threads"] = threads;
  j["out"] = out;
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config must be a flat JSON object");
  const auto& known = keys();
  for (const auto& [key, value] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw ConfigError("unknown config key \"" + key + "\"");

  ExperimentConfig c;
  if (j.contains("dataset")) c.dataset = get_field<std::string>(j, "dataset");
  if (j.contains("labels")) c.labels = get_field<std::string>(j, "labels");
  if (j.contains("preset")) c.preset = get_field<std::string>(j, "preset");
  if (j.contains("checkpoint")) c.checkpoint = get_field<std::string>(j, "checkpoint");
  if (j.contains("window")) c.window = get_field<std::size_t>(j, "window");
  if (j.contains("whiten")) c.whiten = get_field<bool>(j, "whiten");
  if (j.contains("padding")) c.padding = parse_padding(get_field<std::string>(j, "padding"));
  if (j.contains("train_fraction")) c.train_fraction = get_field<double>(j, "train_fraction");
  if (j.contains("validation_fraction")) c.validation_fraction = get_field<double>(j, "validation_fraction");
  if (j.contains("epochs")) c.epochs = get_field<std::size_t>(j, "epochs");
  if (j.contains("batch_size")) c.batch_size = get_field<std::size_t>(j, "batch_size");
  if (j.contains("lr")) c.lr = get_field<double>(j, "lr");
  if (j.contains("dropout")) c.dropout = get_field<double>(j, "dropout");
  if (j.contains("variant")) c.variant = parse_variant(get_field<std::string>(j, "variant"));
  if (j.contains("seed_init")) c.seed_init = get_field<std::uint64_t>(j, "seed_init");
  if (j.contains("seed_shuffle")) c.seed_shuffle = get_field<std::uint64_t>(j, "seed_shuffle");
  if (j.contains("seed_split")) c.seed_split = get_field<std::uint64_t>(j, "seed_split");
  if (j.contains("repeats")) c.repeats = get_field<std::size_t>(j, "repeats");
  if (j.contains("threads")) c.threads = get_field<std::size_t>(j, "threads");
  if (j.contains("out")) c.out = get_field<std::string>(j, "out");

  if (!c.preset.empty() && !preset_geometry(c.preset))
    throw ConfigError("unknown preset \"" + c.preset + "\" (expected ip, up or sa)");
  if (j.contains("bands"))
    c.bands = get_field<std::size_t>(j, "bands");
  else if (auto geo = preset_geometry(c.preset))
    c.bands = geo->pca_bands;

  if (!(c.train_fraction > 0.0 && c.train_fraction < 1.0)) throw ConfigError("train_fraction must lie in (0, 1)");
  if (!(c.validation_fraction >= 0.0 && c.validation_fraction < 1.0))
    throw ConfigError("validation_fraction must lie in [0, 1)");
  if (c.batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(c.lr >= 0.0) || !std::isfinite(c.lr)) throw ConfigError("lr must be finite and non-negative");
  if (c.repeats == 0) throw ConfigError("repeats must be at least 1");
  if (c.threads == 0) throw ConfigError("threads must be at least 1");
  return c;
}

std::optional<DatasetGeometry> preset_geometry(const std::string& preset) {
  if (preset == "ip") return DatasetGeometry{"Indian Pines", 145, 145, 200, 16, 30};
  if (preset == "up") return DatasetGeometry{"Pavia University", 340, 610, 103, 9, 15};
  if (preset == "sa") return DatasetGeometry{"Salinas", 217, 512, 204, 16, 15};
  return std::nullopt;
}

TrainOutcome run_train(const ExperimentConfig& cfg, std::ostream& log) {
  ModelConfig probe{cfg.window, cfg.bands, 2, cfg.dropout, cfg.seed_init, cfg.variant};
  with_stage("model", [&] { probe.validate(); });

  log << "resolved config:\n" << cfg.to_json().dump(2) << '\n';
  Prepared data = prepare(cfg, cfg.window, cfg.bands, cfg.padding, log);

  TrainOutcome outcome;
  for (std::size_t r = 0; r < cfg.repeats; ++r) {
    const ExperimentConfig rc = repeat_config(cfg, r);
    std::filesystem::create_directories(rc.out);
    if (cfg.repeats > 1) log << "== run " << r + 1 << " of " << cfg.repeats << " (" << rc.out << ")\n";

    auto [train_set, test_set] =
        with_stage("hsi-pipeline/split", [&] { return split_stratified(data.patches, rc.train_fraction, rc.seed_split); });
    log << "split: " << train_set.size() << " train / " << test_set.size() << " test\n";

    ModelConfig mc{rc.window, rc.bands, data.classes, rc.dropout, rc.seed_init, rc.variant};
    Model model = with_stage("model", [&] { return Model(mc); });
    log << "model: " << model.param_count() << " trainable parameters\n";

    TrainConfig tc;
    tc.batch_size = rc.batch_size;
    tc.epochs = rc.epochs;
    tc.learning_rate = rc.lr;
    tc.shuffle_seed = rc.seed_shuffle;
    tc.validation_fraction = rc.validation_fraction;
    tc.threads = rc.threads;

    const auto t_train = Clock::now();
    History history = with_stage("optim-train", [&] {
      return train(model, train_set, tc, [&](const EpochRecord& e) {
        log << "epoch " << std::setw(3) << e.epoch << "  loss " << std::fixed << std::setprecision(4) << e.train_loss
            << "  acc " << e.train_acc << "  val_loss " << e.val_loss << "  val_acc " << e.val_acc << "  "
            << std::setprecision(1) << e.seconds << " s\n"
            << std::defaultfloat;
        log.flush();
      });
    });
    const double train_seconds = seconds_since(t_train);

    const auto t_test = Clock::now();
    const EvalResult test = with_stage("optim-train/evaluate", [&] { return evaluate(model, test_set, rc.threads); });
    const double test_seconds = seconds_since(t_test);

    const ConfusionMatrix cm = confusion_of(test_set, test.predictions, data.classes);
    const RunMetrics m = with_stage("eval-metrics", [&] { return metrics_of(cm); });
    outcome.runs.push_back(m);

    const std::filesystem::path dir(rc.out);
    model_save(model, dir / "model.hsnm");
    write_text(dir / "history.csv", history.to_csv());
    write_text(dir / "metrics.json", with_stage("eval-metrics", [&] { return metrics_json(cm); }));
    write_text(dir / "confusion.csv", confusion_csv(cm));
    write_text(dir / "resolved_config.json", rc.to_json().dump(2) + "\n");

    log << std::fixed << std::setprecision(2) << "train time " << train_seconds / 60.0 << " min, test time "
        << test_seconds << " s\n"
        << std::setprecision(4) << "test OA " << 100 * m.oa << "  AA " << 100 * m.aa << "  Kappa " << 100 * m.kappa
        << '\n'
        << std::defaultfloat;
  }

  const double n = static_cast<double>(outcome.runs.size());
  for (const auto& m : outcome.runs) {
    outcome.mean.oa += m.oa / n;
    outcome.mean.aa += m.aa / n;
    outcome.mean.kappa += m.kappa / n;
  }
  if (outcome.runs.size() > 1) {
    for (const auto& m : outcome.runs) {
      outcome.stddev.oa += (m.oa - outcome.mean.oa) * (m.oa - outcome.mean.oa) / (n - 1);
      outcome.stddev.aa += (m.aa - outcome.mean.aa) * (m.aa - outcome.mean.aa) / (n - 1);
      outcome.stddev.kappa += (m.kappa - outcome.mean.kappa) * (m.kappa - outcome.mean.kappa) / (n - 1);
    }
    outcome.stddev.oa = std::sqrt(outcome.stddev.oa);
    outcome.stddev.aa = std::sqrt(outcome.stddev.aa);
    outcome.stddev.kappa = std::sqrt(outcome.stddev.kappa);

    nlohmann::ordered_json s;
    s["repeats"] = outcome.runs.size();
    for (const char* key : {"oa", "aa", "kappa"}) {
      auto pick = [&](const RunMetrics& m) { return std::string(key) == "oa" ? m.oa : key[0] == 'a' ? m.aa : m.kappa; };
      s[key] = {{"mean", pick(outcome.mean)}, {"std", pick(outcome.stddev)}};
    }
    std::filesystem::create_directories(cfg.out);
    write_text(std::filesystem::path(cfg.out) / "summary.json", s.dump(2) + "\n");
    log << std::fixed << std::setprecision(2) << "mean over " << outcome.runs.size() << " runs: OA "
        << 100 * outcome.mean.oa << " +/- " << 100 * outcome.stddev.oa << "  AA " << 100 * outcome.mean.aa << " +/- "
        << 100 * outcome.stddev.aa << "  Kappa " << 100 * outcome.mean.kappa << " +/- " << 100 * outcome.stddev.kappa
        << '\n'
        << std::defaultfloat;
  }
  return outcome;
}

namespace {

Model load_compatible(const ExperimentConfig& cfg, bool window_set, bool bands_set) {
  if (cfg.checkpoint.empty()) throw ConfigError("--checkpoint is required");
  Model model = with_stage("model/load", [&] { return model_load(cfg.checkpoint); });
  const ModelConfig& mc = model.config();
  if (window_set && mc.window != cfg.window)
    throw ConfigError("[cli] checkpoint window " + std::to_string(mc.window) + " does not match configured window " +
                      std::to_string(cfg.window));
  if (bands_set && mc.bands != cfg.bands)
    throw ConfigError("[cli] checkpoint expects " + std::to_string(mc.bands) + " PCA bands, config asks for " +
                      std::to_string(cfg.bands));
  return model;
}

void check_classes(const Model& model, std::size_t classes) {
  if (model.config().classes != classes)
    throw ConfigError("[cli] checkpoint has " + std::to_string(model.config().classes) + " classes, dataset has " +
                      std::to_string(classes));
}

}  // namespace

RunMetrics run_evaluate(const ExperimentConfig& cfg, std::ostream& log) {
  const Model model = load_compatible(cfg, true, true);
  const ModelConfig& mc = model.config();
  Prepared data = prepare(cfg, mc.window, mc.bands, cfg.padding, log);
  check_classes(model, data.classes);
  if (mc.bands > data.cube.bands) throw ConfigError("[cli] checkpoint bands exceed the cube's bands");

  auto [train_set, test_set] =
      with_stage("hsi-pipeline/split", [&] { return split_stratified(data.patches, cfg.train_fraction, cfg.seed_split); });
  const EvalResult test = with_stage("optim-train/evaluate", [&] { return evaluate(model, test_set, cfg.threads); });
  const ConfusionMatrix cm = confusion_of(test_set, test.predictions, data.classes);
  const RunMetrics m = with_stage("eval-metrics", [&] { return metrics_of(cm); });

  std::filesystem::create_directories(cfg.out);
  const std::filesystem::path dir(cfg.out);
  write_text(dir / "eval_metrics.json", metrics_json(cm));
  write_text(dir / "eval_confusion.csv", confusion_csv(cm));
  log << std::fixed << std::setprecision(4) << "test samples " << test_set.size() << "  OA " << 100 * m.oa << "  AA "
      << 100 * m.aa << "  Kappa " << 100 * m.kappa << '\n'
      << std::defaultfloat;
  return m;
}

double run_map(const ExperimentConfig& cfg, std::ostream& log) {
  const Model model = load_compatible(cfg, true, true);
  const ModelConfig& mc = model.config();
  Prepared data = prepare(cfg, mc.window, mc.bands, Padding::Zero, log);
  check_classes(model, data.classes);

  const EvalResult all = with_stage("optim-train/evaluate", [&] { return evaluate(model, data.patches, cfg.threads); });
  std::vector<std::uint16_t> predicted(data.cube.labels.size(), 0);
  for (std::size_t i = 0; i < data.patches.size(); ++i) {
    const PatchEntry& e = data.patches.entry(i);
    predicted[e.row * data.cube.width + e.col] = static_cast<std::uint16_t>(all.predictions[i] + 1);
  }

  std::filesystem::create_directories(cfg.out);
  const std::filesystem::path dir(cfg.out);
  with_stage("eval-metrics/render", [&] {
    write_ppm(render_map(predicted, data.cube.width, data.cube.height, data.classes), dir / "map_pred.ppm");
    write_ppm(render_map(data.cube.labels, data.cube.width, data.cube.height, data.classes), dir / "map_truth.ppm");
  });
  log << "wrote " << (dir / "map_pred.ppm").string() << " and " << (dir / "map_truth.ppm").string() << " ("
      << data.cube.width << " x " << data.cube.height << ")\n"
      << std::fixed << std::setprecision(4) << "map accuracy over " << data.patches.size() << " labeled pixels: "
      << 100 * all.accuracy << "%\n"
      << std::defaultfloat;
  return all.accuracy;
}

std::string run_info(const ExperimentConfig& cfg, std::size_t classes) {
  if (!cfg.checkpoint.empty()) {
    const Model model = with_stage("model/load", [&] { return model_load(cfg.checkpoint); });
    std::string text = format_summary(model.config());
    if (model.param_count() != model_param_count(model.config()))
      throw StateError("checkpoint tensors disagree with the layer table");
    return text;
  }
  ModelConfig mc{cfg.window, cfg.bands, classes, cfg.dropout, cfg.seed_init, cfg.variant};
  return with_stage("model", [&] { return format_summary(mc); });
}

int exit_code_for(ErrorFamily family) {
  switch (family) {
    case ErrorFamily::Config:
    case ErrorFamily::Parameter: return 2;
    case ErrorFamily::Data:
    case ErrorFamily::Load:
    case ErrorFamily::Io:
    case ErrorFamily::Label:
    case ErrorFamily::Input:
    case ErrorFamily::Shape: return 3;
    case ErrorFamily::Numeric:
    case ErrorFamily::Metric: return 4;
    case ErrorFamily::State: return 1;
  }
  return 1;
}

}  // namespace hsic
