#include <fstream>
#include <iostream>
#include <memory>
#include <string>

#include "CLI11.hpp"
#include "hsic/experiment.hpp"

namespace {

using hsic::ExperimentConfig;
using nlohmann::json;

/// Command-line values that override the config file, keyed like the JSON.
struct Overrides {
  std::string config_path;
  json values = json::object();
};

template <typename T>
void flag(CLI::App* app, Overrides& ov, const std::string& name, const std::string& key, const std::string& help) {
  app->add_option_function<T>(name, [&ov, key](const T& v) { ov.values[key] = v; }, help);
}

void add_experiment_flags(CLI::App* app, Overrides& ov) {
  app->add_option("--config", ov.config_path, "Flat JSON config file; flags override its values");
  flag<std::string>(app, ov, "--dataset", "dataset", "HSC cube file");
  flag<std::string>(app, ov, "--labels", "labels", "HSG label grid file");
  app->add_option_function<std::string>(
         "--preset", [&ov](const std::string& v) { ov.values["preset"] = v; },
         "Reference scene (ip, up, sa): sets the default PCA band count")
      ->check(CLI::IsMember({"ip", "up", "sa"}));
  flag<std::string>(app, ov, "--checkpoint", "checkpoint", "Model checkpoint (.hsnm)");
  flag<std::size_t>(app, ov, "--window", "window", "Spatial window S (odd)");
  flag<std::size_t>(app, ov, "--bands", "bands", "PCA bands B");
  app->add_flag_function(
      "--whiten,!--no-whiten", [&ov](std::int64_t n) { ov.values["whiten"] = n > 0; },
      "Scale PCA scores to unit variance (default on)");
  app->add_option_function<std::string>(
         "--padding", [&ov](const std::string& v) { ov.values["padding"] = v; }, "Border handling: valid or zero")
      ->check(CLI::IsMember({"valid", "zero"}));
  flag<double>(app, ov, "--train-fraction", "train_fraction", "Per-class training share");
  flag<double>(app, ov, "--validation-fraction", "validation_fraction", "Share of training samples held out");
  flag<std::size_t>(app, ov, "--epochs", "epochs", "Training epochs");
  flag<std::size_t>(app, ov, "--batch-size", "batch_size", "Mini-batch size");
  flag<double>(app, ov, "--lr", "lr", "Adam learning rate");
  flag<double>(app, ov, "--dropout", "dropout", "Dropout rate");
  app->add_option_function<std::string>(
         "--variant", [&ov](const std::string& v) { ov.values["variant"] = v; }, "Architecture: hybrid, 3d or 2d")
      ->check(CLI::IsMember({"hybrid", "3d", "2d"}));
  flag<std::uint64_t>(app, ov, "--seed-init", "seed_init", "Weight initialization seed");
  flag<std::uint64_t>(app, ov, "--seed-shuffle", "seed_shuffle", "Batch order and dropout seed");
  flag<std::uint64_t>(app, ov, "--seed-split", "seed_split", "Train/test split seed");
  flag<std::size_t>(app, ov, "--repeats", "repeats", "Independent runs with offset seeds");
  flag<std::size_t>(app, ov, "--threads", "threads", "Worker threads (deterministic per count)");
  flag<std::string>(app, ov, "--out", "out", "Output directory");
}

ExperimentConfig resolve(const Overrides& ov) {
  json base = json::object();
  if (!ov.config_path.empty()) {
    std::ifstream in(ov.config_path);
    if (!in) throw hsic::ConfigError("cannot open config file " + ov.config_path);
    try {
      base = json::parse(in);
    } catch (const json::exception& e) {
      throw hsic::ConfigError("config file " + ov.config_path + ": " + e.what());
    }
    if (!base.is_object()) throw hsic::ConfigError("config file " + ov.config_path + " is not a JSON object");
  }
  base.update(ov.values);
  return hsic::with_stage("cli/config", [&] { return ExperimentConfig::from_json(base); });
}

void print_resolved(const ExperimentConfig& cfg) { std::cout << "resolved config:\n" << cfg.to_json().dump(2) << '\n'; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hyperspectral image classification with a 3D/2D convolutional network"};
  app.require_subcommand(1);

  Overrides train_ov, eval_ov, map_ov, info_ov;
  auto* train_cmd = app.add_subcommand("train", "Load, reduce, split, train and score on the test partition");
  add_experiment_flags(train_cmd, train_ov);
  auto* eval_cmd = app.add_subcommand("evaluate", "Score a checkpoint on the regenerated test partition");
  add_experiment_flags(eval_cmd, eval_ov);
  auto* map_cmd = app.add_subcommand("map", "Write predicted and ground-truth class maps as PPM");
  add_experiment_flags(map_cmd, map_ov);
  auto* info_cmd = app.add_subcommand("info", "Print the per-layer summary of a checkpoint or config");
  add_experiment_flags(info_cmd, info_ov);
  std::size_t info_classes = 0;
  info_cmd->add_option("--classes", info_classes, "Class count when no checkpoint is given (default 16)");

  hsic::SyntheticSpec synth;
  std::string synth_out = "synthetic";
  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic block-labeled cube as HSC/HSG files");
  synth_cmd->add_option("--width", synth.width)->check(CLI::PositiveNumber);
  synth_cmd->add_option("--height", synth.height)->check(CLI::PositiveNumber);
  synth_cmd->add_option("--bands", synth.bands)->check(CLI::PositiveNumber);
  synth_cmd->add_option("--classes", synth.classes)->check(CLI::PositiveNumber);
  synth_cmd->add_option("--block", synth.block)->check(CLI::PositiveNumber);
  synth_cmd->add_option("--background", synth.background_fraction);
  synth_cmd->add_option("--noise", synth.noise);
  synth_cmd->add_option("--seed", synth.seed);
  synth_cmd->add_option("--out", synth_out, "Output directory (cube.hsc, labels.hsg)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : hsic::exit_code_for(hsic::ErrorFamily::Config);
  }

  try {
    if (*train_cmd) {
      const auto outcome = hsic::run_train(resolve(train_ov), std::cout);
      (void)outcome;
    } else if (*eval_cmd) {
      const ExperimentConfig cfg = resolve(eval_ov);
      print_resolved(cfg);
      hsic::run_evaluate(cfg, std::cout);
    } else if (*map_cmd) {
      const ExperimentConfig cfg = resolve(map_ov);
      print_resolved(cfg);
      hsic::run_map(cfg, std::cout);
    } else if (*info_cmd) {
      const ExperimentConfig cfg = resolve(info_ov);
      std::size_t classes = info_classes;
      if (classes == 0) classes = hsic::preset_geometry(cfg.preset) ? hsic::preset_geometry(cfg.preset)->classes : 16;
      std::cout << hsic::run_info(cfg, classes);
    } else if (*synth_cmd) {
      const hsic::DataCube cube = hsic::with_stage("hsi-pipeline/synthetic", [&] { return hsic::synthetic_cube(synth); });
      std::filesystem::create_directories(synth_out);
      const std::filesystem::path dir(synth_out);
      hsic::save_cube_values(cube, dir / "cube.hsc");
      hsic::save_cube_labels(cube, dir / "labels.hsg");
      std::cout << "wrote " << (dir / "cube.hsc").string() << " and " << (dir / "labels.hsg").string() << " ("
                << cube.height << " x " << cube.width << " x " << cube.bands << ", " << cube.num_classes()
                << " classes, " << cube.labeled_pixels() << " labeled pixels)\n";
    }
  } catch (const hsic::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return hsic::exit_code_for(e.family());
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return hsic::exit_code_for(hsic::ErrorFamily::Io);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
