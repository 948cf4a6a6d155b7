#include <cmath>

#include "doctest.h"
#include "hsic/metrics.hpp"
#include "hsic/optim.hpp"
#include "hsic/train.hpp"
#include "support/oracles.hpp"

using hsic::Tensor;

namespace {

hsic::ModelConfig tiny(std::size_t classes = 2, std::uint64_t seed = 1) {
  hsic::ModelConfig c;
  c.window = 9;
  c.bands = 13;
  c.classes = classes;
  c.seed = seed;
  return c;
}

std::vector<Tensor<float>> snapshot(hsic::Model& m) {
  std::vector<Tensor<float>> out;
  for (auto* p : m.parameters()) out.push_back(*p);
  return out;
}

}  // namespace

TEST_CASE("adam: zero gradients leave parameters alone") {
  Tensor<float> theta({3}, {0.5f, -1.0f, 2.0f});
  std::vector<Tensor<float>*> params{&theta};
  std::vector<const Tensor<float>*> cparams{&theta};
  hsic::AdamState<float> state(cparams, {});
  const std::vector<Tensor<float>> grads{Tensor<float>({3})};
  const Tensor<float> before = theta;
  hsic::adam_step<float>(params, grads, state);
  CHECK(theta == before);
  CHECK(state.step == 1);
  CHECK(state.m[0].shape() == theta.shape());
  CHECK(state.v[0].shape() == theta.shape());
}

TEST_CASE("adam: first step from closed form") {
  Tensor<double> theta({1}, 0.0);
  std::vector<Tensor<double>*> params{&theta};
  std::vector<const Tensor<double>*> cparams{&theta};
  hsic::AdamState<double> state(cparams, {0.001, 0.9, 0.999, 1e-7});
  hsic::adam_step<double>(params, std::vector<Tensor<double>>{Tensor<double>({1}, 1.0)}, state);
  CHECK(theta[0] == doctest::Approx(-0.001 / (1.0 + 1e-7)).epsilon(1e-12));

  // Constant gradients keep m_hat = v_hat = g, so every step moves by lr.
  for (int t = 2; t <= 5; ++t) hsic::adam_step<double>(params, std::vector<Tensor<double>>{Tensor<double>({1}, 1.0)}, state);
  CHECK(theta[0] == doctest::Approx(-5 * 0.001 / (1.0 + 1e-7)).epsilon(1e-9));
  CHECK(state.step == 5);
}

TEST_CASE("adam: shape mismatch") {
  Tensor<float> theta({3});
  std::vector<Tensor<float>*> params{&theta};
  std::vector<const Tensor<float>*> cparams{&theta};
  hsic::AdamState<float> state(cparams, {});
  CHECK_THROWS_AS(hsic::adam_step<float>(params, std::vector<Tensor<float>>{Tensor<float>({4})}, state),
                  hsic::ShapeError);
  CHECK_THROWS_AS(hsic::adam_step<float>(params, std::vector<Tensor<float>>{}, state), hsic::ShapeError);
}

TEST_CASE("adam: identical inputs give identical parameters after five steps") {
  auto run = [] {
    std::mt19937_64 rng(21);
    Tensor<float> theta = oracle::random_tensor<float>({40}, rng);
    std::vector<Tensor<float>*> params{&theta};
    std::vector<const Tensor<float>*> cparams{&theta};
    hsic::AdamState<float> state(cparams, {});
    for (int t = 0; t < 5; ++t)
      hsic::adam_step<float>(params, std::vector<Tensor<float>>{oracle::random_tensor<float>({40}, rng)}, state);
    return theta;
  };
  CHECK(run() == run());
}

TEST_CASE("train rejects bad input") {
  hsic::Model model(tiny());
  const hsic::PatchSet data = oracle::two_class_patches(10);
  hsic::TrainConfig cfg;
  cfg.epochs = 1;
  CHECK_THROWS_AS(hsic::train(model, hsic::PatchSet{}, cfg), hsic::DataError);
  hsic::Model small(tiny());
  hsic::TrainConfig bad = cfg;
  bad.batch_size = 0;
  CHECK_THROWS_AS(hsic::train(small, data, bad), hsic::ConfigError);

  // A model with fewer classes than the data's labels.
  const hsic::PatchSet three = [] {
    hsic::SyntheticSpec spec;
    spec.width = spec.height = 18;
    spec.bands = 14;
    spec.classes = 3;
    spec.block = 6;
    spec.background_fraction = 0;
    const auto cube = hsic::synthetic_cube(spec);
    return hsic::extract_patches(hsic::pca_reduce(cube, 13, true), cube.labels, 9, hsic::Padding::Zero);
  }();
  CHECK_THROWS_AS(hsic::train(small, three, cfg), hsic::LabelError);
  CHECK_THROWS_AS(hsic::evaluate(small, hsic::PatchSet{}), hsic::DataError);
}

TEST_CASE("zero epochs return the model unchanged") {
  hsic::Model model(tiny());
  const auto before = snapshot(model);
  hsic::TrainConfig cfg;
  cfg.epochs = 0;
  const auto h = hsic::train(model, oracle::two_class_patches(10), cfg);
  CHECK(h.epochs.empty());
  CHECK(snapshot(model) == before);
}

TEST_CASE("zero learning rate leaves parameters invariant") {
  hsic::Model model(tiny());
  const auto before = snapshot(model);
  hsic::TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 7;
  cfg.learning_rate = 0.0;
  const auto h = hsic::train(model, oracle::two_class_patches(15), cfg);
  CHECK(h.epochs.size() == 2);
  CHECK(snapshot(model) == before);
}

TEST_CASE("training is deterministic and thread results are reproducible") {
  const hsic::PatchSet data = oracle::two_class_patches(30);
  auto run = [&](std::size_t threads) {
    hsic::Model model(tiny(2, 5));
    hsic::TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 16;
    cfg.threads = threads;
    const auto h = hsic::train(model, data, cfg);
    return std::make_pair(snapshot(model), h);
  };
  const auto [a, ha] = run(1);
  const auto [b, hb] = run(1);
  CHECK(a == b);
  REQUIRE(ha.epochs.size() == 3);
  for (std::size_t e = 0; e < 3; ++e) {
    CHECK(ha.epochs[e].train_loss == hb.epochs[e].train_loss);
    CHECK(ha.epochs[e].val_acc == hb.epochs[e].val_acc);
    CHECK(std::isfinite(ha.epochs[e].train_loss));
  }
  const auto [c, hc] = run(3);
  const auto [d, hd] = run(3);
  CHECK(c == d);
  // Different chunking only reorders a float sum.
  for (std::size_t p = 0; p < a.size(); ++p)
    for (std::size_t i = 0; i < a[p].size(); ++i) CHECK(c[p][i] == doctest::Approx(a[p][i]).epsilon(1e-3));
}

TEST_CASE("history csv") {
  hsic::Model model(tiny());
  hsic::TrainConfig cfg;
  cfg.epochs = 2;
  const auto h = hsic::train(model, oracle::two_class_patches(10), cfg);
  const std::string csv = h.to_csv();
  CHECK(csv.rfind("epoch,train_loss,train_acc,val_loss,val_acc,seconds\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
}

TEST_CASE("evaluate: uniform predictor, structure, agreement with the confusion matrix") {
  hsic::ModelConfig c = tiny(16);
  hsic::Model model(c);
  for (auto* p : model.parameters()) p->fill(0.0f);
  const hsic::PatchSet data = oracle::two_class_patches(12);
  const auto r = hsic::evaluate(model, data);
  CHECK(r.loss == doctest::Approx(std::log(16.0)).epsilon(1e-6));
  CHECK(r.predictions.size() == data.size());
  for (std::size_t p : r.predictions) CHECK(p == 0);  // ties go to the lowest index

  hsic::Model trained(tiny(2, 3));
  const auto e = hsic::evaluate(trained, data, 2);
  std::vector<std::size_t> truths;
  for (std::size_t i = 0; i < data.size(); ++i) truths.push_back(data.label(i));
  const auto cm = hsic::confusion_matrix(truths, e.predictions, 2);
  CHECK(e.accuracy == hsic::overall_accuracy(cm));
  CHECK(hsic::evaluate(trained, data, 1).predictions == e.predictions);
}

TEST_CASE("argmax and chunking") {
  CHECK(hsic::argmax(Tensor<float>({4}, {1, 3, 3, 2})) == 1);
  const auto r = hsic::chunk_ranges(10, 3);
  REQUIRE(r.size() == 3);
  CHECK(r[0] == std::make_pair<std::size_t, std::size_t>(0, 4));
  CHECK(r[2].second == 10);
  CHECK(hsic::chunk_ranges(2, 5).size() == 2);
}

TEST_CASE("separable synthetic set is fit exactly") {
  hsic::Model model(tiny(2, 1));
  hsic::TrainConfig cfg;
  cfg.epochs = 50;
  cfg.validation_fraction = 0.0;
  const auto data = oracle::two_class_patches(100);
  REQUIRE(data.size() == 200);
  const auto h = hsic::train(model, data, cfg);
  CHECK(h.epochs.back().train_acc == 1.0);
}
