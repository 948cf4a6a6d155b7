#include <filesystem>
#include <random>

#include "doctest.h"
#include "hsic/binary_io.hpp"
#include "hsic/model.hpp"
#include "support/oracles.hpp"

using hsic::Model;
using hsic::ModelConfig;
using hsic::Shape;
using hsic::Tensor;

namespace {

ModelConfig config(std::size_t s, std::size_t b, std::size_t c, std::uint64_t seed = 1) {
  ModelConfig m;
  m.window = s;
  m.bands = b;
  m.classes = c;
  m.seed = seed;
  return m;
}

}  // namespace

TEST_CASE("layer table for the 25x25x30, 16-class configuration") {
  const auto rows = hsic::model_summary(config(25, 30, 16));
  REQUIRE(rows.size() == 12);
  const std::vector<std::pair<std::string, Shape>> shapes = {
      {"input_1", {25, 25, 30, 1}}, {"conv3d_1", {23, 23, 24, 8}}, {"conv3d_2", {21, 21, 20, 16}},
      {"conv3d_3", {19, 19, 18, 32}}, {"reshape_1", {19, 19, 576}}, {"conv2d_1", {17, 17, 64}},
      {"flatten_1", {18496}},       {"dense_1", {256}},            {"dropout_1", {256}},
      {"dense_2", {128}},           {"dropout_2", {128}},          {"dense_3", {16}}};
  const std::vector<std::size_t> params = {0, 512, 5776, 13856, 0, 331840, 0, 4735232, 0, 32896, 0, 2064};
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(rows[i].name == shapes[i].first);
    CHECK(rows[i].output_shape == shapes[i].second);
    CHECK(rows[i].params == params[i]);
  }
  CHECK(hsic::model_param_count(config(25, 30, 16)) == 5122176);
  CHECK(hsic::format_summary(config(25, 30, 16)).find("Total Trainable Parameters: 5122176") != std::string::npos);
}

TEST_CASE("parameter count for other class counts and configs") {
  const auto rows = hsic::model_summary(config(25, 30, 9));
  CHECK(rows.back().params == 1161);
  CHECK(hsic::model_param_count(config(25, 30, 9)) == 5121273);
  for (std::size_t s : {9, 25})
    for (std::size_t b : {13, 30}) CHECK(hsic::model_summary(config(s, b, 4))[1].params == 512);

  const auto up = hsic::model_summary(config(25, 15, 9));
  CHECK(up[4].output_shape == Shape{19, 19, 96});

  const auto tiny = hsic::model_summary(config(9, 13, 2));
  CHECK(tiny[5].output_shape == Shape{1, 1, 64});
  CHECK(tiny[6].output_shape == Shape{64});
  std::size_t sum = 0;
  for (const auto& r : tiny) sum += r.params;
  CHECK(sum == hsic::model_param_count(config(9, 13, 2)));
}

TEST_CASE("shape chain over legal windows and band counts") {
  for (std::size_t s : {9, 19, 21, 23, 25})
    for (std::size_t b : {13, 15, 30}) {
      const Model model(config(s, b, 3));
      hsic::ForwardCache<float> cache;
      hsic::Rng rng(1);
      const Tensor<float> logits = model.forward(Tensor<float>({s, s, b, 1}, 0.5f), hsic::Mode::Train, &rng, &cache);
      CHECK(cache.conv3d_out[0].shape() == Shape{s - 2, s - 2, b - 6, 8});
      CHECK(cache.conv3d_out[1].shape() == Shape{s - 4, s - 4, b - 10, 16});
      CHECK(cache.conv3d_out[2].shape() == Shape{s - 6, s - 6, b - 12, 32});
      CHECK(cache.conv2d_in.shape() == Shape{s - 6, s - 6, 32 * (b - 12)});
      CHECK(cache.conv2d_out.shape() == Shape{s - 8, s - 8, 64});
      CHECK(cache.flat.shape() == Shape{(s - 8) * (s - 8) * 64});
      CHECK(cache.dense_out[0].shape() == Shape{256});
      CHECK(cache.dense_out[1].shape() == Shape{128});
      CHECK(logits.shape() == Shape{3});
      CHECK(model.param_count() == hsic::model_param_count(model.config()));
    }
}

TEST_CASE("config validation") {
  CHECK_THROWS_AS(Model(config(7, 30, 16)), hsic::ConfigError);
  CHECK_THROWS_AS(Model(config(10, 30, 16)), hsic::ConfigError);
  CHECK_THROWS_AS(Model(config(9, 12, 16)), hsic::ConfigError);
  CHECK_THROWS_AS(Model(config(9, 13, 1)), hsic::ConfigError);
  ModelConfig bad = config(9, 13, 2);
  bad.dropout_rate = 1.0;
  CHECK_THROWS_AS(Model{bad}, hsic::ConfigError);
}

TEST_CASE("forward basics") {
  Model model(config(9, 13, 2));
  const Tensor<float> patch({9, 9, 13, 1}, 0.1f);
  CHECK_THROWS_AS(model.forward(Tensor<float>({9, 9, 14, 1}), hsic::Mode::Eval), hsic::ShapeError);
  CHECK_THROWS_AS(model.forward(patch, hsic::Mode::Train), hsic::StateError);
  CHECK(model.forward(patch, hsic::Mode::Eval) == model.forward(patch, hsic::Mode::Eval));

  for (auto* p : model.parameters()) p->fill(0.0f);
  const auto logits = model.forward(patch, hsic::Mode::Eval);
  for (float z : logits.values()) CHECK(z == 0.0f);

  const Model ip(config(25, 30, 16));
  CHECK(ip.forward(Tensor<float>({25, 25, 30, 1}, 0.01f), hsic::Mode::Eval).size() == 16);
}

TEST_CASE("backward structure") {
  const Model model(config(9, 13, 2));
  std::mt19937_64 rng(2);
  const auto patch = oracle::random_tensor<float>({9, 9, 13, 1}, rng);
  hsic::ForwardCache<float> cache;
  hsic::Rng drop(3);
  model.forward(patch, hsic::Mode::Train, &drop, &cache);

  const auto zero = model.backward(cache, Tensor<float>({2}));
  const auto params = model.parameters();
  REQUIRE(zero.size() == params.size());
  for (std::size_t i = 0; i < zero.size(); ++i) {
    CHECK(zero[i].shape() == params[i]->shape());
    for (float g : zero[i].values()) CHECK(g == 0.0f);
  }
  CHECK_THROWS_AS(model.backward(hsic::ForwardCache<float>{}, Tensor<float>({2})), hsic::StateError);
}

TEST_CASE("whole-model gradient against finite differences in f64") {
  const Model base(config(9, 13, 2, 4));
  hsic::BasicModel<double> model = base.cast<double>();
  std::mt19937_64 rng(4);
  const auto patch = oracle::random_tensor<double>({9, 9, 13, 1}, rng);
  const std::size_t label = 1;
  constexpr std::uint64_t drop_seed = 99;

  auto loss = [&] {
    hsic::Rng drop(drop_seed);
    return hsic::softmax_cross_entropy(model.forward(patch, hsic::Mode::Train, &drop), label).loss;
  };
  hsic::ForwardCache<double> cache;
  hsic::Rng drop(drop_seed);
  const auto logits = model.forward(patch, hsic::Mode::Train, &drop, &cache);
  const auto grads = model.backward(cache, hsic::softmax_cross_entropy(logits, label).grad_logits);

  auto params = model.parameters();
  std::size_t checked = 0;
  double worst = 0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    std::uniform_int_distribution<std::size_t> pick(0, params[p]->size() - 1);
    for (int k = 0; k < 8; ++k) {
      const std::size_t i = pick(rng);
      worst = std::max(worst, oracle::rel_error(grads[p][i], oracle::central_difference((*params[p])[i], loss)));
      ++checked;
    }
  }
  CHECK(checked >= 50);
  CHECK(worst < 1e-5);
}

TEST_CASE("checkpoint round trip") {
  const Model model(config(9, 13, 3, 8));
  const auto bytes = hsic::model_serialize(model);
  const Model back = hsic::model_deserialize(bytes);
  CHECK(back.config() == model.config());
  const auto a = model.parameters(), b = back.parameters();
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(*a[i] == *b[i]);
  CHECK(hsic::model_serialize(back) == bytes);

  std::mt19937_64 rng(5);
  const auto patch = oracle::random_tensor<float>({9, 9, 13, 1}, rng);
  CHECK(back.forward(patch, hsic::Mode::Eval) == model.forward(patch, hsic::Mode::Eval));

  // Every parameter tensor is serialized exactly once: payload = header + tensor records.
  std::size_t tensor_bytes = 4;
  for (const auto* p : model.parameters()) tensor_bytes += 4 + 4 * p->rank() + 4 * p->size();
  const std::size_t header = 4 + 4 + 4 * 4 + 8 + 8;
  CHECK(bytes.size() == header + tensor_bytes);
  std::size_t serialized_values = 0;
  for (const auto* p : back.parameters()) serialized_values += p->size();
  CHECK(serialized_values == hsic::model_param_count(model.config()));

  const auto path = std::filesystem::temp_directory_path() / "hsic_test_roundtrip.hsnm";
  hsic::model_save(model, path);
  hsic::model_save(hsic::model_load(path), path.string() + ".2");
  CHECK(hsic::io::read_file(path) == hsic::io::read_file(path.string() + ".2"));
  std::filesystem::remove(path);
  std::filesystem::remove(path.string() + ".2");
}

TEST_CASE("full-size checkpoint reports the published parameter total") {
  const Model model(config(25, 30, 16));
  const Model back = hsic::model_deserialize(hsic::model_serialize(model));
  CHECK(back.param_count() == 5122176);
}

TEST_CASE("checkpoint load errors are distinct") {
  const auto bytes = hsic::model_serialize(Model(config(9, 13, 2)));
  auto failure_of = [](std::vector<char> b) {
    try {
      hsic::model_deserialize(std::move(b));
    } catch (const hsic::LoadError& e) {
      return e.failure();
    }
    FAIL("expected a load error");
    return hsic::LoadFailure::BadMagic;
  };

  auto truncated = bytes;
  truncated.resize(bytes.size() - 3);
  CHECK(failure_of(truncated) == hsic::LoadFailure::Truncated);
  CHECK(failure_of(std::vector<char>(bytes.begin(), bytes.begin() + 6)) == hsic::LoadFailure::Truncated);

  auto magic = bytes;
  magic[0] = 'X';
  CHECK(failure_of(magic) == hsic::LoadFailure::BadMagic);

  auto version = bytes;
  version[4] = 2;
  CHECK(failure_of(version) == hsic::LoadFailure::VersionMismatch);

  auto header = bytes;
  header[8] = 8;  // window 8 is even
  CHECK(failure_of(header) == hsic::LoadFailure::CorruptHeader);

  auto trailing = bytes;
  trailing.push_back(0);
  CHECK(failure_of(trailing) == hsic::LoadFailure::TrailingBytes);

  CHECK_THROWS_AS(hsic::model_load("/nonexistent/model.hsnm"), hsic::Error);
}

TEST_CASE("ablation variants build and run") {
  for (hsic::Variant v : {hsic::Variant::Only3D, hsic::Variant::Only2D}) {
    ModelConfig c = config(9, 13, 2);
    c.variant = v;
    const Model m(c);
    CHECK(m.forward(Tensor<float>({9, 9, 13, 1}, 0.2f), hsic::Mode::Eval).size() == 2);
    CHECK(m.param_count() == hsic::model_param_count(c));
    CHECK(hsic::model_deserialize(hsic::model_serialize(m)).config() == c);
  }
  CHECK(hsic::parse_variant("3d") == hsic::Variant::Only3D);
  CHECK_THROWS_AS(hsic::parse_variant("4d"), hsic::ConfigError);
}
