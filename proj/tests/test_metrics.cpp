#include <algorithm>
#include <filesystem>
#include <numeric>
#include <random>

#include "doctest.h"
#include "hsic/binary_io.hpp"
#include "hsic/metrics.hpp"
#include "json.hpp"
#include "support/oracles.hpp"

using hsic::ConfusionMatrix;
using Counts = std::vector<std::vector<long long>>;

TEST_CASE("confusion matrix from label lists") {
  const std::vector<std::size_t> t{0, 1, 2};
  const auto id = hsic::confusion_matrix(t, t, 3);
  CHECK(id == oracle::to_confusion({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}));
  CHECK(id.total() == 3);

  const std::vector<std::size_t> truth{0, 0, 1, 1}, pred{0, 1, 1, 1};
  const auto cm = hsic::confusion_matrix(truth, pred, 2);
  CHECK(cm == oracle::to_confusion({{1, 1}, {0, 2}}));
  CHECK(cm.row_sum(1) == 2);
  CHECK(cm.col_sum(1) == 3);

  const auto empty = hsic::confusion_matrix({}, {}, 3);
  CHECK(empty.total() == 0);

  CHECK_THROWS_AS(hsic::confusion_matrix(truth, t, 3), hsic::InputError);
  CHECK_THROWS_AS(hsic::confusion_matrix(t, t, 2), hsic::InputError);
}

TEST_CASE("hand-computed OA, AA and kappa") {
  const auto id = oracle::to_confusion({{4, 0, 0}, {0, 2, 0}, {0, 0, 7}});
  CHECK(hsic::overall_accuracy(id) == 1.0);
  CHECK(hsic::average_accuracy(id) == 1.0);
  CHECK(hsic::kappa(id) == 1.0);

  const auto small = oracle::to_confusion({{1, 1}, {0, 2}});
  CHECK(hsic::overall_accuracy(small) == 0.75);
  CHECK(hsic::average_accuracy(small) == 0.75);

  const auto a = oracle::to_confusion({{10, 0}, {5, 5}});
  CHECK(hsic::average_accuracy(a) == doctest::Approx(0.75));
  CHECK(hsic::overall_accuracy(a) == doctest::Approx(0.75));
  const auto b = oracle::to_confusion({{10, 0}, {8, 2}});
  CHECK(hsic::average_accuracy(b) == doctest::Approx(0.6));
  CHECK(hsic::overall_accuracy(b) == doctest::Approx(0.6));

  const Counts k{{8, 2}, {1, 9}};
  CHECK(hsic::kappa(oracle::to_confusion(k)) == doctest::Approx(0.7).epsilon(1e-12));
  CHECK(oracle::brute_metrics(k).kappa == doctest::Approx(0.7).epsilon(1e-12));
}

TEST_CASE("undefined metrics") {
  CHECK_THROWS_AS(hsic::overall_accuracy(ConfusionMatrix(3)), hsic::MetricError);
  CHECK_THROWS_AS(hsic::average_accuracy(ConfusionMatrix(3)), hsic::MetricError);
  CHECK_THROWS_AS(hsic::kappa(ConfusionMatrix(3)), hsic::MetricError);
  CHECK_THROWS_AS(hsic::kappa(oracle::to_confusion({{5, 0}, {0, 0}})), hsic::MetricError);
}

TEST_CASE("absent classes are skipped in AA") {
  const auto cm = oracle::to_confusion({{3, 1, 0}, {0, 0, 0}, {0, 1, 1}});
  std::vector<std::size_t> skipped;
  CHECK(hsic::average_accuracy(cm, &skipped) == doctest::Approx((0.75 + 0.5) / 2));
  CHECK(skipped == std::vector<std::size_t>{1});
  const auto pc = hsic::per_class_accuracy(cm);
  CHECK(std::isnan(pc[1]));
}

TEST_CASE("random matrices agree with the brute-force definitions") {
  std::mt19937_64 rng(41);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t C = 2 + static_cast<std::size_t>(trial % 15);
    std::uniform_int_distribution<long long> cell(0, trial % 3 == 0 ? 5 : 500);
    Counts m(C, std::vector<long long>(C));
    for (auto& row : m)
      for (auto& x : row) x = cell(rng);
    m[0][0] += 1;
    m[1][0] += 1;  // p_e < 1
    const auto cm = oracle::to_confusion(m);
    const auto ref = oracle::brute_metrics(m);
    CHECK(std::abs(hsic::overall_accuracy(cm) - ref.oa) <= 1e-12);
    CHECK(std::abs(hsic::average_accuracy(cm) - ref.aa) <= 1e-12);
    CHECK(std::abs(hsic::kappa(cm) - ref.kappa) <= 1e-12);
    CHECK(hsic::kappa(cm) >= -1.0);
    CHECK(hsic::kappa(cm) <= 1.0);
  }
}

TEST_CASE("OA is invariant under relabeling") {
  std::mt19937_64 rng(42);
  std::uniform_int_distribution<long long> cell(0, 50);
  Counts m(6, std::vector<long long>(6));
  for (auto& row : m)
    for (auto& x : row) x = cell(rng);
  std::vector<std::size_t> perm(6);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  Counts p(6, std::vector<long long>(6));
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 6; ++j) p[perm[i]][perm[j]] = m[i][j];
  CHECK(hsic::overall_accuracy(oracle::to_confusion(m)) == hsic::overall_accuracy(oracle::to_confusion(p)));
  CHECK(hsic::kappa(oracle::to_confusion(m)) == doctest::Approx(hsic::kappa(oracle::to_confusion(p))).epsilon(1e-12));
}

TEST_CASE("kappa is one exactly for diagonal matrices") {
  CHECK(hsic::kappa(oracle::to_confusion({{3, 0}, {0, 9}})) == 1.0);
  CHECK(hsic::kappa(oracle::to_confusion({{3, 1}, {0, 9}})) < 1.0);
}

TEST_CASE("metrics json and csv") {
  const auto cm = oracle::to_confusion({{8, 2, 0}, {1, 9, 0}, {0, 0, 0}});
  const auto j = nlohmann::json::parse(hsic::metrics_json(cm));
  for (const char* key : {"oa", "aa", "kappa", "per_class_accuracy", "confusion_matrix"}) CHECK(j.contains(key));
  CHECK(j["oa"].get<double>() == doctest::Approx(0.85));
  CHECK(j["per_class_accuracy"].size() == 3);
  CHECK(j["per_class_accuracy"][2].is_null());
  CHECK(j["confusion_matrix"][0][1].get<int>() == 2);

  CHECK(hsic::confusion_csv(cm) == "true\\pred,0,1,2\n0,8,2,0\n1,1,9,0\n2,0,0,0\n");
}

TEST_CASE("class map rendering") {
  const std::vector<std::uint16_t> background(6 * 4, 0);
  const auto black = hsic::render_map(background, 6, 4, 16);
  CHECK(black.rgb.size() == 3 * 6 * 4);
  CHECK(std::all_of(black.rgb.begin(), black.rgb.end(), [](auto v) { return v == 0; }));

  const auto red = hsic::render_map(std::vector<std::uint16_t>(9, 1), 3, 3, 1);
  for (std::size_t p = 0; p < 9; ++p) {
    CHECK(red.rgb[3 * p] == 255);
    CHECK(red.rgb[3 * p + 1] == 0);
    CHECK(red.rgb[3 * p + 2] == 0);
  }

  std::vector<hsic::Rgb> colors;
  for (std::size_t c = 1; c <= 16; ++c) colors.push_back(hsic::class_color(c, 16));
  for (std::size_t a = 0; a < colors.size(); ++a)
    for (std::size_t b = a + 1; b < colors.size(); ++b) CHECK(!(colors[a] == colors[b]));

  const auto img = hsic::render_map(std::vector<std::uint16_t>(145 * 145, 3), 145, 145, 16);
  const auto ppm = hsic::encode_ppm(img);
  const std::string header = "P6\n145 145\n255\n";
  CHECK(std::string(ppm.begin(), ppm.begin() + static_cast<long>(header.size())) == header);
  CHECK(ppm.size() == header.size() + 3 * 21025);

  CHECK_THROWS_AS(hsic::render_map(std::vector<std::uint16_t>(4, 17), 2, 2, 16), hsic::InputError);
  CHECK_THROWS_AS(hsic::render_map(std::vector<std::uint16_t>(5, 1), 2, 2, 16), hsic::InputError);
}
