#include "hsic/metrics.hpp"

#include <cmath>
#include <iostream>
#include <limits>
#include <sstream>

#include "hsic/binary_io.hpp"
#include "hsic/error.hpp"
#include "json.hpp"

namespace hsic {

std::int64_t ConfusionMatrix::total() const {
  std::int64_t t = 0;
  for (auto c : counts_) t += c;
  return t;
}

std::int64_t ConfusionMatrix::trace() const {
  std::int64_t t = 0;
  for (std::size_t i = 0; i < classes_; ++i) t += at(i, i);
  return t;
}

std::int64_t ConfusionMatrix::row_sum(std::size_t truth) const {
  std::int64_t s = 0;
  for (std::size_t p = 0; p < classes_; ++p) s += at(truth, p);
  return s;
}

std::int64_t ConfusionMatrix::col_sum(std::size_t pred) const {
  std::int64_t s = 0;
  for (std::size_t t = 0; t < classes_; ++t) s += at(t, pred);
  return s;
}

ConfusionMatrix confusion_matrix(std::span<const std::size_t> truths, std::span<const std::size_t> preds,
                                 std::size_t classes) {
  if (truths.size() != preds.size())
    throw InputError("confusion matrix needs equal-length inputs, got " + std::to_string(truths.size()) + " and " +
                     std::to_string(preds.size()));
  ConfusionMatrix cm(classes);
  for (std::size_t i = 0; i < truths.size(); ++i) {
    if (truths[i] >= classes || preds[i] >= classes)
      throw InputError("class id out of range at position " + std::to_string(i));
    ++cm.at(truths[i], preds[i]);
  }
  return cm;
}

double overall_accuracy(const ConfusionMatrix& cm) {
  const auto total = cm.total();
  if (total == 0) throw MetricError("overall accuracy undefined for an empty confusion matrix");
  return static_cast<double>(cm.trace()) / static_cast<double>(total);
}

double average_accuracy(const ConfusionMatrix& cm, std::vector<std::size_t>* skipped) {
  double sum = 0.0;
  std::size_t present = 0;
  std::vector<std::size_t> absent;
  for (std::size_t i = 0; i < cm.classes(); ++i) {
    const auto row = cm.row_sum(i);
    if (row == 0) {
      absent.push_back(i);
      continue;
    }
    sum += static_cast<double>(cm.at(i, i)) / static_cast<double>(row);
    ++present;
  }
  if (present == 0) throw MetricError("average accuracy undefined: every class row is empty");
  if (!absent.empty()) {
    std::clog << "warning: " << absent.size() << " class(es) absent from the truth rows, excluded from AA\n";
  }
  if (skipped) *skipped = std::move(absent);
  return sum / static_cast<double>(present);
}

double kappa(const ConfusionMatrix& cm) {
  const auto total = cm.total();
  if (total == 0) throw MetricError("kappa undefined for an empty confusion matrix");
  const double n = static_cast<double>(total);
  const double po = static_cast<double>(cm.trace()) / n;
  double pe = 0.0;
  for (std::size_t i = 0; i < cm.classes(); ++i)
    pe += static_cast<double>(cm.row_sum(i)) * static_cast<double>(cm.col_sum(i));
  pe /= n * n;
  if (pe == 1.0) throw MetricError("kappa undefined: chance agreement is 1");
  return (po - pe) / (1.0 - pe);
}

std::vector<double> per_class_accuracy(const ConfusionMatrix& cm) {
  std::vector<double> acc(cm.classes(), std::numeric_limits<double>::quiet_NaN());
  for (std::size_t i = 0; i < cm.classes(); ++i) {
    const auto row = cm.row_sum(i);
    if (row > 0) acc[i] = static_cast<double>(cm.at(i, i)) / static_cast<double>(row);
  }
  return acc;
}

std::string metrics_json(const ConfusionMatrix& cm, int indent) {
  nlohmann::ordered_json j;
  j["oa"] = overall_accuracy(cm);
  j["aa"] = average_accuracy(cm);
  j["kappa"] = kappa(cm);
  auto per_class = nlohmann::ordered_json::array();
  for (double a : per_class_accuracy(cm)) {
    if (std::isnan(a))
      per_class.push_back(nullptr);
    else
      per_class.push_back(a);
  }
  j["per_class_accuracy"] = per_class;
  auto rows = nlohmann::ordered_json::array();
  for (std::size_t t = 0; t < cm.classes(); ++t) {
    auto row = nlohmann::ordered_json::array();
    for (std::size_t p = 0; p < cm.classes(); ++p) row.push_back(cm.at(t, p));
    rows.push_back(row);
  }
  j["confusion_matrix"] = rows;
  return j.dump(indent) + "\n";
}

std::string confusion_csv(const ConfusionMatrix& cm) {
  std::ostringstream os;
  os << "true\\pred";
  for (std::size_t p = 0; p < cm.classes(); ++p) os << ',' << p;
  os << '\n';
  for (std::size_t t = 0; t < cm.classes(); ++t) {
    os << t;
    for (std::size_t p = 0; p < cm.classes(); ++p) os << ',' << cm.at(t, p);
    os << '\n';
  }
  return os.str();
}

Rgb class_color(std::size_t id, std::size_t classes) {
  if (id == 0) return {};
  if (id > classes) throw InputError("class id " + std::to_string(id) + " exceeds palette size " + std::to_string(classes));
  // HSV -> RGB with s = v = 1.
  double h = static_cast<double>(id) / static_cast<double>(classes) * 6.0;
  h = std::fmod(h, 6.0);
  const int sector = static_cast<int>(std::floor(h));
  const double f = h - sector;
  const double q = 1.0 - f;
  double r = 0, g = 0, b = 0;
  switch (sector) {
    case 0: r = 1; g = f; b = 0; break;
    case 1: r = q; g = 1; b = 0; break;
    case 2: r = 0; g = 1; b = f; break;
    case 3: r = 0; g = q; b = 1; break;
    case 4: r = f; g = 0; b = 1; break;
    default: r = 1; g = 0; b = q; break;
  }
  auto byte = [](double x) { return static_cast<std::uint8_t>(std::lround(x * 255.0)); };
  return {byte(r), byte(g), byte(b)};
}

Image render_map(std::span<const std::uint16_t> grid, std::size_t width, std::size_t height, std::size_t classes) {
  if (grid.size() != width * height) throw InputError("grid size does not match image dimensions");
  Image img{width, height, std::vector<std::uint8_t>(3 * width * height)};
  std::vector<Rgb> palette(classes + 1);
  for (std::size_t c = 0; c <= classes; ++c) palette[c] = class_color(c, classes);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (grid[i] > classes) throw InputError("class id " + std::to_string(grid[i]) + " exceeds palette size");
    const Rgb& c = palette[grid[i]];
    img.rgb[3 * i] = c.r;
    img.rgb[3 * i + 1] = c.g;
    img.rgb[3 * i + 2] = c.b;
  }
  return img;
}

std::vector<char> encode_ppm(const Image& image) {
  const std::string header = "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  std::vector<char> bytes(header.begin(), header.end());
  bytes.insert(bytes.end(), image.rgb.begin(), image.rgb.end());
  return bytes;
}

void write_ppm(const Image& image, const std::filesystem::path& path) { io::write_file(path, encode_ppm(image)); }

}  // namespace hsic
