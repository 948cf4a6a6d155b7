#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace hsic {

/// Rows are true classes, columns predicted classes.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes = 0) : classes_(classes), counts_(classes * classes, 0) {}

  std::size_t classes() const { return classes_; }
  std::int64_t& at(std::size_t truth, std::size_t pred) { return counts_.at(truth * classes_ + pred); }
  std::int64_t at(std::size_t truth, std::size_t pred) const { return counts_.at(truth * classes_ + pred); }

  std::int64_t total() const;
  std::int64_t trace() const;
  std::int64_t row_sum(std::size_t truth) const;
  std::int64_t col_sum(std::size_t pred) const;

  bool operator==(const ConfusionMatrix&) const = default;

 private:
  std::size_t classes_;
  std::vector<std::int64_t> counts_;
};

ConfusionMatrix confusion_matrix(std::span<const std::size_t> truths, std::span<const std::size_t> preds,
                                 std::size_t classes);

double overall_accuracy(const ConfusionMatrix& cm);

/// Mean per-class recall over classes present in the truth rows. Classes
/// with an empty row are skipped (and reported through `skipped` and a
/// warning on stderr).
double average_accuracy(const ConfusionMatrix& cm, std::vector<std::size_t>* skipped = nullptr);

/// Cohen's kappa: (p_o - p_e) / (1 - p_e).
double kappa(const ConfusionMatrix& cm);

/// Per-class recall; NaN for classes absent from the truth rows.
std::vector<double> per_class_accuracy(const ConfusionMatrix& cm);

/// {"oa", "aa", "kappa", "per_class_accuracy", "confusion_matrix"}; absent
/// classes appear as null in per_class_accuracy.
std::string metrics_json(const ConfusionMatrix& cm, int indent = 2);
std::string confusion_csv(const ConfusionMatrix& cm);

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
  bool operator==(const Rgb&) const = default;
};

/// Color for class id `id` out of `classes`: black for 0, otherwise hue
/// id/classes at full saturation and value.
Rgb class_color(std::size_t id, std::size_t classes);

struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> rgb;  // 3 * width * height, row-major
};

/// One pixel per grid cell of a row-major (height, width) id grid.
Image render_map(std::span<const std::uint16_t> grid, std::size_t width, std::size_t height, std::size_t classes);

/// Binary PPM: "P6\n<w> <h>\n255\n" followed by the RGB payload.
std::vector<char> encode_ppm(const Image& image);
void write_ppm(const Image& image, const std::filesystem::path& path);

}  // namespace hsic
