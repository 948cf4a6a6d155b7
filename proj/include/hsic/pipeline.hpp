#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <utility>
#include <vector>

#include "hsic/random.hpp"
#include "hsic/tensor.hpp"

namespace hsic {

/// Raw hyperspectral volume plus its ground-truth grid. `values` is
/// (height, width, bands); `labels` is row-major (height, width) with 0 for
/// unlabeled background and 1..C for land-cover classes.
struct DataCube {
  std::size_t width = 0;   // M, columns
  std::size_t height = 0;  // N, rows
  std::size_t bands = 0;   // D
  Tensor<float> values;
  std::vector<std::uint16_t> labels;

  /// Largest class id present in `labels`.
  std::size_t num_classes() const;
  std::size_t labeled_pixels() const;
};

/// HSC: "HSC1", u32 M, u32 N, u32 D, then N*M*D f32 in (row, column, band) order.
void save_cube_values(const DataCube& cube, const std::filesystem::path& path);
/// HSG: "HSG1", u32 M, u32 N, then N*M u16 class ids, row-major.
void save_cube_labels(const DataCube& cube, const std::filesystem::path& path);
DataCube load_cube(const std::filesystem::path& cube_path, const std::filesystem::path& labels_path);

/// PCA-reduced cube. `components` is (B, D) with orthonormal rows sorted by
/// descending eigenvalue.
struct ReducedCube {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t bands = 0;
  Tensor<float> values;  // (height, width, bands)
  std::vector<double> mean;
  Tensor<double> components;
  std::vector<double> eigenvalues;
  bool whitened = false;

  /// Maps reduced values back to the centered spectral space (no whitening
  /// undo when whitened is false). Returns (height, width, D).
  Tensor<double> reconstruct_centered() const;
};

inline constexpr double kEigenvalueFloor = 1e-12;

/// Projects every pixel spectrum onto the top `bands` principal axes of the
/// pixel covariance. Each component's largest-magnitude entry is positive.
ReducedCube pca_reduce(const DataCube& cube, std::size_t bands, bool whiten);

/// Wraps an already-reduced volume (no projection metadata).
ReducedCube reduced_from_values(Tensor<float> values);

enum class Padding { Valid, Zero };

struct PatchEntry {
  std::size_t row = 0;  // center pixel in cube coordinates
  std::size_t col = 0;
  std::size_t label = 0;  // 0-based class index
};

/// Labeled spectral-spatial windows over a shared padded volume. Patches are
/// materialized on access.
class PatchSet {
 public:
  PatchSet() = default;
  PatchSet(std::shared_ptr<const Tensor<float>> padded, std::size_t margin, std::size_t window, std::size_t classes,
           std::vector<PatchEntry> entries);

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  std::size_t window() const { return window_; }
  std::size_t bands() const { return padded_ ? padded_->dim(2) : 0; }
  std::size_t classes() const { return classes_; }
  const std::vector<PatchEntry>& entries() const { return entries_; }
  const PatchEntry& entry(std::size_t i) const { return entries_.at(i); }
  std::size_t label(std::size_t i) const { return entries_.at(i).label; }

  /// (S, S, B, 1) window centered on entry i.
  Tensor<float> patch(std::size_t i) const;
  void patch_into(std::size_t i, Tensor<float>& out) const;

  PatchSet subset(const std::vector<std::size_t>& indices) const;
  std::vector<std::size_t> class_counts() const;

 private:
  std::shared_ptr<const Tensor<float>> padded_;
  std::size_t margin_ = 0;
  std::size_t window_ = 0;
  std::size_t classes_ = 0;
  std::vector<PatchEntry> entries_;
};

/// Number of candidate centers the extraction visits.
std::size_t candidate_positions(std::size_t width, std::size_t height, std::size_t window, Padding padding);

/// Emits one patch per labeled candidate center, in row-major center order.
/// `classes` fixes the class count (0 means max label in the grid).
PatchSet extract_patches(const ReducedCube& cube, const std::vector<std::uint16_t>& labels, std::size_t window,
                         Padding padding, std::size_t classes = 0);

/// Per class, round-half-up(fraction * count) samples go to train (at least
/// one for a nonempty class), the rest to test.
std::pair<PatchSet, PatchSet> split_stratified(const PatchSet& patches, double train_fraction, std::uint64_t seed);

/// Same split as split_stratified, returned as index lists into `patches`.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(const PatchSet& patches,
                                                                            double train_fraction, std::uint64_t seed);

struct SyntheticSpec {
  std::size_t width = 40;
  std::size_t height = 40;
  std::size_t bands = 20;
  std::size_t classes = 4;
  std::size_t block = 8;             // side of each label block
  double background_fraction = 0.2;  // share of blocks left unlabeled
  double noise = 0.1;
  std::uint64_t seed = 7;
};

/// Random cube with block-structured labels. Each class has its own smooth
/// spectral signature; pixels are signature plus Gaussian noise.
DataCube synthetic_cube(const SyntheticSpec& spec);

}  // namespace hsic
