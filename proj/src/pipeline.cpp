#include "hsic/pipeline.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numbers>
#include <random>

#include "hsic/binary_io.hpp"

namespace hsic {

namespace {

constexpr std::string_view kCubeMagic = "HSC1";
constexpr std::string_view kLabelMagic = "HSG1";

std::size_t checked_volume(io::Reader& r, std::initializer_list<std::uint32_t> dims, std::size_t elem_bytes) {
  std::uint64_t n = 1;
  for (auto d : dims) {
    if (d == 0) throw LoadError(LoadFailure::CorruptHeader, r.label() + ": zero dimension in header");
    if (n > std::numeric_limits<std::uint64_t>::max() / d)
      throw LoadError(LoadFailure::DimensionOverflow, r.label() + ": header dimensions overflow");
    n *= d;
  }
  if (n > std::numeric_limits<std::size_t>::max() / elem_bytes)
    throw LoadError(LoadFailure::DimensionOverflow, r.label() + ": header dimensions overflow");
  return static_cast<std::size_t>(n);
}

}  // namespace

std::size_t DataCube::num_classes() const {
  std::uint16_t mx = 0;
  for (auto l : labels) mx = std::max(mx, l);
  return mx;
}

std::size_t DataCube::labeled_pixels() const {
  return static_cast<std::size_t>(std::count_if(labels.begin(), labels.end(), [](auto l) { return l != 0; }));
}

void save_cube_values(const DataCube& cube, const std::filesystem::path& path) {
  io::Writer w;
  w.magic(kCubeMagic);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(cube.width));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(cube.height));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(cube.bands));
  w.put_array(cube.values.data(), cube.values.size());
  w.save(path);
}

void save_cube_labels(const DataCube& cube, const std::filesystem::path& path) {
  io::Writer w;
  w.magic(kLabelMagic);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(cube.width));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(cube.height));
  w.put_array(cube.labels.data(), cube.labels.size());
  w.save(path);
}

DataCube load_cube(const std::filesystem::path& cube_path, const std::filesystem::path& labels_path) {
  DataCube cube;
  {
    auto r = io::Reader::open(cube_path);
    r.expect_magic(kCubeMagic);
    const auto m = r.get<std::uint32_t>();
    const auto n = r.get<std::uint32_t>();
    const auto d = r.get<std::uint32_t>();
    const std::size_t count = checked_volume(r, {m, n, d}, sizeof(float));
    cube.width = m;
    cube.height = n;
    cube.bands = d;
    std::vector<float> values(count);
    r.get_array(values.data(), count);
    r.expect_end();
    for (float v : values)
      if (!std::isfinite(v)) throw DataError(cube_path.string() + ": cube contains non-finite values");
    cube.values = Tensor<float>({cube.height, cube.width, cube.bands}, std::move(values));
  }
  {
    auto r = io::Reader::open(labels_path);
    r.expect_magic(kLabelMagic);
    const auto m = r.get<std::uint32_t>();
    const auto n = r.get<std::uint32_t>();
    const std::size_t count = checked_volume(r, {m, n}, sizeof(std::uint16_t));
    if (m != cube.width || n != cube.height)
      throw DataError("label grid " + std::to_string(m) + "x" + std::to_string(n) + " does not match cube " +
                      std::to_string(cube.width) + "x" + std::to_string(cube.height));
    cube.labels.resize(count);
    r.get_array(cube.labels.data(), count);
    r.expect_end();
  }
  return cube;
}

Tensor<double> ReducedCube::reconstruct_centered() const {
  const std::size_t d = components.dim(1);
  const std::size_t pixels = width * height;
  Tensor<double> out({height, width, d});
  for (std::size_t p = 0; p < pixels; ++p)
    for (std::size_t b = 0; b < bands; ++b) {
      double y = values[p * bands + b];
      if (whitened) y *= std::sqrt(std::max(eigenvalues[b], kEigenvalueFloor));
      for (std::size_t k = 0; k < d; ++k) out[p * d + k] += y * components[b * d + k];
    }
  return out;
}

ReducedCube pca_reduce(const DataCube& cube, std::size_t bands, bool whiten) {
  const std::size_t d = cube.bands;
  if (bands == 0 || bands > d)
    throw ParameterError("cannot reduce " + std::to_string(d) + " bands to " + std::to_string(bands));
  const std::size_t pixels = cube.width * cube.height;
  if (cube.values.size() != pixels * d) throw ShapeError("cube values do not match its dimensions");

  using RowMatD = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  RowMatD x(static_cast<Eigen::Index>(pixels), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < pixels * d; ++i) {
    const float v = cube.values[i];
    if (!std::isfinite(v)) throw NumericError("non-finite value in cube");
    x.data()[i] = v;
  }
  const Eigen::RowVectorXd mean = x.colwise().mean();
  x.rowwise() -= mean;

  const double denom = pixels > 1 ? static_cast<double>(pixels - 1) : 1.0;
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
  cov.selfadjointView<Eigen::Lower>().rankUpdate(x.transpose(), 1.0 / denom);
  cov = cov.selfadjointView<Eigen::Lower>();

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw NumericError("covariance eigendecomposition failed");

  ReducedCube out;
  out.width = cube.width;
  out.height = cube.height;
  out.bands = bands;
  out.whitened = whiten;
  out.mean.assign(mean.data(), mean.data() + d);
  out.components = Tensor<double>({bands, d});
  out.eigenvalues.resize(bands);

  // Eigen returns ascending order.
  Eigen::MatrixXd basis(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(bands));
  for (std::size_t b = 0; b < bands; ++b) {
    const auto src = static_cast<Eigen::Index>(d - 1 - b);
    Eigen::VectorXd v = solver.eigenvectors().col(src);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    basis.col(static_cast<Eigen::Index>(b)) = v;
    out.eigenvalues[b] = solver.eigenvalues()(src);
    for (std::size_t k = 0; k < d; ++k) out.components[b * d + k] = v(static_cast<Eigen::Index>(k));
  }

  RowMatD y = x * basis;
  if (whiten)
    for (std::size_t b = 0; b < bands; ++b)
      y.col(static_cast<Eigen::Index>(b)) /= std::sqrt(std::max(out.eigenvalues[b], kEigenvalueFloor));

  std::vector<float> reduced(pixels * bands);
  for (std::size_t i = 0; i < reduced.size(); ++i) reduced[i] = static_cast<float>(y.data()[i]);
  out.values = Tensor<float>({cube.height, cube.width, bands}, std::move(reduced));
  return out;
}

ReducedCube reduced_from_values(Tensor<float> values) {
  if (values.rank() != 3) throw ShapeError("reduced cube values must be (height, width, bands)");
  ReducedCube out;
  out.height = values.dim(0);
  out.width = values.dim(1);
  out.bands = values.dim(2);
  out.values = std::move(values);
  return out;
}

PatchSet::PatchSet(std::shared_ptr<const Tensor<float>> padded, std::size_t margin, std::size_t window,
                   std::size_t classes, std::vector<PatchEntry> entries)
    : padded_(std::move(padded)), margin_(margin), window_(window), classes_(classes), entries_(std::move(entries)) {}

void PatchSet::patch_into(std::size_t i, Tensor<float>& out) const {
  const PatchEntry& e = entries_.at(i);
  const std::size_t b = bands();
  const Shape shape{window_, window_, b, 1};
  if (out.shape() != shape) out = Tensor<float>(shape);
  const std::size_t half = window_ / 2;
  const std::size_t top = e.row + margin_ - half;
  const std::size_t left = e.col + margin_ - half;
  const std::size_t padded_w = padded_->dim(1);
  const std::size_t run = window_ * b;
  for (std::size_t r = 0; r < window_; ++r)
    std::memcpy(out.data() + r * run, padded_->data() + ((top + r) * padded_w + left) * b, run * sizeof(float));
}

Tensor<float> PatchSet::patch(std::size_t i) const {
  Tensor<float> out;
  patch_into(i, out);
  return out;
}

PatchSet PatchSet::subset(const std::vector<std::size_t>& indices) const {
  std::vector<PatchEntry> picked;
  picked.reserve(indices.size());
  for (auto i : indices) picked.push_back(entries_.at(i));
  return PatchSet(padded_, margin_, window_, classes_, std::move(picked));
}

std::vector<std::size_t> PatchSet::class_counts() const {
  std::vector<std::size_t> counts(classes_, 0);
  for (const auto& e : entries_) ++counts.at(e.label);
  return counts;
}

std::size_t candidate_positions(std::size_t width, std::size_t height, std::size_t window, Padding padding) {
  if (padding == Padding::Zero) return width * height;
  if (window > width || window > height) return 0;
  return (width - window + 1) * (height - window + 1);
}

PatchSet extract_patches(const ReducedCube& cube, const std::vector<std::uint16_t>& labels, std::size_t window,
                         Padding padding, std::size_t classes) {
  if (window == 0 || window % 2 == 0) throw ParameterError("window must be odd, got " + std::to_string(window));
  const std::size_t M = cube.width, N = cube.height, B = cube.bands;
  if (labels.size() != M * N) throw ShapeError("label grid does not match cube");
  if (padding == Padding::Valid && (window > M || window > N))
    throw ShapeError("window " + std::to_string(window) + " exceeds cube extent " + std::to_string(N) + "x" +
                     std::to_string(M));
  const std::size_t max_label = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end());
  if (classes == 0) classes = max_label;
  if (max_label > classes)
    throw LabelError("label id " + std::to_string(max_label) + " exceeds class count " + std::to_string(classes));

  const std::size_t half = window / 2;
  std::shared_ptr<Tensor<float>> padded;
  std::size_t margin = 0;
  if (padding == Padding::Zero) {
    margin = half;
    padded = std::make_shared<Tensor<float>>(Shape{N + 2 * half, M + 2 * half, B});
    const std::size_t pw = M + 2 * half;
    for (std::size_t r = 0; r < N; ++r)
      std::memcpy(padded->data() + ((r + half) * pw + half) * B, cube.values.data() + r * M * B, M * B * sizeof(float));
  } else {
    padded = std::make_shared<Tensor<float>>(cube.values);
  }

  std::vector<PatchEntry> entries;
  const std::size_t r0 = padding == Padding::Zero ? 0 : half;
  const std::size_t c0 = r0;
  const std::size_t r1 = padding == Padding::Zero ? N : N - half;
  const std::size_t c1 = padding == Padding::Zero ? M : M - half;
  for (std::size_t r = r0; r < r1; ++r)
    for (std::size_t c = c0; c < c1; ++c) {
      const std::uint16_t l = labels[r * M + c];
      if (l != 0) entries.push_back({r, c, static_cast<std::size_t>(l) - 1});
    }
  return PatchSet(std::move(padded), margin, window, classes, std::move(entries));
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(const PatchSet& patches,
                                                                            double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw ParameterError("train fraction must lie in (0, 1), got " + std::to_string(train_fraction));
  if (patches.empty()) throw DataError("cannot split an empty patch set");

  std::vector<std::vector<std::size_t>> by_class(patches.classes());
  for (std::size_t i = 0; i < patches.size(); ++i) by_class.at(patches.label(i)).push_back(i);

  Rng rng(seed);
  std::vector<std::size_t> train, test;
  for (auto& members : by_class) {
    if (members.empty()) continue;
    auto take = static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(members.size()) + 0.5));
    take = std::clamp<std::size_t>(take, 1, members.size());
    std::shuffle(members.begin(), members.end(), rng);
    train.insert(train.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(take));
    test.insert(test.end(), members.begin() + static_cast<std::ptrdiff_t>(take), members.end());
  }
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  return {std::move(train), std::move(test)};
}

std::pair<PatchSet, PatchSet> split_stratified(const PatchSet& patches, double train_fraction, std::uint64_t seed) {
  auto [train, test] = split_indices(patches, train_fraction, seed);
  return {patches.subset(train), patches.subset(test)};
}

DataCube synthetic_cube(const SyntheticSpec& spec) {
  if (spec.width == 0 || spec.height == 0 || spec.bands == 0 || spec.classes == 0 || spec.block == 0)
    throw ParameterError("synthetic cube dimensions must be positive");
  Rng rng(spec.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> uni(0.0, 1.0);

  const std::size_t bx = (spec.width + spec.block - 1) / spec.block;
  const std::size_t by = (spec.height + spec.block - 1) / spec.block;
  std::vector<std::size_t> order(bx * by);
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  const auto background = static_cast<std::size_t>(spec.background_fraction * static_cast<double>(order.size()));
  std::vector<std::uint16_t> block_class(order.size(), 0);
  for (std::size_t k = background; k < order.size(); ++k)
    block_class[order[k]] = static_cast<std::uint16_t>((k - background) % spec.classes + 1);

  // Signature 0 is background.
  std::vector<std::vector<double>> signature(spec.classes + 1, std::vector<double>(spec.bands));
  for (auto& sig : signature) {
    const double freq = 0.5 + 2.5 * uni(rng);
    const double phase = 2.0 * std::numbers::pi * uni(rng);
    const double offset = 0.5 + uni(rng);
    for (std::size_t b = 0; b < spec.bands; ++b)
      sig[b] = offset + 0.5 * std::sin(2.0 * std::numbers::pi * freq * static_cast<double>(b) /
                                           static_cast<double>(spec.bands) + phase);
  }

  DataCube cube;
  cube.width = spec.width;
  cube.height = spec.height;
  cube.bands = spec.bands;
  cube.values = Tensor<float>({spec.height, spec.width, spec.bands});
  cube.labels.assign(spec.width * spec.height, 0);
  for (std::size_t r = 0; r < spec.height; ++r)
    for (std::size_t c = 0; c < spec.width; ++c) {
      const std::uint16_t l = block_class[(r / spec.block) * bx + c / spec.block];
      cube.labels[r * spec.width + c] = l;
      const auto& sig = signature[l];
      for (std::size_t b = 0; b < spec.bands; ++b)
        cube.values[(r * spec.width + c) * spec.bands + b] = static_cast<float>(sig[b] + spec.noise * gauss(rng));
    }
  return cube;
}

}  // namespace hsic
