#pragma once

// Reference implementations used only by tests. Everything here is written
// as plain nested loops, independent of the library's im2col/GEMM paths.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "hsic/metrics.hpp"
#include "hsic/nn_ops.hpp"
#include "hsic/pipeline.hpp"

namespace oracle {

using hsic::Tensor;

template <typename T>
void fill_uniform(Tensor<T>& t, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& x : t.values()) x = static_cast<T>(u(rng));
}

template <typename T>
Tensor<T> random_tensor(hsic::Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<T> t(std::move(shape));
  fill_uniform(t, rng, lo, hi);
  return t;
}

/// Direct evaluation of a valid 3D convolution. `scale` (optional) receives
/// sum |w v| + |b| per output element, the magnitude the rounding error of
/// any summation order is proportional to.
template <typename T>
Tensor<double> conv3d(const Tensor<T>& x, const hsic::Conv3D<T>& layer, Tensor<double>* scale = nullptr) {
  const std::size_t H = x.dim(0), W = x.dim(1), D = x.dim(2), C = x.dim(3);
  const std::size_t O = layer.out_channels(), kh = layer.kernel_h(), kw = layer.kernel_w(), kd = layer.kernel_d();
  const std::size_t oh = H - kh + 1, ow = W - kw + 1, od = D - kd + 1;
  Tensor<double> out({oh, ow, od, O});
  if (scale) *scale = Tensor<double>({oh, ow, od, O});
  for (std::size_t i = 0; i < oh; ++i)
    for (std::size_t j = 0; j < ow; ++j)
      for (std::size_t k = 0; k < od; ++k)
        for (std::size_t o = 0; o < O; ++o) {
          double s = static_cast<double>(layer.bias[o]);
          double mag = std::abs(s);
          for (std::size_t a = 0; a < kh; ++a)
            for (std::size_t b = 0; b < kw; ++b)
              for (std::size_t c = 0; c < kd; ++c)
                for (std::size_t ci = 0; ci < C; ++ci) {
                  const double term = static_cast<double>(layer.kernels.at({o, a, b, c, ci})) *
                                      static_cast<double>(x.at({i + a, j + b, k + c, ci}));
                  s += term;
                  mag += std::abs(term);
                }
          if (layer.activation == hsic::Activation::ReLU) s = std::max(0.0, s);
          out.at({i, j, k, o}) = s;
          if (scale) scale->at({i, j, k, o}) = mag;
        }
  return out;
}

template <typename T>
Tensor<double> conv2d(const Tensor<T>& x, const hsic::Conv2D<T>& layer, Tensor<double>* scale = nullptr) {
  const std::size_t H = x.dim(0), W = x.dim(1), C = x.dim(2);
  const std::size_t O = layer.out_channels(), kh = layer.kernel_h(), kw = layer.kernel_w();
  const std::size_t oh = H - kh + 1, ow = W - kw + 1;
  Tensor<double> out({oh, ow, O});
  if (scale) *scale = Tensor<double>({oh, ow, O});
  for (std::size_t i = 0; i < oh; ++i)
    for (std::size_t j = 0; j < ow; ++j)
      for (std::size_t o = 0; o < O; ++o) {
        double s = static_cast<double>(layer.bias[o]);
        double mag = std::abs(s);
        for (std::size_t a = 0; a < kh; ++a)
          for (std::size_t b = 0; b < kw; ++b)
            for (std::size_t ci = 0; ci < C; ++ci) {
              const double term =
                  static_cast<double>(layer.kernels.at({o, a, b, ci})) * static_cast<double>(x.at({i + a, j + b, ci}));
              s += term;
              mag += std::abs(term);
            }
        if (layer.activation == hsic::Activation::ReLU) s = std::max(0.0, s);
        out.at({i, j, o}) = s;
        if (scale) scale->at({i, j, o}) = mag;
      }
  return out;
}

template <typename T>
Tensor<double> dense(const Tensor<T>& x, const hsic::Dense<T>& layer) {
  Tensor<double> out({layer.out_units()});
  for (std::size_t o = 0; o < layer.out_units(); ++o) {
    double s = static_cast<double>(layer.bias[o]);
    for (std::size_t i = 0; i < layer.in_units(); ++i)
      s += static_cast<double>(layer.weights.at({o, i})) * static_cast<double>(x[i]);
    if (layer.activation == hsic::Activation::ReLU) s = std::max(0.0, s);
    out[o] = s;
  }
  return out;
}

/// |a - n| / max(|a|, |n|), or 0 when both are below `floor`.
inline double rel_error(double analytic, double numeric, double floor = 1e-10) {
  const double m = std::max(std::abs(analytic), std::abs(numeric));
  return m < floor ? 0.0 : std::abs(analytic - numeric) / m;
}

/// Central difference of `loss` with respect to `param`, restoring it after.
inline double central_difference(double& param, const std::function<double()>& loss, double h = 1e-5) {
  const double saved = param;
  param = saved + h;
  const double up = loss();
  param = saved - h;
  const double down = loss();
  param = saved;
  return (up - down) / (2 * h);
}

/// sum(r * t): projects a tensor output to a scalar with fixed random weights.
inline double project(const Tensor<double>& t, const Tensor<double>& r) {
  double s = 0;
  for (std::size_t i = 0; i < t.size(); ++i) s += t[i] * r[i];
  return s;
}

struct BruteMetrics {
  double oa, aa, kappa;
};

/// OA, AA and Cohen's kappa by literal cell-by-cell sums.
inline BruteMetrics brute_metrics(const std::vector<std::vector<long long>>& m) {
  const std::size_t C = m.size();
  double total = 0, diag = 0;
  for (std::size_t i = 0; i < C; ++i)
    for (std::size_t j = 0; j < C; ++j) {
      total += static_cast<double>(m[i][j]);
      if (i == j) diag += static_cast<double>(m[i][j]);
    }
  double aa = 0;
  std::size_t present = 0;
  for (std::size_t i = 0; i < C; ++i) {
    double row = 0;
    for (std::size_t j = 0; j < C; ++j) row += static_cast<double>(m[i][j]);
    if (row > 0) {
      aa += static_cast<double>(m[i][i]) / row;
      ++present;
    }
  }
  // Chance agreement: probability that a random truth and an independent
  // random prediction coincide, summed over every (truth, prediction) cell pair.
  double pe = 0;
  for (std::size_t k = 0; k < C; ++k) {
    double row = 0, col = 0;
    for (std::size_t j = 0; j < C; ++j) row += static_cast<double>(m[k][j]);
    for (std::size_t i = 0; i < C; ++i) col += static_cast<double>(m[i][k]);
    pe += (row / total) * (col / total);
  }
  const double po = diag / total;
  return {po, present ? aa / static_cast<double>(present) : NAN, (po - pe) / (1 - pe)};
}

inline hsic::ConfusionMatrix to_confusion(const std::vector<std::vector<long long>>& m) {
  hsic::ConfusionMatrix cm(m.size());
  for (std::size_t i = 0; i < m.size(); ++i)
    for (std::size_t j = 0; j < m.size(); ++j) cm.at(i, j) = m[i][j];
  return cm;
}

/// Principal-component scores from the thin SVD of the centered pixel
/// matrix, each component's largest-magnitude loading made positive.
struct SvdPca {
  Eigen::MatrixXd scores;      // pixels x bands
  Eigen::MatrixXd components;  // bands x D
  Eigen::VectorXd eigenvalues;
};

inline SvdPca svd_pca(const hsic::DataCube& cube, std::size_t bands, bool whiten) {
  const std::size_t P = cube.width * cube.height, D = cube.bands;
  Eigen::MatrixXd X(P, D);
  for (std::size_t p = 0; p < P; ++p)
    for (std::size_t d = 0; d < D; ++d) X(p, d) = cube.values[p * D + d];
  X.rowwise() -= X.colwise().mean();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(X, Eigen::ComputeThinV);
  SvdPca out;
  out.components = svd.matrixV().leftCols(bands).transpose();
  for (Eigen::Index r = 0; r < out.components.rows(); ++r) {
    Eigen::Index arg;
    out.components.row(r).cwiseAbs().maxCoeff(&arg);
    if (out.components(r, arg) < 0) out.components.row(r) *= -1;
  }
  out.eigenvalues = svd.singularValues().head(bands).array().square() / static_cast<double>(P - 1);
  out.scores = X * out.components.transpose();
  if (whiten)
    for (std::size_t b = 0; b < bands; ++b) out.scores.col(b) /= std::sqrt(std::max(out.eigenvalues(b), 1e-12));
  return out;
}

/// Balanced two-class patch set with window 9 and 13 PCA bands.
inline hsic::PatchSet two_class_patches(std::size_t per_class = 100, std::uint64_t seed = 11) {
  hsic::SyntheticSpec spec;
  spec.width = 24;
  spec.height = 24;
  spec.bands = 16;
  spec.classes = 2;
  spec.block = 6;
  spec.background_fraction = 0.0;
  spec.noise = 0.1;
  spec.seed = seed;
  const hsic::DataCube cube = hsic::synthetic_cube(spec);
  const hsic::ReducedCube reduced = hsic::pca_reduce(cube, 13, true);
  const hsic::PatchSet all = hsic::extract_patches(reduced, cube.labels, 9, hsic::Padding::Zero, 2);
  std::vector<std::size_t> picked;
  std::vector<std::size_t> taken(2, 0);
  for (std::size_t i = 0; i < all.size(); ++i)
    if (taken[all.label(i)] < per_class) {
      ++taken[all.label(i)];
      picked.push_back(i);
    }
  return all.subset(picked);
}

}  // namespace oracle
