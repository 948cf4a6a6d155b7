#include "hsic/nn_ops.hpp"

#include <Eigen/Core>
#include <cmath>
#include <cstring>
#include <limits>

namespace hsic {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using RowMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstRowMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using VecMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>;
template <typename T>
using ConstVecMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;

/// Geometry of a valid, stride-1 convolution over a (H, W, D, C) volume.
/// Conv2D is the D = k_d = 1 case.
struct ConvGeometry {
  std::size_t h, w, d, c;     // input
  std::size_t kh, kw, kd;     // kernel extents
  std::size_t out_channels;
  std::size_t oh, ow, od;     // output

  std::size_t positions() const { return oh * ow * od; }
  std::size_t patch_len() const { return kh * kw * kd * c; }
};

ConvGeometry make_geometry(std::size_t h, std::size_t w, std::size_t d, std::size_t c, std::size_t kh,
                           std::size_t kw, std::size_t kd, std::size_t out_channels) {
  if (h < kh || w < kw || d < kd)
    throw ShapeError("input extent (" + std::to_string(h) + ", " + std::to_string(w) + ", " + std::to_string(d) +
                     ") smaller than kernel (" + std::to_string(kh) + ", " + std::to_string(kw) + ", " +
                     std::to_string(kd) + ")");
  return {h, w, d, c, kh, kw, kd, out_channels, h - kh + 1, w - kw + 1, d - kd + 1};
}

// Row p of `cols` holds the input window feeding output position p, laid out
// in the same (i, j, k, c) order as one kernel. For fixed (i, j) the (k, c)
// run is contiguous in the input, so each row is kh*kw memcpy's.
template <typename T>
void im2col(const T* input, const ConvGeometry& g, T* cols) {
  const std::size_t run = g.kd * g.c;
  const std::size_t row_stride = g.w * g.d * g.c;
  const std::size_t col_stride = g.d * g.c;
  T* dst = cols;
  for (std::size_t y = 0; y < g.oh; ++y)
    for (std::size_t x = 0; x < g.ow; ++x)
      for (std::size_t z = 0; z < g.od; ++z)
        for (std::size_t i = 0; i < g.kh; ++i)
          for (std::size_t j = 0; j < g.kw; ++j) {
            const T* src = input + (y + i) * row_stride + (x + j) * col_stride + z * g.c;
            std::memcpy(dst, src, run * sizeof(T));
            dst += run;
          }
}

template <typename T>
void col2im_add(const T* cols, const ConvGeometry& g, T* grad_input) {
  const std::size_t run = g.kd * g.c;
  const std::size_t row_stride = g.w * g.d * g.c;
  const std::size_t col_stride = g.d * g.c;
  const T* src = cols;
  for (std::size_t y = 0; y < g.oh; ++y)
    for (std::size_t x = 0; x < g.ow; ++x)
      for (std::size_t z = 0; z < g.od; ++z)
        for (std::size_t i = 0; i < g.kh; ++i)
          for (std::size_t j = 0; j < g.kw; ++j) {
            T* dst = grad_input + (y + i) * row_stride + (x + j) * col_stride + z * g.c;
            for (std::size_t r = 0; r < run; ++r) dst[r] += src[r];
            src += run;
          }
}

template <typename T>
void apply_activation(Activation act, std::span<T> values) {
  if (act == Activation::ReLU)
    for (T& v : values) v = v > T{0} ? v : T{0};
}

template <typename T>
void conv_forward(const T* input, const ConvGeometry& g, const Tensor<T>& kernels, const Tensor<T>& bias,
                  Activation act, Tensor<T>& out) {
  const auto P = static_cast<Eigen::Index>(g.positions());
  const auto K = static_cast<Eigen::Index>(g.patch_len());
  const auto Co = static_cast<Eigen::Index>(g.out_channels);
  RowMat<T> cols(P, K);
  im2col(input, g, cols.data());
  ConstRowMap<T> kmat(kernels.data(), Co, K);
  RowMap<T> omat(out.data(), P, Co);
  omat.noalias() = cols * kmat.transpose();
  ConstVecMap<T> b(bias.data(), Co);
  omat.rowwise() += b.transpose();
  apply_activation(act, out.values());
}

// grad_pre = grad_out masked by the activation derivative.
template <typename T>
RowMat<T> pre_activation_grad(Activation act, const Tensor<T>& output, const Tensor<T>& grad_out,
                              Eigen::Index rows, Eigen::Index cols) {
  RowMat<T> g = ConstRowMap<T>(grad_out.data(), rows, cols);
  if (act == Activation::ReLU) {
    const T* o = output.data();
    T* gp = g.data();
    for (Eigen::Index i = 0; i < rows * cols; ++i)
      if (!(o[i] > T{0})) gp[i] = T{0};
  }
  return g;
}

template <typename T>
void conv_backward(const T* input, const ConvGeometry& g, const Tensor<T>& kernels, Activation act,
                   const Tensor<T>& output, const Tensor<T>& grad_out, T* grad_input, Tensor<T>& grad_kernels,
                   Tensor<T>& grad_bias) {
  const auto P = static_cast<Eigen::Index>(g.positions());
  const auto K = static_cast<Eigen::Index>(g.patch_len());
  const auto Co = static_cast<Eigen::Index>(g.out_channels);
  RowMat<T> gpre = pre_activation_grad(act, output, grad_out, P, Co);

  RowMat<T> cols(P, K);
  im2col(input, g, cols.data());
  RowMap<T> gk(grad_kernels.data(), Co, K);
  gk.noalias() += gpre.transpose() * cols;
  VecMap<T> gb(grad_bias.data(), Co);
  gb += gpre.colwise().sum().transpose();

  if (grad_input) {
    ConstRowMap<T> kmat(kernels.data(), Co, K);
    cols.noalias() = gpre * kmat;
    std::fill(grad_input, grad_input + g.h * g.w * g.d * g.c, T{0});
    col2im_add(cols.data(), g, grad_input);
  }
}

void check_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (a != b) throw ShapeError(std::string(what) + ": expected shape " + shape_string(a) + ", got " + shape_string(b));
}

template <typename T>
ConvGeometry geometry_of(const Tensor<T>& input, const Conv3D<T>& layer) {
  if (input.rank() != 4) throw ShapeError("conv3d input must be rank 4 (H, W, D, C), got " + shape_string(input.shape()));
  if (input.dim(3) != layer.in_channels())
    throw ShapeError("conv3d input has " + std::to_string(input.dim(3)) + " channels, layer expects " +
                     std::to_string(layer.in_channels()));
  return make_geometry(input.dim(0), input.dim(1), input.dim(2), input.dim(3), layer.kernel_h(), layer.kernel_w(),
                       layer.kernel_d(), layer.out_channels());
}

template <typename T>
ConvGeometry geometry_of(const Tensor<T>& input, const Conv2D<T>& layer) {
  if (input.rank() != 3) throw ShapeError("conv2d input must be rank 3 (H, W, C), got " + shape_string(input.shape()));
  if (input.dim(2) != layer.in_channels())
    throw ShapeError("conv2d input has " + std::to_string(input.dim(2)) + " channels, layer expects " +
                     std::to_string(layer.in_channels()));
  return make_geometry(input.dim(0), input.dim(1), 1, input.dim(2), layer.kernel_h(), layer.kernel_w(), 1,
                       layer.out_channels());
}

void require_odd(std::size_t k, const char* what) {
  if (k == 0 || k % 2 == 0) throw ParameterError(std::string(what) + " kernel extent must be odd, got " + std::to_string(k));
}

}  // namespace

template <typename T>
Conv3D<T>::Conv3D(std::size_t out_channels, std::size_t k_h, std::size_t k_w, std::size_t k_d,
                  std::size_t in_channels, Activation act)
    : kernels({out_channels, k_h, k_w, k_d, in_channels}), bias({out_channels}), activation(act) {
  require_odd(k_h, "conv3d");
  require_odd(k_w, "conv3d");
  require_odd(k_d, "conv3d");
}

template <typename T>
Shape Conv3D<T>::output_shape(const Shape& input) const {
  if (input.size() != 4 || input[3] != in_channels())
    throw ShapeError("conv3d cannot accept input " + shape_string(input));
  auto g = make_geometry(input[0], input[1], input[2], input[3], kernel_h(), kernel_w(), kernel_d(), out_channels());
  return {g.oh, g.ow, g.od, g.out_channels};
}

template <typename T>
Conv2D<T>::Conv2D(std::size_t out_channels, std::size_t k_h, std::size_t k_w, std::size_t in_channels,
                  Activation act)
    : kernels({out_channels, k_h, k_w, in_channels}), bias({out_channels}), activation(act) {
  require_odd(k_h, "conv2d");
  require_odd(k_w, "conv2d");
}

template <typename T>
Shape Conv2D<T>::output_shape(const Shape& input) const {
  if (input.size() != 3 || input[2] != in_channels())
    throw ShapeError("conv2d cannot accept input " + shape_string(input));
  auto g = make_geometry(input[0], input[1], 1, input[2], kernel_h(), kernel_w(), 1, out_channels());
  return {g.oh, g.ow, g.out_channels};
}

template <typename T>
Dense<T>::Dense(std::size_t out_units, std::size_t in_units, Activation act)
    : weights({out_units, in_units}), bias({out_units}), activation(act) {}

template <typename T>
Tensor<T> conv3d_forward(const Tensor<T>& input, const Conv3D<T>& layer) {
  const ConvGeometry g = geometry_of(input, layer);
  Tensor<T> out({g.oh, g.ow, g.od, g.out_channels});
  conv_forward(input.data(), g, layer.kernels, layer.bias, layer.activation, out);
  return out;
}

template <typename T>
void conv3d_backward_accumulate(const Tensor<T>& input, const Conv3D<T>& layer, const Tensor<T>& output,
                                const Tensor<T>& grad_out, Tensor<T>* grad_input, Tensor<T>& grad_kernels,
                                Tensor<T>& grad_bias) {
  const ConvGeometry g = geometry_of(input, layer);
  const Shape out_shape{g.oh, g.ow, g.od, g.out_channels};
  check_same_shape(out_shape, grad_out.shape(), "conv3d grad_out");
  check_same_shape(out_shape, output.shape(), "conv3d output");
  check_same_shape(layer.kernels.shape(), grad_kernels.shape(), "conv3d grad_kernels");
  check_same_shape(layer.bias.shape(), grad_bias.shape(), "conv3d grad_bias");
  if (grad_input && grad_input->shape() != input.shape()) *grad_input = Tensor<T>(input.shape());
  conv_backward(input.data(), g, layer.kernels, layer.activation, output, grad_out,
                grad_input ? grad_input->data() : nullptr, grad_kernels, grad_bias);
}

template <typename T>
LayerGrads<T> conv3d_backward(const Tensor<T>& input, const Conv3D<T>& layer, const Tensor<T>& output,
                              const Tensor<T>& grad_out) {
  LayerGrads<T> grads{Tensor<T>(input.shape()), zeros_like(layer.kernels), zeros_like(layer.bias)};
  conv3d_backward_accumulate(input, layer, output, grad_out, &grads.input, grads.weights, grads.bias);
  return grads;
}

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const Conv2D<T>& layer) {
  const ConvGeometry g = geometry_of(input, layer);
  Tensor<T> out({g.oh, g.ow, g.out_channels});
  conv_forward(input.data(), g, layer.kernels, layer.bias, layer.activation, out);
  return out;
}

template <typename T>
void conv2d_backward_accumulate(const Tensor<T>& input, const Conv2D<T>& layer, const Tensor<T>& output,
                                const Tensor<T>& grad_out, Tensor<T>* grad_input, Tensor<T>& grad_kernels,
                                Tensor<T>& grad_bias) {
  const ConvGeometry g = geometry_of(input, layer);
  const Shape out_shape{g.oh, g.ow, g.out_channels};
  check_same_shape(out_shape, grad_out.shape(), "conv2d grad_out");
  check_same_shape(out_shape, output.shape(), "conv2d output");
  check_same_shape(layer.kernels.shape(), grad_kernels.shape(), "conv2d grad_kernels");
  check_same_shape(layer.bias.shape(), grad_bias.shape(), "conv2d grad_bias");
  if (grad_input && grad_input->shape() != input.shape()) *grad_input = Tensor<T>(input.shape());
  conv_backward(input.data(), g, layer.kernels, layer.activation, output, grad_out,
                grad_input ? grad_input->data() : nullptr, grad_kernels, grad_bias);
}

template <typename T>
LayerGrads<T> conv2d_backward(const Tensor<T>& input, const Conv2D<T>& layer, const Tensor<T>& output,
                              const Tensor<T>& grad_out) {
  LayerGrads<T> grads{Tensor<T>(input.shape()), zeros_like(layer.kernels), zeros_like(layer.bias)};
  conv2d_backward_accumulate(input, layer, output, grad_out, &grads.input, grads.weights, grads.bias);
  return grads;
}

template <typename T>
Tensor<T> dense_forward(const Tensor<T>& input, const Dense<T>& layer) {
  if (input.size() != layer.in_units())
    throw ShapeError("dense input has " + std::to_string(input.size()) + " elements, layer expects " +
                     std::to_string(layer.in_units()));
  const auto out_n = static_cast<Eigen::Index>(layer.out_units());
  const auto in_n = static_cast<Eigen::Index>(layer.in_units());
  Tensor<T> out({layer.out_units()});
  VecMap<T> o(out.data(), out_n);
  o.noalias() = ConstRowMap<T>(layer.weights.data(), out_n, in_n) * ConstVecMap<T>(input.data(), in_n);
  o += ConstVecMap<T>(layer.bias.data(), out_n);
  apply_activation(layer.activation, out.values());
  return out;
}

template <typename T>
void dense_backward_accumulate(const Tensor<T>& input, const Dense<T>& layer, const Tensor<T>& output,
                               const Tensor<T>& grad_out, Tensor<T>* grad_input, Tensor<T>& grad_weights,
                               Tensor<T>& grad_bias) {
  const auto out_n = static_cast<Eigen::Index>(layer.out_units());
  const auto in_n = static_cast<Eigen::Index>(layer.in_units());
  if (input.size() != layer.in_units()) throw ShapeError("dense backward: input length mismatch");
  if (grad_out.size() != layer.out_units() || output.size() != layer.out_units())
    throw ShapeError("dense backward: output length mismatch");
  check_same_shape(layer.weights.shape(), grad_weights.shape(), "dense grad_weights");
  check_same_shape(layer.bias.shape(), grad_bias.shape(), "dense grad_bias");

  RowMat<T> g = pre_activation_grad(layer.activation, output, grad_out, out_n, 1);
  auto gvec = g.col(0);
  ConstVecMap<T> x(input.data(), in_n);
  RowMap<T>(grad_weights.data(), out_n, in_n).noalias() += gvec * x.transpose();
  VecMap<T>(grad_bias.data(), out_n) += gvec;
  if (grad_input) {
    if (grad_input->shape() != input.shape()) *grad_input = Tensor<T>(input.shape());
    VecMap<T>(grad_input->data(), in_n).noalias() =
        ConstRowMap<T>(layer.weights.data(), out_n, in_n).transpose() * gvec;
  }
}

template <typename T>
LayerGrads<T> dense_backward(const Tensor<T>& input, const Dense<T>& layer, const Tensor<T>& output,
                             const Tensor<T>& grad_out) {
  LayerGrads<T> grads{Tensor<T>(input.shape()), zeros_like(layer.weights), zeros_like(layer.bias)};
  dense_backward_accumulate(input, layer, output, grad_out, &grads.input, grads.weights, grads.bias);
  return grads;
}

template <typename T>
DropoutResult<T> dropout_apply(const Tensor<T>& input, const Dropout& layer, Rng& rng) {
  if (!(layer.rate >= 0.0 && layer.rate < 1.0))
    throw ParameterError("dropout rate must lie in [0, 1), got " + std::to_string(layer.rate));
  if (layer.mode == Mode::Eval || layer.rate == 0.0) return {input, Tensor<T>(input.shape(), T{1})};

  const double keep = 1.0 - layer.rate;
  const T scale = static_cast<T>(1.0 / keep);
  DropoutResult<T> r{input, Tensor<T>(input.shape())};
  for (std::size_t i = 0; i < input.size(); ++i) {
    const T m = unit_uniform(rng) < keep ? scale : T{0};
    r.mask[i] = m;
    r.output[i] *= m;
  }
  return r;
}

template <typename T>
Tensor<T> dropout_backward(const Tensor<T>& grad_out, const Tensor<T>& mask) {
  check_same_shape(mask.shape(), grad_out.shape(), "dropout grad_out");
  Tensor<T> g = grad_out;
  for (std::size_t i = 0; i < g.size(); ++i) g[i] *= mask[i];
  return g;
}

template <typename T>
LossResult<T> softmax_cross_entropy(const Tensor<T>& logits, std::size_t label) {
  const std::size_t n = logits.size();
  if (label >= n)
    throw LabelError("label " + std::to_string(label) + " out of range for " + std::to_string(n) + " classes");
  double mx = -std::numeric_limits<double>::infinity();
  for (T v : logits.values()) {
    if (!std::isfinite(v)) throw NumericError("non-finite logit");
    mx = std::max(mx, static_cast<double>(v));
  }
  std::vector<double> e(n);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    e[i] = std::exp(static_cast<double>(logits[i]) - mx);
    sum += e[i];
  }
  const double log_sum = std::log(sum);
  LossResult<T> r{static_cast<T>(log_sum - (static_cast<double>(logits[label]) - mx)), Tensor<T>(logits.shape())};
  for (std::size_t i = 0; i < n; ++i) r.grad_logits[i] = static_cast<T>(e[i] / sum - (i == label ? 1.0 : 0.0));
  return r;
}

template <typename T>
void relu_inplace(Tensor<T>& t) {
  apply_activation(Activation::ReLU, t.values());
}

template <typename T>
void glorot_uniform(Tensor<T>& weights, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (T& w : weights.values()) w = static_cast<T>(limit * (2.0 * unit_uniform(rng) - 1.0));
}

#define HSIC_INSTANTIATE(T)                                                                                      \
  template struct Conv3D<T>;                                                                                     \
  template struct Conv2D<T>;                                                                                     \
  template struct Dense<T>;                                                                                      \
  template Tensor<T> conv3d_forward(const Tensor<T>&, const Conv3D<T>&);                                        \
  template LayerGrads<T> conv3d_backward(const Tensor<T>&, const Conv3D<T>&, const Tensor<T>&, const Tensor<T>&); \
  template void conv3d_backward_accumulate(const Tensor<T>&, const Conv3D<T>&, const Tensor<T>&, const Tensor<T>&, \
                                           Tensor<T>*, Tensor<T>&, Tensor<T>&);                                  \
  template Tensor<T> conv2d_forward(const Tensor<T>&, const Conv2D<T>&);                                        \
  template LayerGrads<T> conv2d_backward(const Tensor<T>&, const Conv2D<T>&, const Tensor<T>&, const Tensor<T>&); \
  template void conv2d_backward_accumulate(const Tensor<T>&, const Conv2D<T>&, const Tensor<T>&, const Tensor<T>&, \
                                           Tensor<T>*, Tensor<T>&, Tensor<T>&);                                  \
  template Tensor<T> dense_forward(const Tensor<T>&, const Dense<T>&);                                          \
  template LayerGrads<T> dense_backward(const Tensor<T>&, const Dense<T>&, const Tensor<T>&, const Tensor<T>&);  \
  template void dense_backward_accumulate(const Tensor<T>&, const Dense<T>&, const Tensor<T>&, const Tensor<T>&, \
                                          Tensor<T>*, Tensor<T>&, Tensor<T>&);                                   \
  template DropoutResult<T> dropout_apply(const Tensor<T>&, const Dropout&, Rng&);                              \
  template Tensor<T> dropout_backward(const Tensor<T>&, const Tensor<T>&);                                      \
  template LossResult<T> softmax_cross_entropy(const Tensor<T>&, std::size_t);                                  \
  template void relu_inplace(Tensor<T>&);                                                                        \
  template void glorot_uniform(Tensor<T>&, std::size_t, std::size_t, Rng&);

HSIC_INSTANTIATE(float)
HSIC_INSTANTIATE(double)

#undef HSIC_INSTANTIATE

}  // namespace hsic
