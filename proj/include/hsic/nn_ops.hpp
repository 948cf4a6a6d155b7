#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "hsic/random.hpp"
#include "hsic/tensor.hpp"

namespace hsic {

enum class Activation { Identity, ReLU };
enum class Mode { Train, Eval };

/// 3D convolution over a (height, width, depth, channels) volume.
/// kernels: (out_channels, k_h, k_w, k_d, in_channels); bias: (out_channels).
template <typename T>
struct Conv3D {
  Tensor<T> kernels;
  Tensor<T> bias;
  Activation activation = Activation::ReLU;

  Conv3D() = default;
  Conv3D(std::size_t out_channels, std::size_t k_h, std::size_t k_w, std::size_t k_d, std::size_t in_channels,
         Activation act = Activation::ReLU);

  std::size_t out_channels() const { return kernels.dim(0); }
  std::size_t kernel_h() const { return kernels.dim(1); }
  std::size_t kernel_w() const { return kernels.dim(2); }
  std::size_t kernel_d() const { return kernels.dim(3); }
  std::size_t in_channels() const { return kernels.dim(4); }
  std::size_t param_count() const { return kernels.size() + bias.size(); }
  Shape output_shape(const Shape& input) const;
};

/// 2D convolution over a (height, width, channels) map.
/// kernels: (out_channels, k_h, k_w, in_channels); bias: (out_channels).
template <typename T>
struct Conv2D {
  Tensor<T> kernels;
  Tensor<T> bias;
  Activation activation = Activation::ReLU;

  Conv2D() = default;
  Conv2D(std::size_t out_channels, std::size_t k_h, std::size_t k_w, std::size_t in_channels,
         Activation act = Activation::ReLU);

  std::size_t out_channels() const { return kernels.dim(0); }
  std::size_t kernel_h() const { return kernels.dim(1); }
  std::size_t kernel_w() const { return kernels.dim(2); }
  std::size_t in_channels() const { return kernels.dim(3); }
  std::size_t param_count() const { return kernels.size() + bias.size(); }
  Shape output_shape(const Shape& input) const;
};

/// Fully connected layer. weights: (out_units, in_units); bias: (out_units).
template <typename T>
struct Dense {
  Tensor<T> weights;
  Tensor<T> bias;
  Activation activation = Activation::ReLU;

  Dense() = default;
  Dense(std::size_t out_units, std::size_t in_units, Activation act = Activation::ReLU);

  std::size_t out_units() const { return weights.dim(0); }
  std::size_t in_units() const { return weights.dim(1); }
  std::size_t param_count() const { return weights.size() + bias.size(); }
};

/// Inverted dropout. Eval mode is the identity.
struct Dropout {
  double rate = 0.4;
  Mode mode = Mode::Train;
};

/// Gradients of one parameterized layer. `input` is left empty when the
/// caller did not ask for the input gradient.
template <typename T>
struct LayerGrads {
  Tensor<T> input;
  Tensor<T> weights;
  Tensor<T> bias;
};

// Forward passes return the activated output. Backward passes take that
// output: for ReLU the derivative is 1 exactly where the output is positive.

template <typename T>
Tensor<T> conv3d_forward(const Tensor<T>& input, const Conv3D<T>& layer);

template <typename T>
LayerGrads<T> conv3d_backward(const Tensor<T>& input, const Conv3D<T>& layer, const Tensor<T>& output,
                              const Tensor<T>& grad_out);

/// Accumulating form used by the model. `grad_input` may be null; otherwise
/// it is overwritten. Kernel and bias gradients are added into.
template <typename T>
void conv3d_backward_accumulate(const Tensor<T>& input, const Conv3D<T>& layer, const Tensor<T>& output,
                                const Tensor<T>& grad_out, Tensor<T>* grad_input, Tensor<T>& grad_kernels,
                                Tensor<T>& grad_bias);

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const Conv2D<T>& layer);

template <typename T>
LayerGrads<T> conv2d_backward(const Tensor<T>& input, const Conv2D<T>& layer, const Tensor<T>& output,
                              const Tensor<T>& grad_out);

template <typename T>
void conv2d_backward_accumulate(const Tensor<T>& input, const Conv2D<T>& layer, const Tensor<T>& output,
                                const Tensor<T>& grad_out, Tensor<T>* grad_input, Tensor<T>& grad_kernels,
                                Tensor<T>& grad_bias);

template <typename T>
Tensor<T> dense_forward(const Tensor<T>& input, const Dense<T>& layer);

template <typename T>
LayerGrads<T> dense_backward(const Tensor<T>& input, const Dense<T>& layer, const Tensor<T>& output,
                             const Tensor<T>& grad_out);

template <typename T>
void dense_backward_accumulate(const Tensor<T>& input, const Dense<T>& layer, const Tensor<T>& output,
                               const Tensor<T>& grad_out, Tensor<T>* grad_input, Tensor<T>& grad_weights,
                               Tensor<T>& grad_bias);

template <typename T>
struct DropoutResult {
  Tensor<T> output;
  Tensor<T> mask;  // 0 or 1/(1-rate) per element; multiply grad_out by it in backward
};

template <typename T>
DropoutResult<T> dropout_apply(const Tensor<T>& input, const Dropout& layer, Rng& rng);

template <typename T>
Tensor<T> dropout_backward(const Tensor<T>& grad_out, const Tensor<T>& mask);

template <typename T>
struct LossResult {
  T loss;
  Tensor<T> grad_logits;
};

/// -log softmax(logits)[label] and its gradient softmax - onehot.
template <typename T>
LossResult<T> softmax_cross_entropy(const Tensor<T>& logits, std::size_t label);

template <typename T>
void relu_inplace(Tensor<T>& t);

/// Glorot-uniform weights in ±sqrt(6 / (fan_in + fan_out)).
template <typename T>
void glorot_uniform(Tensor<T>& weights, std::size_t fan_in, std::size_t fan_out, Rng& rng);

}  // namespace hsic
