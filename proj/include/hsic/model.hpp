#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "hsic/nn_ops.hpp"
#include "hsic/tensor.hpp"

namespace hsic {

/// Which convolution stages the network keeps. Hybrid is the full
/// 3D-then-2D network; the other two are ablations.
enum class Variant : std::uint32_t { Hybrid = 0, Only3D = 1, Only2D = 2 };

std::string to_string(Variant v);
Variant parse_variant(const std::string& s);

struct ModelConfig {
  std::size_t window = 25;  // spatial patch side S, odd
  std::size_t bands = 30;   // spectral depth B after PCA
  std::size_t classes = 16;
  double dropout_rate = 0.4;
  std::uint64_t seed = 1;
  Variant variant = Variant::Hybrid;

  /// Throws ConfigError unless S is odd and >= 9, B >= 13, C >= 2 and the
  /// dropout rate lies in [0, 1).
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

// Fixed architecture constants.
inline constexpr std::array<std::size_t, 3> kConv3dKernels = {8, 16, 32};
inline constexpr std::array<std::size_t, 3> kConv3dDepth = {7, 5, 3};
inline constexpr std::size_t kSpatialKernel = 3;
inline constexpr std::size_t kConv2dKernels = 64;
inline constexpr std::array<std::size_t, 2> kHiddenUnits = {256, 128};

/// One row of the layer-wise summary.
struct LayerSummary {
  std::string name;
  std::string type;
  Shape output_shape;
  std::size_t params = 0;
};

std::vector<LayerSummary> model_summary(const ModelConfig& config);
std::size_t model_param_count(const ModelConfig& config);
std::string format_summary(const ModelConfig& config);

/// Per-sample activations kept by a forward pass for the matching backward.
template <typename T>
struct ForwardCache {
  bool valid = false;
  Tensor<T> input;
  std::vector<Tensor<T>> conv3d_out;
  Tensor<T> conv2d_in;
  Tensor<T> conv2d_out;
  Tensor<T> flat;
  std::array<Tensor<T>, 3> dense_out;
  std::array<Tensor<T>, 2> dropped;
  std::array<Tensor<T>, 2> masks;
};

/// One tensor per parameter tensor, in parameters() order.
template <typename T>
using GradientSet = std::vector<Tensor<T>>;

template <typename T>
class BasicModel {
 public:
  /// Builds the layer chain and Glorot-initializes weights from config.seed.
  explicit BasicModel(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }

  std::vector<Tensor<T>*> parameters();
  std::vector<const Tensor<T>*> parameters() const;
  std::vector<std::string> parameter_names() const;
  std::size_t param_count() const;
  GradientSet<T> zero_gradients() const;

  Shape input_shape() const { return {config_.window, config_.window, config_.bands, 1}; }

  /// Runs the layer chain on one (S, S, B, 1) patch and returns C logits.
  /// Train mode applies dropout and needs `rng`. When `cache` is given it
  /// receives everything backward() needs.
  Tensor<T> forward(const Tensor<T>& patch, Mode mode, Rng* rng = nullptr, ForwardCache<T>* cache = nullptr) const;

  /// Adds the loss gradient of every parameter into `accum`.
  void backward(const ForwardCache<T>& cache, const Tensor<T>& grad_logits, GradientSet<T>& accum) const;
  GradientSet<T> backward(const ForwardCache<T>& cache, const Tensor<T>& grad_logits) const;

  template <typename U>
  BasicModel<U> cast() const {
    BasicModel<U> out(config_);
    auto dst = out.parameters();
    auto src = parameters();
    for (std::size_t i = 0; i < src.size(); ++i) *dst[i] = src[i]->template cast<U>();
    return out;
  }

  std::vector<Conv3D<T>> conv3d;
  std::optional<Conv2D<T>> conv2d;
  std::array<Dense<T>, 3> dense;

 private:
  ModelConfig config_;
};

using Model = BasicModel<float>;

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Little-endian checkpoint: "HSNM", u32 version, config block, u32 tensor
/// count, then per tensor u32 rank, u32 dims and f32 values.
void model_save(const Model& model, const std::filesystem::path& path);
Model model_load(const std::filesystem::path& path);

std::vector<char> model_serialize(const Model& model);
Model model_deserialize(std::vector<char> bytes, const std::string& label = "checkpoint");

}  // namespace hsic
