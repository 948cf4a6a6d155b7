#include "hsic/model.hpp"

#include <iomanip>
#include <sstream>

#include "hsic/binary_io.hpp"

namespace hsic {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::Hybrid: return "hybrid";
    case Variant::Only3D: return "3d";
    case Variant::Only2D: return "2d";
  }
  return "unknown";
}

Variant parse_variant(const std::string& s) {
  if (s == "hybrid") return Variant::Hybrid;
  if (s == "3d") return Variant::Only3D;
  if (s == "2d") return Variant::Only2D;
  throw ConfigError("unknown model variant \"" + s + "\" (expected hybrid, 3d or 2d)");
}

void ModelConfig::validate() const {
  if (window < 9 || window % 2 == 0)
    throw ConfigError("window must be odd and at least 9, got " + std::to_string(window));
  if (bands < 13) throw ConfigError("bands must be at least 13, got " + std::to_string(bands));
  if (classes < 2) throw ConfigError("classes must be at least 2, got " + std::to_string(classes));
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
    throw ConfigError("dropout rate must lie in [0, 1), got " + std::to_string(dropout_rate));
  if (static_cast<std::uint32_t>(variant) > 2) throw ConfigError("unknown model variant");
}

namespace {

std::size_t volume(const Shape& s) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

}  // namespace

std::vector<LayerSummary> model_summary(const ModelConfig& config) {
  config.validate();
  const std::size_t S = config.window, B = config.bands;
  std::vector<LayerSummary> rows;
  Shape shape{S, S, B, 1};
  rows.push_back({"input_1", "InputLayer", shape, 0});

  std::size_t reshapes = 0;
  if (config.variant != Variant::Only2D) {
    std::size_t in_ch = 1;
    for (std::size_t i = 0; i < 3; ++i) {
      const std::size_t kd = kConv3dDepth[i], out_ch = kConv3dKernels[i];
      shape = {shape[0] - kSpatialKernel + 1, shape[1] - kSpatialKernel + 1, shape[2] - kd + 1, out_ch};
      rows.push_back({"conv3d_" + std::to_string(i + 1), "Conv3D", shape,
                      kSpatialKernel * kSpatialKernel * kd * in_ch * out_ch + out_ch});
      in_ch = out_ch;
    }
  }
  if (config.variant != Variant::Only3D) {
    shape = {shape[0], shape[1], shape[2] * shape[3]};
    rows.push_back({"reshape_" + std::to_string(++reshapes), "Reshape", shape, 0});
    const std::size_t in_ch = shape[2];
    shape = {shape[0] - kSpatialKernel + 1, shape[1] - kSpatialKernel + 1, kConv2dKernels};
    rows.push_back({"conv2d_1", "Conv2D", shape, kSpatialKernel * kSpatialKernel * in_ch * kConv2dKernels + kConv2dKernels});
  }
  std::size_t units = volume(shape);
  rows.push_back({"flatten_1", "Flatten", {units}, 0});

  const std::array<std::size_t, 3> widths = {kHiddenUnits[0], kHiddenUnits[1], config.classes};
  for (std::size_t i = 0; i < 3; ++i) {
    rows.push_back({"dense_" + std::to_string(i + 1), "Dense", {widths[i]}, widths[i] * (units + 1)});
    units = widths[i];
    if (i < 2) rows.push_back({"dropout_" + std::to_string(i + 1), "Dropout", {units}, 0});
  }
  return rows;
}

std::size_t model_param_count(const ModelConfig& config) {
  std::size_t total = 0;
  for (const auto& row : model_summary(config)) total += row.params;
  return total;
}

std::string format_summary(const ModelConfig& config) {
  const auto rows = model_summary(config);
  std::ostringstream os;
  os << std::left << std::setw(28) << "Layer (type)" << std::setw(22) << "Output Shape" << "# Parameter\n";
  std::size_t total = 0;
  for (const auto& r : rows) {
    os << std::left << std::setw(28) << (r.name + " (" + r.type + ")") << std::setw(22) << shape_string(r.output_shape)
       << r.params << '\n';
    total += r.params;
  }
  os << "Total Trainable Parameters: " << total << '\n';
  return os.str();
}

template <typename T>
BasicModel<T>::BasicModel(const ModelConfig& config) : config_(config) {
  config_.validate();
  Rng rng(config_.seed);
  const std::size_t k = kSpatialKernel;
  const std::size_t S = config_.window, B = config_.bands;
  std::size_t flat = 0;

  if (config_.variant != Variant::Only2D) {
    std::size_t in_ch = 1;
    for (std::size_t i = 0; i < 3; ++i) {
      conv3d.emplace_back(kConv3dKernels[i], k, k, kConv3dDepth[i], in_ch, Activation::ReLU);
      const std::size_t taps = k * k * kConv3dDepth[i];
      glorot_uniform(conv3d.back().kernels, taps * in_ch, taps * kConv3dKernels[i], rng);
      in_ch = kConv3dKernels[i];
    }
  }
  const std::size_t S3 = config_.variant == Variant::Only2D ? S : S - 6;
  if (config_.variant != Variant::Only3D) {
    const std::size_t in_ch = config_.variant == Variant::Only2D ? B : (B - 12) * kConv3dKernels[2];
    conv2d.emplace(kConv2dKernels, k, k, in_ch, Activation::ReLU);
    glorot_uniform(conv2d->kernels, k * k * in_ch, k * k * kConv2dKernels, rng);
    flat = (S3 - 2) * (S3 - 2) * kConv2dKernels;
  } else {
    flat = (S3) * (S3) * (B - 12) * kConv3dKernels[2];
  }

  const std::array<std::size_t, 3> widths = {kHiddenUnits[0], kHiddenUnits[1], config_.classes};
  std::size_t in_units = flat;
  for (std::size_t i = 0; i < 3; ++i) {
    dense[i] = Dense<T>(widths[i], in_units, i < 2 ? Activation::ReLU : Activation::Identity);
    glorot_uniform(dense[i].weights, in_units, widths[i], rng);
    in_units = widths[i];
  }
}

template <typename T>
std::vector<Tensor<T>*> BasicModel<T>::parameters() {
  std::vector<Tensor<T>*> out;
  for (auto& c : conv3d) {
    out.push_back(&c.kernels);
    out.push_back(&c.bias);
  }
  if (conv2d) {
    out.push_back(&conv2d->kernels);
    out.push_back(&conv2d->bias);
  }
  for (auto& d : dense) {
    out.push_back(&d.weights);
    out.push_back(&d.bias);
  }
  return out;
}

template <typename T>
std::vector<const Tensor<T>*> BasicModel<T>::parameters() const {
  auto mut = const_cast<BasicModel*>(this)->parameters();
  return {mut.begin(), mut.end()};
}

template <typename T>
std::vector<std::string> BasicModel<T>::parameter_names() const {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < conv3d.size(); ++i) {
    names.push_back("conv3d_" + std::to_string(i + 1) + ".kernels");
    names.push_back("conv3d_" + std::to_string(i + 1) + ".bias");
  }
  if (conv2d) {
    names.push_back("conv2d_1.kernels");
    names.push_back("conv2d_1.bias");
  }
  for (std::size_t i = 0; i < dense.size(); ++i) {
    names.push_back("dense_" + std::to_string(i + 1) + ".weights");
    names.push_back("dense_" + std::to_string(i + 1) + ".bias");
  }
  return names;
}

template <typename T>
std::size_t BasicModel<T>::param_count() const {
  std::size_t n = 0;
  for (const auto* p : parameters()) n += p->size();
  return n;
}

template <typename T>
GradientSet<T> BasicModel<T>::zero_gradients() const {
  GradientSet<T> g;
  for (const auto* p : parameters()) g.emplace_back(p->shape());
  return g;
}

template <typename T>
Tensor<T> BasicModel<T>::forward(const Tensor<T>& patch, Mode mode, Rng* rng, ForwardCache<T>* cache) const {
  if (patch.shape() != input_shape())
    throw ShapeError("patch shape " + shape_string(patch.shape()) + " does not match model input " +
                     shape_string(input_shape()));
  if (mode == Mode::Train && config_.dropout_rate > 0.0 && rng == nullptr)
    throw StateError("train-mode forward needs a random generator for dropout");

  ForwardCache<T> local;
  ForwardCache<T>& c = cache ? *cache : local;
  c.valid = false;
  c.input = patch;

  const Tensor<T>* x = &c.input;
  c.conv3d_out.resize(conv3d.size());
  for (std::size_t i = 0; i < conv3d.size(); ++i) {
    c.conv3d_out[i] = conv3d_forward(*x, conv3d[i]);
    x = &c.conv3d_out[i];
  }

  if (conv2d) {
    const Shape& s = x->shape();
    c.conv2d_in = x->reshaped({s[0], s[1], s[2] * s[3]});
    c.conv2d_out = conv2d_forward(c.conv2d_in, *conv2d);
    c.flat = c.conv2d_out.reshaped({c.conv2d_out.size()});
  } else {
    c.flat = x->reshaped({x->size()});
  }

  const Dropout drop{config_.dropout_rate, mode};
  const Tensor<T>* h = &c.flat;
  for (std::size_t i = 0; i < 3; ++i) {
    c.dense_out[i] = dense_forward(*h, dense[i]);
    h = &c.dense_out[i];
    if (i < 2) {
      Rng dummy;
      auto r = dropout_apply(*h, drop, rng ? *rng : dummy);
      c.dropped[i] = std::move(r.output);
      c.masks[i] = std::move(r.mask);
      h = &c.dropped[i];
    }
  }
  c.valid = true;
  return c.dense_out[2];
}

template <typename T>
void BasicModel<T>::backward(const ForwardCache<T>& c, const Tensor<T>& grad_logits, GradientSet<T>& accum) const {
  if (!c.valid) throw StateError("backward called without a cached forward pass");
  if (grad_logits.size() != config_.classes)
    throw ShapeError("grad_logits has " + std::to_string(grad_logits.size()) + " entries, model has " +
                     std::to_string(config_.classes) + " classes");
  const std::size_t n_params = 2 * (conv3d.size() + (conv2d ? 1 : 0) + dense.size());
  if (accum.size() != n_params) throw ShapeError("gradient set does not match model parameters");

  std::size_t slot = n_params;
  Tensor<T> g = grad_logits;
  Tensor<T> g_in;
  for (std::size_t i = 3; i-- > 0;) {
    const Tensor<T>& in = i == 0 ? c.flat : c.dropped[i - 1];
    slot -= 2;
    dense_backward_accumulate(in, dense[i], c.dense_out[i], g, &g_in, accum[slot], accum[slot + 1]);
    g = i > 0 ? dropout_backward(g_in, c.masks[i - 1]) : std::move(g_in);
  }

  if (conv2d) {
    g.reshape(c.conv2d_out.shape());
    slot -= 2;
    Tensor<T>* want_input = conv3d.empty() ? nullptr : &g_in;
    conv2d_backward_accumulate(c.conv2d_in, *conv2d, c.conv2d_out, g, want_input, accum[slot], accum[slot + 1]);
    if (conv3d.empty()) return;
    g = std::move(g_in);
  }
  for (std::size_t i = conv3d.size(); i-- > 0;) {
    g.reshape(c.conv3d_out[i].shape());
    const Tensor<T>& in = i == 0 ? c.input : c.conv3d_out[i - 1];
    slot -= 2;
    conv3d_backward_accumulate(in, conv3d[i], c.conv3d_out[i], g, i == 0 ? nullptr : &g_in, accum[slot],
                               accum[slot + 1]);
    if (i > 0) g = std::move(g_in);
  }
}

template <typename T>
GradientSet<T> BasicModel<T>::backward(const ForwardCache<T>& cache, const Tensor<T>& grad_logits) const {
  GradientSet<T> g = zero_gradients();
  backward(cache, grad_logits, g);
  return g;
}

template class BasicModel<float>;
template class BasicModel<double>;

namespace {

constexpr std::string_view kMagic = "HSNM";

}  // namespace

std::vector<char> model_serialize(const Model& model) {
  io::Writer w;
  w.magic(kMagic);
  w.put<std::uint32_t>(kCheckpointVersion);
  const ModelConfig& c = model.config();
  w.put<std::uint32_t>(static_cast<std::uint32_t>(c.window));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(c.bands));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(c.classes));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(c.variant));
  w.put<double>(c.dropout_rate);
  w.put<std::uint64_t>(c.seed);
  const auto params = model.parameters();
  w.put<std::uint32_t>(static_cast<std::uint32_t>(params.size()));
  for (const auto* p : params) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(p->rank()));
    for (auto d : p->shape()) w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
    w.put_array(p->data(), p->size());
  }
  return w.bytes();
}

Model model_deserialize(std::vector<char> bytes, const std::string& label) {
  io::Reader r(std::move(bytes), label);
  r.expect_magic(kMagic);
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw LoadError(LoadFailure::VersionMismatch, label + ": checkpoint version " + std::to_string(version) +
                                                      ", this build reads version " +
                                                      std::to_string(kCheckpointVersion));
  ModelConfig c;
  c.window = r.get<std::uint32_t>();
  c.bands = r.get<std::uint32_t>();
  c.classes = r.get<std::uint32_t>();
  c.variant = static_cast<Variant>(r.get<std::uint32_t>());
  c.dropout_rate = r.get<double>();
  c.seed = r.get<std::uint64_t>();
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw LoadError(LoadFailure::CorruptHeader, label + ": invalid config block: " + e.what());
  }

  Model model(c);
  auto params = model.parameters();
  const auto count = r.get<std::uint32_t>();
  if (count != params.size())
    throw LoadError(LoadFailure::CorruptHeader, label + ": " + std::to_string(count) + " tensors listed, config needs " +
                                                    std::to_string(params.size()));
  for (auto* p : params) {
    const auto rank = r.get<std::uint32_t>();
    Shape shape;
    for (std::uint32_t i = 0; i < rank && i < 8; ++i) shape.push_back(r.get<std::uint32_t>());
    if (shape != p->shape())
      throw LoadError(LoadFailure::CorruptHeader,
                      label + ": tensor shape " + shape_string(shape) + " does not match " + shape_string(p->shape()));
    r.get_array(p->data(), p->size());
  }
  r.expect_end();
  return model;
}

void model_save(const Model& model, const std::filesystem::path& path) {
  io::write_file(path, model_serialize(model));
}

Model model_load(const std::filesystem::path& path) { return model_deserialize(io::read_file(path), path.string()); }

}  // namespace hsic
