#include "ecgxai/fcn.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>

#include "ecgxai/error.hpp"
#include "ecgxai/rng.hpp"
#include "gemm.hpp"

namespace ecgxai::fcn {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::Stacked1D: return "stacked1d";
    case Variant::MultiChannel1D: return "multichannel1d";
    case Variant::Image2D: return "image2d";
  }
  return "?";
}

Variant parse_variant(const std::string& text) {
  std::string t;
  for (char ch : text) {
    if (ch != '-' && ch != '_') t += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  }
  if (t == "stacked1d" || t == "stacked") return Variant::Stacked1D;
  if (t == "multichannel1d" || t == "multichannel") return Variant::MultiChannel1D;
  if (t == "image2d" || t == "image") return Variant::Image2D;
  throw ValidationError("unknown variant '" + text + "' (expected stacked1d, multichannel1d or image2d)");
}

signal::Layout layout_of(Variant v) {
  switch (v) {
    case Variant::Stacked1D: return signal::Layout::Stacked;
    case Variant::MultiChannel1D: return signal::Layout::MultiChannel;
    case Variant::Image2D: return signal::Layout::Image;
  }
  return signal::Layout::Image;
}

std::vector<LayerSpec> default_layers(Variant v) {
  switch (v) {
    case Variant::Stacked1D: return {{96, 100, 10}, {256, 20, 1}, {128, 20, 2}};
    case Variant::MultiChannel1D: return {{96, 9, 1}, {256, 9, 1}, {128, 9, 1}};
    case Variant::Image2D: return {{128, 9, 1}, {192, 9, 1}, {128, 9, 1}};
  }
  return {};
}

std::string to_string(const Shape& s) {
  return std::to_string(s.n) + "x" + std::to_string(s.h) + "x" + std::to_string(s.w) + "x" +
         std::to_string(s.c);
}

template <class Real>
Shape BasicModel<Real>::input_shape(int batch) const {
  switch (variant) {
    case Variant::Stacked1D: return {batch, steps * leads, 1, 1};
    case Variant::MultiChannel1D: return {batch, steps, 1, leads};
    case Variant::Image2D: return {batch, steps, leads, 1};
  }
  return {};
}

template <class Real>
std::vector<LayerSpec> BasicModel<Real>::layer_specs() const {
  std::vector<LayerSpec> out;
  for (const auto& b : blocks) out.push_back(b.spec);
  return out;
}

// ---------------------------------------------------------------------------
// Construction and parameter bookkeeping
// ---------------------------------------------------------------------------

template <class Real>
BasicModel<Real> build_model(Variant variant, std::span<const LayerSpec> layers, int class_count,
                             int steps, int leads, std::uint64_t seed) {
  if (layers.empty()) throw ValidationError("model needs at least one convolutional block");
  if (class_count < 1) throw ValidationError("class count must be positive");
  if (steps < 1 || leads < 1) throw ValidationError("input dimensions must be positive");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    if (l.filters <= 0 || l.kernel <= 0 || l.stride <= 0) {
      throw ValidationError("layer " + std::to_string(i + 1) + " has a non-positive filter count (" +
                            std::to_string(l.filters) + "), kernel (" + std::to_string(l.kernel) +
                            ") or stride (" + std::to_string(l.stride) + ")");
    }
  }
  if (variant == Variant::Stacked1D && layers[0].kernel > kMaxStackedFirstKernel) {
    throw ValidationError("stacked1d first-layer kernel " + std::to_string(layers[0].kernel) +
                          " exceeds the permitted maximum of " +
                          std::to_string(kMaxStackedFirstKernel));
  }

  BasicModel<Real> model;
  model.variant = variant;
  model.steps = steps;
  model.leads = leads;
  model.class_count = class_count;

  std::uint64_t tensor_id = 0;
  auto he_uniform = [&](std::size_t count, std::size_t fan_in) {
    Rng rng = Rng::derive(seed, tensor_id++);
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::vector<Real> w(count);
    for (auto& x : w) x = static_cast<Real>(rng.uniform(-limit, limit));
    return w;
  };

  int in_channels = model.input_shape(1).c;
  for (const auto& spec : layers) {
    ConvBlock<Real> b;
    b.spec = spec;
    b.in_channels = in_channels;
    b.kernel_h = spec.kernel;
    b.stride_h = spec.stride;
    const bool two_d = variant == Variant::Image2D;
    b.kernel_w = two_d ? spec.kernel : 1;
    b.stride_w = two_d ? spec.stride : 1;
    const std::size_t fan_in = static_cast<std::size_t>(b.kernel_h) * b.kernel_w * in_channels;
    const auto m = static_cast<std::size_t>(spec.filters);
    b.weight = he_uniform(fan_in * m, fan_in);
    b.bias.assign(m, Real(0));
    b.gamma.assign(m, Real(1));
    b.beta.assign(m, Real(0));
    b.running_mean.assign(m, Real(0));
    b.running_var.assign(m, Real(1));
    model.blocks.push_back(std::move(b));
    in_channels = spec.filters;
  }
  model.dense_weight = he_uniform(static_cast<std::size_t>(in_channels) * class_count,
                                  static_cast<std::size_t>(in_channels));
  model.dense_bias.assign(static_cast<std::size_t>(class_count), Real(0));
  return model;
}

template <class Real>
std::vector<std::span<Real>> trainable_parameters(BasicModel<Real>& model) {
  std::vector<std::span<Real>> out;
  for (auto& b : model.blocks) {
    out.emplace_back(b.weight);
    out.emplace_back(b.bias);
    out.emplace_back(b.gamma);
    out.emplace_back(b.beta);
  }
  out.emplace_back(model.dense_weight);
  out.emplace_back(model.dense_bias);
  return out;
}

template <class Real>
std::vector<std::span<const Real>> trainable_parameters(const BasicModel<Real>& model) {
  std::vector<std::span<const Real>> out;
  for (const auto& b : model.blocks) {
    out.emplace_back(b.weight);
    out.emplace_back(b.bias);
    out.emplace_back(b.gamma);
    out.emplace_back(b.beta);
  }
  out.emplace_back(model.dense_weight);
  out.emplace_back(model.dense_bias);
  return out;
}

template <class Real>
std::size_t count_params(const BasicModel<Real>& model) {
  std::size_t n = 0;
  for (const auto& p : trainable_parameters(model)) n += p.size();
  return n;
}

template <class Real>
void validate(const BasicModel<Real>& model) {
  if (model.blocks.empty()) throw ValidationError("model has no convolutional blocks");
  int in_channels = model.input_shape(1).c;
  for (std::size_t i = 0; i < model.blocks.size(); ++i) {
    const auto& b = model.blocks[i];
    const auto m = static_cast<std::size_t>(b.spec.filters);
    const std::size_t fan_in = static_cast<std::size_t>(b.kernel_h) * b.kernel_w * b.in_channels;
    const bool ok = b.in_channels == in_channels && b.weight.size() == fan_in * m &&
                    b.bias.size() == m && b.gamma.size() == m && b.beta.size() == m &&
                    b.running_mean.size() == m && b.running_var.size() == m;
    if (!ok) throw ValidationError("block " + std::to_string(i + 1) + " has inconsistent tensor shapes");
    for (Real v : b.running_var) {
      if (!(v >= Real(0))) throw ValidationError("running variance must be non-negative");
    }
    in_channels = b.spec.filters;
  }
  if (model.dense_weight.size() != static_cast<std::size_t>(in_channels) * model.class_count ||
      model.dense_bias.size() != static_cast<std::size_t>(model.class_count)) {
    throw ValidationError("dense head shape does not match last block and class count");
  }
}

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

ConvGeometry ConvGeometry::same(int in_h, int in_w, int in_c, int kernel_h, int kernel_w,
                                int stride_h, int stride_w, int out_c) {
  if (kernel_h < 1 || kernel_w < 1 || stride_h < 1 || stride_w < 1) {
    throw ValidationError("kernel and stride must be >= 1");
  }
  ConvGeometry g;
  g.in_h = in_h;
  g.in_w = in_w;
  g.in_c = in_c;
  g.kernel_h = kernel_h;
  g.kernel_w = kernel_w;
  g.stride_h = stride_h;
  g.stride_w = stride_w;
  g.out_c = out_c;
  g.out_h = (in_h + stride_h - 1) / stride_h;
  g.out_w = (in_w + stride_w - 1) / stride_w;
  const int pad_h = std::max((g.out_h - 1) * stride_h + kernel_h - in_h, 0);
  const int pad_w = std::max((g.out_w - 1) * stride_w + kernel_w - in_w, 0);
  if (kernel_h > in_h + pad_h || kernel_w > in_w + pad_w) {
    throw ValidationError("kernel " + std::to_string(kernel_h) + "x" + std::to_string(kernel_w) +
                          " is larger than the padded input");
  }
  g.pad_top = pad_h / 2;
  g.pad_left = pad_w / 2;
  return g;
}

namespace {

template <class Real>
void im2col(const Real* in, const ConvGeometry& g, Real* cols) {
  const std::size_t row = g.patch_size();
  const auto c = static_cast<std::size_t>(g.in_c);
  for (int oh = 0; oh < g.out_h; ++oh) {
    for (int ow = 0; ow < g.out_w; ++ow) {
      Real* dst = cols + (static_cast<std::size_t>(oh) * g.out_w + ow) * row;
      for (int ky = 0; ky < g.kernel_h; ++ky) {
        const int ih = oh * g.stride_h - g.pad_top + ky;
        for (int kx = 0; kx < g.kernel_w; ++kx) {
          const int iw = ow * g.stride_w - g.pad_left + kx;
          if (ih < 0 || ih >= g.in_h || iw < 0 || iw >= g.in_w) {
            std::fill_n(dst, c, Real(0));
          } else {
            std::memcpy(dst, in + (static_cast<std::size_t>(ih) * g.in_w + iw) * c, c * sizeof(Real));
          }
          dst += c;
        }
      }
    }
  }
}

template <class Real>
void col2im_add(const Real* cols, const ConvGeometry& g, Real* in) {
  const std::size_t row = g.patch_size();
  const auto c = static_cast<std::size_t>(g.in_c);
  for (int oh = 0; oh < g.out_h; ++oh) {
    for (int ow = 0; ow < g.out_w; ++ow) {
      const Real* src = cols + (static_cast<std::size_t>(oh) * g.out_w + ow) * row;
      for (int ky = 0; ky < g.kernel_h; ++ky) {
        const int ih = oh * g.stride_h - g.pad_top + ky;
        for (int kx = 0; kx < g.kernel_w; ++kx, src += c) {
          const int iw = ow * g.stride_w - g.pad_left + kx;
          if (ih < 0 || ih >= g.in_h || iw < 0 || iw >= g.in_w) continue;
          Real* dst = in + (static_cast<std::size_t>(ih) * g.in_w + iw) * c;
          for (std::size_t k = 0; k < c; ++k) dst[k] += src[k];
        }
      }
    }
  }
}

void check_conv_input(const Shape& s, const ConvGeometry& g) {
  if (s.h != g.in_h || s.w != g.in_w || s.c != g.in_c) {
    throw ValidationError("convolution input " + to_string(s) + " does not match geometry " +
                          std::to_string(g.in_h) + "x" + std::to_string(g.in_w) + "x" +
                          std::to_string(g.in_c));
  }
}

}  // namespace

template <class Real>
Tensor<Real> conv_same(const Tensor<Real>& input, std::span<const Real> weight,
                       std::span<const Real> bias, const ConvGeometry& g) {
  check_conv_input(input.shape, g);
  const std::size_t k = g.patch_size();
  if (weight.size() != k * g.out_c || bias.size() != static_cast<std::size_t>(g.out_c)) {
    throw ValidationError("convolution weights do not match the geometry");
  }
  Tensor<Real> out(Shape{input.shape.n, g.out_h, g.out_w, g.out_c});
  const std::size_t p = g.out_positions();
  std::vector<Real> cols(p * k);
  for (int n = 0; n < input.shape.n; ++n) {
    im2col(input.sample(n), g, cols.data());
    Real* o = out.sample(n);
    for (std::size_t i = 0; i < p; ++i) std::copy(bias.begin(), bias.end(), o + i * g.out_c);
    detail::gemm(false, false, static_cast<int>(p), g.out_c, static_cast<int>(k), Real(1),
                 cols.data(), static_cast<int>(k), weight.data(), g.out_c, Real(1), o, g.out_c);
  }
  return out;
}

template <class Real>
void conv_same_backward(const Tensor<Real>& input, std::span<const Real> weight,
                        const ConvGeometry& g, const Tensor<Real>& grad_output,
                        std::span<Real> grad_weight, std::span<Real> grad_bias,
                        Tensor<Real>* grad_input) {
  check_conv_input(input.shape, g);
  const std::size_t k = g.patch_size();
  const std::size_t p = g.out_positions();
  const bool want_params = !grad_weight.empty();
  std::vector<Real> cols(p * k);
  if (grad_input != nullptr) *grad_input = Tensor<Real>(input.shape);
  for (int n = 0; n < input.shape.n; ++n) {
    const Real* go = grad_output.sample(n);
    if (want_params) {
      im2col(input.sample(n), g, cols.data());
      detail::gemm(true, false, static_cast<int>(k), g.out_c, static_cast<int>(p), Real(1),
                   cols.data(), static_cast<int>(k), go, g.out_c, Real(1), grad_weight.data(),
                   g.out_c);
    }
    if (!grad_bias.empty()) {
      for (std::size_t i = 0; i < p; ++i) {
        for (int c = 0; c < g.out_c; ++c) grad_bias[c] += go[i * g.out_c + c];
      }
    }
    if (grad_input != nullptr) {
      detail::gemm(false, true, static_cast<int>(p), static_cast<int>(k), g.out_c, Real(1), go,
                   g.out_c, weight.data(), g.out_c, Real(0), cols.data(), static_cast<int>(k));
      col2im_add(cols.data(), g, grad_input->sample(n));
    }
  }
}

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

template <class Real>
Tensor<Real> batchnorm(const Tensor<Real>& x, std::span<const Real> gamma,
                       std::span<const Real> beta, std::span<const Real> running_mean,
                       std::span<const Real> running_var, Mode mode, double epsilon,
                       BatchStats<Real>* stats) {
  const auto channels = static_cast<std::size_t>(x.shape.c);
  const std::size_t rows = x.data.size() / std::max<std::size_t>(channels, 1);
  BatchStats<Real> local;
  BatchStats<Real>& s = stats != nullptr ? *stats : local;
  s.mean.assign(channels, Real(0));
  s.variance.assign(channels, Real(0));
  s.inv_std.assign(channels, Real(0));

  if (mode == Mode::Train) {
    if (x.shape.n < 2) throw ValidationError("train-mode batch normalization needs a batch of at least 2");
    std::vector<double> sum(channels, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < channels; ++c) sum[c] += x.data[r * channels + c];
    }
    std::vector<double> mean(channels);
    for (std::size_t c = 0; c < channels; ++c) mean[c] = sum[c] / static_cast<double>(rows);
    std::vector<double> sq(channels, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < channels; ++c) {
        const double d = x.data[r * channels + c] - mean[c];
        sq[c] += d * d;
      }
    }
    for (std::size_t c = 0; c < channels; ++c) {
      const double var = sq[c] / static_cast<double>(rows);
      s.mean[c] = static_cast<Real>(mean[c]);
      s.variance[c] = static_cast<Real>(var);
      s.inv_std[c] = static_cast<Real>(1.0 / std::sqrt(var + epsilon));
    }
  } else {
    for (std::size_t c = 0; c < channels; ++c) {
      s.mean[c] = running_mean[c];
      s.variance[c] = running_var[c];
      s.inv_std[c] = static_cast<Real>(1.0 / std::sqrt(static_cast<double>(running_var[c]) + epsilon));
    }
  }

  Tensor<Real> y(x.shape);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t i = r * channels + c;
      y.data[i] = gamma[c] * (x.data[i] - s.mean[c]) * s.inv_std[c] + beta[c];
    }
  }
  return y;
}

template <class Real>
void update_running_stats(std::span<Real> running_mean, std::span<Real> running_var,
                          const BatchStats<Real>& stats, double momentum) {
  for (std::size_t c = 0; c < running_mean.size(); ++c) {
    running_mean[c] = static_cast<Real>(momentum * running_mean[c] + (1.0 - momentum) * stats.mean[c]);
    running_var[c] = static_cast<Real>(momentum * running_var[c] + (1.0 - momentum) * stats.variance[c]);
  }
}

template <class Real>
Tensor<Real> batchnorm_backward(const Tensor<Real>& x, const Tensor<Real>& grad_y,
                                std::span<const Real> gamma, const BatchStats<Real>& stats,
                                Mode mode, std::span<Real> grad_gamma, std::span<Real> grad_beta) {
  const auto channels = static_cast<std::size_t>(x.shape.c);
  const std::size_t rows = x.data.size() / std::max<std::size_t>(channels, 1);
  std::vector<double> sum_g(channels, 0.0);
  std::vector<double> sum_gx(channels, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t i = r * channels + c;
      const double xhat = (static_cast<double>(x.data[i]) - stats.mean[c]) * stats.inv_std[c];
      sum_g[c] += grad_y.data[i];
      sum_gx[c] += grad_y.data[i] * xhat;
    }
  }
  if (!grad_gamma.empty()) {
    for (std::size_t c = 0; c < channels; ++c) {
      grad_gamma[c] += static_cast<Real>(sum_gx[c]);
      grad_beta[c] += static_cast<Real>(sum_g[c]);
    }
  }

  Tensor<Real> gx(x.shape);
  if (mode == Mode::Inference) {
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < channels; ++c) {
        const std::size_t i = r * channels + c;
        gx.data[i] = grad_y.data[i] * gamma[c] * stats.inv_std[c];
      }
    }
    return gx;
  }
  const double m = static_cast<double>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t i = r * channels + c;
      const double xhat = (static_cast<double>(x.data[i]) - stats.mean[c]) * stats.inv_std[c];
      const double scale = static_cast<double>(gamma[c]) * stats.inv_std[c] / m;
      gx.data[i] = static_cast<Real>(scale * (m * grad_y.data[i] - sum_g[c] - xhat * sum_gx[c]));
    }
  }
  return gx;
}

// ---------------------------------------------------------------------------
// Network passes
// ---------------------------------------------------------------------------

namespace {

template <class Real>
ConvGeometry block_geometry(const ConvBlock<Real>& b, const Shape& in) {
  return ConvGeometry::same(in.h, in.w, in.c, b.kernel_h, b.kernel_w, b.stride_h, b.stride_w,
                            b.spec.filters);
}

template <class Real>
void check_cache(const BasicModel<Real>& model, const ForwardCache<Real>& cache) {
  const int n = cache.batch();
  if (cache.blocks.size() != model.blocks.size() ||
      cache.features().shape.c != model.feature_channels() ||
      cache.logits.size() != static_cast<std::size_t>(n) * model.class_count ||
      cache.input.shape != model.input_shape(n)) {
    throw ValidationError("forward cache does not belong to this model");
  }
}

}  // namespace

template <class Real>
Tensor<Real> make_batch(std::span<const signal::ReshapedInput> inputs) {
  if (inputs.empty()) throw ValidationError("empty batch");
  const auto& first = inputs.front();
  Tensor<Real> t(Shape{static_cast<int>(inputs.size()), first.height, first.width, first.channels});
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto& in = inputs[i];
    if (in.layout != first.layout || in.height != first.height || in.width != first.width ||
        in.channels != first.channels) {
      throw ValidationError("batch mixes input layouts or shapes");
    }
    std::copy(in.data.begin(), in.data.end(), t.sample(static_cast<int>(i)));
  }
  return t;
}

template <class Real>
Tensor<Real> make_batch(const signal::LabeledDataset& dataset, std::span<const std::size_t> indices,
                        signal::Layout layout) {
  std::vector<signal::ReshapedInput> inputs;
  inputs.reserve(indices.size());
  for (std::size_t i : indices) {
    if (i >= dataset.size()) throw ValidationError("sample index " + std::to_string(i) + " out of range");
    inputs.push_back(signal::reshape(dataset.signals[i], layout));
  }
  return make_batch<Real>(inputs);
}

template <class Real>
ForwardCache<Real> forward(const BasicModel<Real>& model, const Tensor<Real>& input, Mode mode) {
  const int n = input.shape.n;
  if (input.shape != model.input_shape(n)) {
    throw ValidationError("input " + to_string(input.shape) + " does not match the " +
                          to_string(model.variant) + " layout " + to_string(model.input_shape(n)));
  }
  ForwardCache<Real> cache;
  cache.mode = mode;
  cache.input = input;
  cache.blocks.resize(model.blocks.size());
  const Tensor<Real>* x = &cache.input;
  for (std::size_t i = 0; i < model.blocks.size(); ++i) {
    const auto& b = model.blocks[i];
    auto& bc = cache.blocks[i];
    const auto g = block_geometry(b, x->shape);
    bc.conv_out = conv_same<Real>(*x, b.weight, b.bias, g);
    bc.activation = batchnorm<Real>(bc.conv_out, b.gamma, b.beta, b.running_mean, b.running_var,
                                    mode, model.bn_epsilon, &bc.stats);
    if (model.activation == Activation::Relu) {
      for (auto& v : bc.activation.data) v = std::max(v, Real(0));
    }
    x = &bc.activation;
  }

  const Shape fs = x->shape;
  const auto m = static_cast<std::size_t>(fs.c);
  const std::size_t positions = fs.positions();
  const auto classes = static_cast<std::size_t>(model.class_count);
  cache.pooled.assign(static_cast<std::size_t>(n) * m, Real(0));
  for (int s = 0; s < n; ++s) {
    const Real* f = x->sample(s);
    std::vector<double> acc(m, 0.0);
    for (std::size_t p = 0; p < positions; ++p) {
      for (std::size_t c = 0; c < m; ++c) acc[c] += f[p * m + c];
    }
    for (std::size_t c = 0; c < m; ++c) {
      cache.pooled[s * m + c] = static_cast<Real>(acc[c] / static_cast<double>(positions));
    }
  }

  cache.logits.resize(static_cast<std::size_t>(n) * classes);
  for (int s = 0; s < n; ++s) {
    std::copy(model.dense_bias.begin(), model.dense_bias.end(), cache.logits.begin() + s * classes);
  }
  detail::gemm(false, false, n, model.class_count, static_cast<int>(m), Real(1), cache.pooled.data(),
               static_cast<int>(m), model.dense_weight.data(), model.class_count, Real(1),
               cache.logits.data(), model.class_count);

  cache.probs.resize(cache.logits.size());
  for (int s = 0; s < n; ++s) {
    const Real* z = cache.logits.data() + s * classes;
    Real* p = cache.probs.data() + s * classes;
    const Real zmax = *std::max_element(z, z + classes);
    double total = 0.0;
    for (std::size_t c = 0; c < classes; ++c) total += std::exp(static_cast<double>(z[c] - zmax));
    for (std::size_t c = 0; c < classes; ++c) {
      p[c] = static_cast<Real>(std::exp(static_cast<double>(z[c] - zmax)) / total);
    }
  }
  return cache;
}

template <class Real>
void update_running_stats(BasicModel<Real>& model, const ForwardCache<Real>& cache) {
  if (cache.mode != Mode::Train) return;
  for (std::size_t i = 0; i < model.blocks.size(); ++i) {
    auto& b = model.blocks[i];
    update_running_stats<Real>(b.running_mean, b.running_var, cache.blocks[i].stats, model.bn_momentum);
  }
}

template <class Real>
Gradients<Real> backward_from_logits(const BasicModel<Real>& model, const ForwardCache<Real>& cache,
                                     std::span<const Real> logit_grad,
                                     const BackwardOptions& options) {
  check_cache(model, cache);
  const int n = cache.batch();
  const auto classes = static_cast<std::size_t>(model.class_count);
  if (logit_grad.size() != static_cast<std::size_t>(n) * classes) {
    throw ValidationError("logit gradient has " + std::to_string(logit_grad.size()) +
                          " entries, cache batch needs " + std::to_string(n * classes));
  }

  Gradients<Real> grads;
  const std::size_t nb = model.blocks.size();
  if (options.param_grads) {
    for (const auto& p : trainable_parameters(model)) grads.params.emplace_back(p.size(), Real(0));
  }

  const Tensor<Real>& features = cache.features();
  const auto m = static_cast<std::size_t>(features.shape.c);
  const std::size_t positions = features.shape.positions();

  if (options.param_grads) {
    auto& gw = grads.params[4 * nb];
    auto& gb = grads.params[4 * nb + 1];
    detail::gemm(true, false, static_cast<int>(m), model.class_count, n, Real(1), cache.pooled.data(),
                 static_cast<int>(m), logit_grad.data(), model.class_count, Real(0), gw.data(),
                 model.class_count);
    for (int s = 0; s < n; ++s) {
      for (std::size_t c = 0; c < classes; ++c) gb[c] += logit_grad[s * classes + c];
    }
  }
  std::vector<Real> grad_pooled(static_cast<std::size_t>(n) * m);
  detail::gemm(false, true, n, static_cast<int>(m), model.class_count, Real(1), logit_grad.data(),
               model.class_count, model.dense_weight.data(), model.class_count, Real(0),
               grad_pooled.data(), static_cast<int>(m));

  Tensor<Real> grad(features.shape);
  for (int s = 0; s < n; ++s) {
    Real* g = grad.sample(s);
    for (std::size_t p = 0; p < positions; ++p) {
      for (std::size_t c = 0; c < m; ++c) {
        g[p * m + c] = grad_pooled[s * m + c] / static_cast<Real>(positions);
      }
    }
  }
  grads.features = grad;

  for (std::size_t bi = nb; bi-- > 0;) {
    const auto& b = model.blocks[bi];
    const auto& bc = cache.blocks[bi];
    if (model.activation == Activation::Relu) {
      const bool guided = options.relu == ReluRule::Guided;
      for (std::size_t i = 0; i < grad.data.size(); ++i) {
        const bool open = bc.activation.data[i] > Real(0) && (!guided || grad.data[i] > Real(0));
        if (!open) grad.data[i] = Real(0);
      }
    }
    std::span<Real> gg, gbeta, gw, gbias;
    if (options.param_grads) {
      gw = grads.params[4 * bi];
      gbias = grads.params[4 * bi + 1];
      gg = grads.params[4 * bi + 2];
      gbeta = grads.params[4 * bi + 3];
    }
    Tensor<Real> grad_conv = batchnorm_backward<Real>(bc.conv_out, grad, b.gamma, bc.stats, cache.mode, gg, gbeta);
    const Tensor<Real>& block_in = bi == 0 ? cache.input : cache.blocks[bi - 1].activation;
    const bool need_input = bi > 0 || options.input_grad;
    Tensor<Real> grad_in;
    conv_same_backward<Real>(block_in, b.weight, block_geometry(b, block_in.shape), grad_conv, gw, gbias,
                             need_input ? &grad_in : nullptr);
    grad = std::move(grad_in);
  }
  if (options.input_grad) grads.input = std::move(grad);
  return grads;
}

template <class Real>
Gradients<Real> backward(const BasicModel<Real>& model, const ForwardCache<Real>& cache,
                         std::span<const int> labels, const BackwardOptions& options) {
  const int n = cache.batch();
  if (labels.size() != static_cast<std::size_t>(n)) {
    throw ValidationError("stale forward cache: batch of " + std::to_string(n) + " but " +
                          std::to_string(labels.size()) + " labels supplied");
  }
  const auto classes = static_cast<std::size_t>(model.class_count);
  std::vector<Real> g(cache.probs);
  for (int s = 0; s < n; ++s) {
    if (labels[s] < 0 || static_cast<std::size_t>(labels[s]) >= classes) {
      throw ValidationError("label out of range in backward");
    }
    g[s * classes + labels[s]] -= Real(1);
  }
  for (auto& v : g) v /= static_cast<Real>(n);
  return backward_from_logits<Real>(model, cache, g, options);
}

#define ECGXAI_INSTANTIATE(Real)                                                                   \
  template struct BasicModel<Real>;                                                                \
  template BasicModel<Real> build_model<Real>(Variant, std::span<const LayerSpec>, int, int, int,  \
                                              std::uint64_t);                                      \
  template std::vector<std::span<Real>> trainable_parameters<Real>(BasicModel<Real>&);             \
  template std::vector<std::span<const Real>> trainable_parameters<Real>(const BasicModel<Real>&); \
  template std::size_t count_params<Real>(const BasicModel<Real>&);                                \
  template void validate<Real>(const BasicModel<Real>&);                                           \
  template Tensor<Real> conv_same<Real>(const Tensor<Real>&, std::span<const Real>,                \
                                        std::span<const Real>, const ConvGeometry&);               \
  template void conv_same_backward<Real>(const Tensor<Real>&, std::span<const Real>,               \
                                         const ConvGeometry&, const Tensor<Real>&,                 \
                                         std::span<Real>, std::span<Real>, Tensor<Real>*);         \
  template Tensor<Real> batchnorm<Real>(const Tensor<Real>&, std::span<const Real>,                \
                                        std::span<const Real>, std::span<const Real>,              \
                                        std::span<const Real>, Mode, double, BatchStats<Real>*);   \
  template void update_running_stats<Real>(std::span<Real>, std::span<Real>,                       \
                                           const BatchStats<Real>&, double);                       \
  template Tensor<Real> batchnorm_backward<Real>(const Tensor<Real>&, const Tensor<Real>&,         \
                                                 std::span<const Real>, const BatchStats<Real>&,   \
                                                 Mode, std::span<Real>, std::span<Real>);          \
  template Tensor<Real> make_batch<Real>(std::span<const signal::ReshapedInput>);                  \
  template Tensor<Real> make_batch<Real>(const signal::LabeledDataset&,                            \
                                         std::span<const std::size_t>, signal::Layout);            \
  template ForwardCache<Real> forward<Real>(const BasicModel<Real>&, const Tensor<Real>&, Mode);   \
  template void update_running_stats<Real>(BasicModel<Real>&, const ForwardCache<Real>&);          \
  template Gradients<Real> backward_from_logits<Real>(const BasicModel<Real>&,                     \
                                                      const ForwardCache<Real>&,                   \
                                                      std::span<const Real>,                       \
                                                      const BackwardOptions&);                     \
  template Gradients<Real> backward<Real>(const BasicModel<Real>&, const ForwardCache<Real>&,      \
                                          std::span<const int>, const BackwardOptions&);

ECGXAI_INSTANTIATE(float)
ECGXAI_INSTANTIATE(double)

#undef ECGXAI_INSTANTIATE

}  // namespace ecgxai::fcn
