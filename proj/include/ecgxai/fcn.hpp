#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ecgxai/signal.hpp"

namespace ecgxai::fcn {

enum class Variant : std::uint8_t { Stacked1D = 0, MultiChannel1D = 1, Image2D = 2 };

std::string to_string(Variant v);
// Accepts "stacked1d", "multichannel1d", "image2d" (case-insensitive).
Variant parse_variant(const std::string& text);
signal::Layout layout_of(Variant v);

struct LayerSpec {
  int filters = 0;
  int kernel = 0;
  int stride = 1;

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

// Tuned per-variant hyperparameters (filters, kernel, stride) of the three blocks.
std::vector<LayerSpec> default_layers(Variant v);

enum class Activation : std::uint8_t { Relu, Identity };
enum class Mode : std::uint8_t { Train, Inference };

inline constexpr double kDefaultBnEpsilon = 1e-3;
inline constexpr double kDefaultBnMomentum = 0.99;
// Largest first-layer kernel accepted for the stacked variant.
inline constexpr int kMaxStackedFirstKernel = 100;

// Batch of feature maps, row-major n x h x w x c.
struct Shape {
  int n = 0;
  int h = 0;
  int w = 0;
  int c = 0;

  std::size_t size() const {
    return static_cast<std::size_t>(n) * h * w * c;
  }
  std::size_t positions() const { return static_cast<std::size_t>(h) * w; }
  friend bool operator==(const Shape&, const Shape&) = default;
};

std::string to_string(const Shape& s);

template <class Real>
struct Tensor {
  Shape shape;
  std::vector<Real> data;

  Tensor() = default;
  explicit Tensor(Shape s, Real fill = Real(0)) : shape(s), data(s.size(), fill) {}

  Real* sample(int i) { return data.data() + static_cast<std::size_t>(i) * shape.h * shape.w * shape.c; }
  const Real* sample(int i) const {
    return data.data() + static_cast<std::size_t>(i) * shape.h * shape.w * shape.c;
  }
};

template <class Real>
struct ConvBlock {
  LayerSpec spec;
  int in_channels = 0;
  int kernel_h = 0;
  int kernel_w = 0;
  int stride_h = 1;
  int stride_w = 1;
  std::vector<Real> weight;  // kernel_h x kernel_w x in_channels x filters
  std::vector<Real> bias;
  std::vector<Real> gamma;
  std::vector<Real> beta;
  std::vector<Real> running_mean;
  std::vector<Real> running_var;
};

template <class Real>
struct BasicModel {
  Variant variant = Variant::Image2D;
  int steps = signal::kDefaultSteps;
  int leads = signal::kDefaultLeads;
  int class_count = signal::kDefaultClasses;
  double bn_epsilon = kDefaultBnEpsilon;
  double bn_momentum = kDefaultBnMomentum;
  Activation activation = Activation::Relu;
  std::vector<ConvBlock<Real>> blocks;
  std::vector<Real> dense_weight;  // filters of last block x class_count
  std::vector<Real> dense_bias;

  Shape input_shape(int batch) const;
  int feature_channels() const { return blocks.back().spec.filters; }
  std::vector<LayerSpec> layer_specs() const;
};

using FcnModel = BasicModel<float>;

template <class To, class From>
BasicModel<To> convert(const BasicModel<From>& model) {
  auto cast = [](const std::vector<From>& v) { return std::vector<To>(v.begin(), v.end()); };
  BasicModel<To> out;
  out.variant = model.variant;
  out.steps = model.steps;
  out.leads = model.leads;
  out.class_count = model.class_count;
  out.bn_epsilon = model.bn_epsilon;
  out.bn_momentum = model.bn_momentum;
  out.activation = model.activation;
  for (const auto& b : model.blocks) {
    ConvBlock<To> nb;
    nb.spec = b.spec;
    nb.in_channels = b.in_channels;
    nb.kernel_h = b.kernel_h;
    nb.kernel_w = b.kernel_w;
    nb.stride_h = b.stride_h;
    nb.stride_w = b.stride_w;
    nb.weight = cast(b.weight);
    nb.bias = cast(b.bias);
    nb.gamma = cast(b.gamma);
    nb.beta = cast(b.beta);
    nb.running_mean = cast(b.running_mean);
    nb.running_var = cast(b.running_var);
    out.blocks.push_back(std::move(nb));
  }
  out.dense_weight = cast(model.dense_weight);
  out.dense_bias = cast(model.dense_bias);
  return out;
}

// He-uniform conv/dense weights, zero biases and beta, unit gamma, running
// statistics at (0, 1). Deterministic in `seed`.
template <class Real = float>
BasicModel<Real> build_model(Variant variant, std::span<const LayerSpec> layers, int class_count,
                             int steps, int leads, std::uint64_t seed);

template <class Real = float>
BasicModel<Real> build_default_model(Variant variant, std::uint64_t seed,
                                     int class_count = signal::kDefaultClasses,
                                     int steps = signal::kDefaultSteps,
                                     int leads = signal::kDefaultLeads) {
  const auto layers = default_layers(variant);
  return build_model<Real>(variant, layers, class_count, steps, leads, seed);
}

// Trainable tensors in serialization order: per block weight, bias, gamma,
// beta; then dense weight and dense bias. Running statistics are excluded.
template <class Real>
std::vector<std::span<Real>> trainable_parameters(BasicModel<Real>& model);
template <class Real>
std::vector<std::span<const Real>> trainable_parameters(const BasicModel<Real>& model);

template <class Real>
std::size_t count_params(const BasicModel<Real>& model);

// Checks shape consistency between blocks, dense head and the declared input.
template <class Real>
void validate(const BasicModel<Real>& model);

// ---------------------------------------------------------------------------
// Layer primitives
// ---------------------------------------------------------------------------

// "Same" zero padding: out = ceil(in / stride); for even kernels the extra
// padding unit is on the trailing side.
struct ConvGeometry {
  int in_h = 0, in_w = 0, in_c = 0;
  int kernel_h = 0, kernel_w = 0;
  int stride_h = 1, stride_w = 1;
  int out_h = 0, out_w = 0, out_c = 0;
  int pad_top = 0, pad_left = 0;

  static ConvGeometry same(int in_h, int in_w, int in_c, int kernel_h, int kernel_w, int stride_h,
                           int stride_w, int out_c);
  std::size_t patch_size() const { return static_cast<std::size_t>(kernel_h) * kernel_w * in_c; }
  std::size_t out_positions() const { return static_cast<std::size_t>(out_h) * out_w; }
};

// Cross-correlation (no kernel flip) summed over input channels, plus bias.
template <class Real>
Tensor<Real> conv_same(const Tensor<Real>& input, std::span<const Real> weight,
                       std::span<const Real> bias, const ConvGeometry& geometry);

// Accumulates into grad_weight / grad_bias (when non-empty) and overwrites
// grad_input (when non-null).
template <class Real>
void conv_same_backward(const Tensor<Real>& input, std::span<const Real> weight,
                        const ConvGeometry& geometry, const Tensor<Real>& grad_output,
                        std::span<Real> grad_weight, std::span<Real> grad_bias,
                        Tensor<Real>* grad_input);

template <class Real>
struct BatchStats {
  std::vector<Real> mean;
  std::vector<Real> variance;  // biased, over n*h*w per channel
  std::vector<Real> inv_std;   // 1/sqrt(variance + eps) of whichever statistics normalized
};

// Per-channel normalization over every (sample, position). Train mode uses
// batch statistics and fills `stats`; inference mode uses the running ones.
template <class Real>
Tensor<Real> batchnorm(const Tensor<Real>& x, std::span<const Real> gamma,
                       std::span<const Real> beta, std::span<const Real> running_mean,
                       std::span<const Real> running_var, Mode mode, double epsilon,
                       BatchStats<Real>* stats);

// running = momentum * running + (1 - momentum) * batch.
template <class Real>
void update_running_stats(std::span<Real> running_mean, std::span<Real> running_var,
                          const BatchStats<Real>& stats, double momentum);

template <class Real>
Tensor<Real> batchnorm_backward(const Tensor<Real>& x, const Tensor<Real>& grad_y,
                                std::span<const Real> gamma, const BatchStats<Real>& stats,
                                Mode mode, std::span<Real> grad_gamma, std::span<Real> grad_beta);

// ---------------------------------------------------------------------------
// Whole-network passes
// ---------------------------------------------------------------------------

template <class Real>
struct BlockCache {
  Tensor<Real> conv_out;    // pre-normalization
  Tensor<Real> activation;  // X_i after normalization and activation
  BatchStats<Real> stats;
};

template <class Real>
struct ForwardCache {
  Mode mode = Mode::Inference;
  Tensor<Real> input;  // X_0
  std::vector<BlockCache<Real>> blocks;
  std::vector<Real> pooled;  // batch x M_last (global average of the last map)
  std::vector<Real> logits;  // batch x C
  std::vector<Real> probs;   // batch x C

  int batch() const { return input.shape.n; }
  const Tensor<Real>& features() const { return blocks.back().activation; }
};

template <class Real>
Tensor<Real> make_batch(std::span<const signal::ReshapedInput> inputs);
template <class Real>
Tensor<Real> make_batch(const signal::LabeledDataset& dataset, std::span<const std::size_t> indices,
                        signal::Layout layout);

template <class Real>
ForwardCache<Real> forward(const BasicModel<Real>& model, const Tensor<Real>& input, Mode mode);

// Applies the batch statistics recorded by a train-mode forward pass.
template <class Real>
void update_running_stats(BasicModel<Real>& model, const ForwardCache<Real>& cache);

enum class ReluRule : std::uint8_t { Standard, Guided };

struct BackwardOptions {
  ReluRule relu = ReluRule::Standard;
  bool param_grads = true;
  bool input_grad = true;
};

template <class Real>
struct Gradients {
  std::vector<std::vector<Real>> params;  // same order as trainable_parameters
  Tensor<Real> input;                     // dOut/dX_0 (empty unless requested)
  Tensor<Real> features;                  // dOut/dX_last
};

// Backpropagates an arbitrary upstream gradient at the logits (batch x C).
template <class Real>
Gradients<Real> backward_from_logits(const BasicModel<Real>& model, const ForwardCache<Real>& cache,
                                     std::span<const Real> logit_grad,
                                     const BackwardOptions& options = {});

// Exact gradients of the batch-mean categorical cross-entropy; the logit
// gradient is (probs - onehot) / batch.
template <class Real>
Gradients<Real> backward(const BasicModel<Real>& model, const ForwardCache<Real>& cache,
                         std::span<const int> labels, const BackwardOptions& options = {});

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

inline constexpr std::uint16_t kCheckpointVersion = 1;

void write_checkpoint(const FcnModel& model, const std::filesystem::path& path);
FcnModel read_checkpoint(const std::filesystem::path& path);

}  // namespace ecgxai::fcn
