#include "ecgxai/xai.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iomanip>

#include "ecgxai/error.hpp"

namespace ecgxai::xai {

namespace {

template <class Real>
void check_request(const fcn::BasicModel<Real>& model, const fcn::Tensor<Real>& input, int c) {
  if (c < 0 || c >= model.class_count) {
    throw ValidationError("target class " + std::to_string(c) + " outside [0, " +
                          std::to_string(model.class_count) + ")");
  }
  if (input.shape.n != 1) {
    throw ValidationError("saliency needs a single sample, got a batch of " + std::to_string(input.shape.n));
  }
}

template <class Real>
SaliencyMap input_map(const fcn::BasicModel<Real>& model, const fcn::Tensor<Real>& input, int c,
                      fcn::ReluRule rule, Method method) {
  check_request(model, input, c);
  const auto cache = fcn::forward(model, input, fcn::Mode::Inference);
  std::vector<Real> seed(static_cast<std::size_t>(model.class_count), Real(0));
  seed[c] = Real(1);
  fcn::BackwardOptions opts;
  opts.relu = rule;
  opts.param_grads = false;
  opts.input_grad = true;
  const auto grads = fcn::backward_from_logits(model, cache, std::span<const Real>(seed), opts);
  SaliencyMap map;
  map.method = method;
  map.target_class = c;
  map.dims = input_dims(model);
  map.scores.assign(grads.input.data.begin(), grads.input.data.end());
  return map;
}

}  // namespace

std::string to_string(Method m) {
  switch (m) {
    case Method::GuidedBackprop: return "guided-backprop";
    case Method::GradCam: return "gradcam";
    case Method::GuidedGradCam: return "guided-gradcam";
    case Method::InputGradient: return "input-gradient";
  }
  return "?";
}

Method parse_method(const std::string& text) {
  std::string t;
  for (char ch : text) t += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  for (Method m : {Method::GuidedBackprop, Method::GradCam, Method::GuidedGradCam, Method::InputGradient}) {
    if (t == to_string(m)) return m;
  }
  throw ValidationError("unknown saliency method '" + text +
                        "' (expected guided-backprop, gradcam, guided-gradcam or input-gradient)");
}

std::string dims_string(std::span<const int> dims) {
  std::string s;
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) s += 'x';
    s += std::to_string(dims[i]);
  }
  return s.empty() ? "()" : s;
}

template <class Real>
std::vector<int> input_dims(const fcn::BasicModel<Real>& model) {
  if (model.variant == fcn::Variant::Stacked1D) return {model.steps * model.leads};
  return {model.steps, model.leads};
}

template <class Real>
SaliencyMap guided_backprop(const fcn::BasicModel<Real>& model, const fcn::Tensor<Real>& input, int c) {
  return input_map(model, input, c, fcn::ReluRule::Guided, Method::GuidedBackprop);
}

template <class Real>
SaliencyMap input_gradient(const fcn::BasicModel<Real>& model, const fcn::Tensor<Real>& input, int c) {
  return input_map(model, input, c, fcn::ReluRule::Standard, Method::InputGradient);
}

SaliencyMap gradcam_from_features(std::span<const double> features, std::span<const double> grad,
                                  std::size_t channels, std::vector<int> dims, int c) {
  if (channels == 0 || features.size() != grad.size() || features.size() % channels != 0) {
    throw ValidationError("gradcam: feature and gradient maps must both be positions x channels");
  }
  const std::size_t positions = features.size() / channels;
  std::size_t expect = 1;
  for (int d : dims) expect *= static_cast<std::size_t>(d);
  if (expect != positions) {
    throw ValidationError("gradcam: dims " + dims_string(dims) + " do not cover " + std::to_string(positions) +
                          " positions");
  }
  std::vector<double> alpha(channels, 0.0);
  for (std::size_t p = 0; p < positions; ++p) {
    for (std::size_t j = 0; j < channels; ++j) alpha[j] += grad[p * channels + j];
  }
  for (auto& a : alpha) a /= static_cast<double>(positions);

  SaliencyMap map;
  map.method = Method::GradCam;
  map.target_class = c;
  map.dims = std::move(dims);
  map.scores.resize(positions);
  for (std::size_t p = 0; p < positions; ++p) {
    double s = 0.0;
    for (std::size_t j = 0; j < channels; ++j) s += alpha[j] * features[p * channels + j];
    map.scores[p] = std::max(s, 0.0);
  }
  return map;
}

template <class Real>
SaliencyMap gradcam(const fcn::BasicModel<Real>& model, const fcn::Tensor<Real>& input, int c) {
  check_request(model, input, c);
  const auto cache = fcn::forward(model, input, fcn::Mode::Inference);
  const auto& x = cache.features();
  const auto channels = static_cast<std::size_t>(x.shape.c);
  const std::size_t positions = x.shape.positions();
  // GAP then dense: d z_c / d X[p, j] = W[j, c] / positions at every position.
  std::vector<double> grad(positions * channels);
  for (std::size_t p = 0; p < positions; ++p) {
    for (std::size_t j = 0; j < channels; ++j) {
      grad[p * channels + j] =
          static_cast<double>(model.dense_weight[j * model.class_count + c]) / static_cast<double>(positions);
    }
  }
  std::vector<int> dims = x.shape.w == 1 ? std::vector<int>{x.shape.h} : std::vector<int>{x.shape.h, x.shape.w};
  const std::vector<double> features(x.data.begin(), x.data.end());
  return gradcam_from_features(features, grad, channels, std::move(dims), c);
}

template <class Real>
std::vector<int> gradcam_dims(const fcn::BasicModel<Real>& model) {
  auto shape = model.input_shape(1);
  for (const auto& b : model.blocks) {
    shape.h = (shape.h + b.stride_h - 1) / b.stride_h;
    shape.w = (shape.w + b.stride_w - 1) / b.stride_w;
  }
  return shape.w == 1 ? std::vector<int>{shape.h} : std::vector<int>{shape.h, shape.w};
}

SaliencyMap combine(const SaliencyMap& guided, const SaliencyMap& cam, const CombineOptions& options) {
  if (guided.target_class != cam.target_class) {
    throw ValidationError("guided-backprop map targets class " + std::to_string(guided.target_class) +
                          " but the Grad-CAM map targets class " + std::to_string(cam.target_class));
  }
  std::vector<double> factor;
  if (guided.dims == cam.dims) {
    factor = cam.scores;
  } else {
    const std::string shapes = "guided-backprop map is " + dims_string(guided.dims) + ", Grad-CAM map is " +
                               dims_string(cam.dims);
    if (!options.interpolate) {
      throw ValidationError("Guided Grad-CAM multiplies maps element-wise and needs equal dimensions, which only "
                            "the image (T x L) input guarantees; " + shapes +
                            ". Request interpolation explicitly to combine them.");
    }
    if (cam.dims.size() != 1) throw ValidationError("cannot interpolate a 2D Grad-CAM map: " + shapes);
    const auto rows = static_cast<std::size_t>(guided.dims[0]);
    const std::size_t cols = guided.is_2d() ? static_cast<std::size_t>(guided.dims[1]) : 1;
    if (static_cast<std::size_t>(cam.dims[0]) > rows) {
      throw ValidationError("Grad-CAM map is longer than the guided map: " + shapes);
    }
    const auto line = interpolate_map(cam.scores, rows);
    factor.resize(rows * cols);
    for (std::size_t r = 0; r < rows; ++r) std::fill_n(factor.begin() + r * cols, cols, line[r]);
  }
  SaliencyMap out;
  out.method = Method::GuidedGradCam;
  out.target_class = guided.target_class;
  out.dims = guided.dims;
  out.abs_applied = options.abs;
  out.scores.resize(guided.scores.size());
  for (std::size_t i = 0; i < out.scores.size(); ++i) {
    const double v = guided.scores[i] * factor[i];
    out.scores[i] = options.abs ? std::abs(v) : v;
  }
  return out;
}

template <class Real>
SaliencyMap guided_gradcam(const fcn::BasicModel<Real>& model, const fcn::Tensor<Real>& input, int c,
                           const CombineOptions& options) {
  return combine(guided_backprop(model, input, c), gradcam(model, input, c), options);
}

std::vector<double> interpolate_map(std::span<const double> map, std::size_t target_length) {
  if (map.empty()) throw ValidationError("cannot interpolate an empty map");
  if (target_length < map.size()) {
    throw ValidationError("interpolation from " + std::to_string(map.size()) + " to " +
                          std::to_string(target_length) + " points would downsample");
  }
  if (map.size() == 1) return std::vector<double>(target_length, map[0]);
  std::vector<double> out(target_length);
  const double scale = static_cast<double>(map.size() - 1) / static_cast<double>(target_length - 1);
  for (std::size_t i = 0; i < target_length; ++i) {
    const double x = static_cast<double>(i) * scale;
    const auto lo = std::min(static_cast<std::size_t>(x), map.size() - 2);
    const double f = x - static_cast<double>(lo);
    out[i] = f == 0.0 ? map[lo] : (1.0 - f) * map[lo] + f * map[lo + 1];
  }
  out.back() = map.back();
  return out;
}

std::vector<double> normalize(std::span<const double> scores) {
  std::vector<double> out(scores.size(), 0.0);
  if (scores.empty()) return out;
  const auto [lo, hi] = std::minmax_element(scores.begin(), scores.end());
  const double range = *hi - *lo;
  if (range <= 0.0) return out;
  for (std::size_t i = 0; i < scores.size(); ++i) out[i] = (scores[i] - *lo) / range;
  return out;
}

void write_saliency_csv(const SaliencyMap& map, std::span<const std::string> lead_names,
                        const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out << std::setprecision(10);
  if (map.is_2d()) {
    if (lead_names.size() != static_cast<std::size_t>(map.dims[1])) {
      throw ValidationError("saliency map has " + std::to_string(map.dims[1]) + " columns but " +
                            std::to_string(lead_names.size()) + " lead names were given");
    }
    out << 't';
    for (const auto& name : lead_names) out << ',' << name;
    out << '\n';
    for (int t = 0; t < map.dims[0]; ++t) {
      out << t;
      for (int l = 0; l < map.dims[1]; ++l) out << ',' << map.at(t, l);
      out << '\n';
    }
  } else {
    out << "score\n";
    for (double v : map.scores) out << v << '\n';
  }
  std::ofstream meta(path.string() + ".meta");
  if (!meta) throw FormatError("cannot write " + path.string() + ".meta");
  meta << "method=" << to_string(map.method) << "\nclass=" << map.target_class
       << "\nabs=" << (map.abs_applied ? 1 : 0) << "\ndims=" << dims_string(map.dims) << '\n';
}

#define ECGXAI_XAI_INSTANTIATE(Real)                                                                  \
  template std::vector<int> input_dims<Real>(const fcn::BasicModel<Real>&);                           \
  template SaliencyMap guided_backprop<Real>(const fcn::BasicModel<Real>&, const fcn::Tensor<Real>&,  \
                                             int);                                                    \
  template SaliencyMap input_gradient<Real>(const fcn::BasicModel<Real>&, const fcn::Tensor<Real>&,   \
                                            int);                                                     \
  template SaliencyMap gradcam<Real>(const fcn::BasicModel<Real>&, const fcn::Tensor<Real>&, int);    \
  template std::vector<int> gradcam_dims<Real>(const fcn::BasicModel<Real>&);                         \
  template SaliencyMap guided_gradcam<Real>(const fcn::BasicModel<Real>&, const fcn::Tensor<Real>&,   \
                                            int, const CombineOptions&);

ECGXAI_XAI_INSTANTIATE(float)
ECGXAI_XAI_INSTANTIATE(double)

}  // namespace ecgxai::xai
