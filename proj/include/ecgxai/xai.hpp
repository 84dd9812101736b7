#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ecgxai/fcn.hpp"

namespace ecgxai::xai {

enum class Method : std::uint8_t { GuidedBackprop, GradCam, GuidedGradCam, InputGradient };

// "guided-backprop", "gradcam", "guided-gradcam", "input-gradient"
std::string to_string(Method m);
Method parse_method(const std::string& text);

// Relevance scores for one (input, class) pair. `dims` is {length} for 1D maps
// and {rows, cols} for 2D maps; scores are row-major.
struct SaliencyMap {
  Method method = Method::GuidedBackprop;
  int target_class = 0;
  std::vector<int> dims;
  std::vector<double> scores;
  bool abs_applied = false;

  std::size_t size() const { return scores.size(); }
  bool is_2d() const { return dims.size() == 2; }
  double at(int row, int col) const { return scores[static_cast<std::size_t>(row) * dims[1] + col]; }
};

std::string dims_string(std::span<const int> dims);

// Dimensions of a map covering the whole input: {T*L} for the stacked layout,
// {T, L} otherwise.
template <class Real>
std::vector<int> input_dims(const fcn::BasicModel<Real>& model);

// d z_c / d input with the guided rule at every ReLU (gate on both the forward
// activation and the upstream gradient, strictly positive). Normalization
// layers run with their running statistics. `input` must hold one sample.
template <class Real>
SaliencyMap guided_backprop(const fcn::BasicModel<Real>& model, const fcn::Tensor<Real>& input, int c);

// Plain d z_c / d input, same inference-mode conventions.
template <class Real>
SaliencyMap input_gradient(const fcn::BasicModel<Real>& model, const fcn::Tensor<Real>& input, int c);

// ReLU(sum_j alpha_j X^j) with alpha_j the position-mean of d z_c / d X^j.
// `features` and `grad` are positions x channels, row-major.
SaliencyMap gradcam_from_features(std::span<const double> features, std::span<const double> grad,
                                  std::size_t channels, std::vector<int> dims, int c);

// Map over the positions of the last feature map: {h, w} when the map is 2D,
// {h} otherwise (a single length-T vector for the multichannel variant).
template <class Real>
SaliencyMap gradcam(const fcn::BasicModel<Real>& model, const fcn::Tensor<Real>& input, int c);

// Dimensions gradcam() will produce for this model, without running it.
template <class Real>
std::vector<int> gradcam_dims(const fcn::BasicModel<Real>& model);

struct CombineOptions {
  bool abs = false;
  // Linearly upsample a 1D Grad-CAM map along its axis (and repeat it across
  // columns of a 2D guided map) when the shapes differ.
  bool interpolate = false;
};

// Element-wise product of a guided-backprop map and a Grad-CAM map. Throws
// ValidationError naming both shapes when they differ and interpolation is off.
SaliencyMap combine(const SaliencyMap& guided, const SaliencyMap& cam, const CombineOptions& options = {});

template <class Real>
SaliencyMap guided_gradcam(const fcn::BasicModel<Real>& model, const fcn::Tensor<Real>& input, int c,
                           const CombineOptions& options = {});

// Linear interpolation onto `target_length` evenly spaced points with both
// endpoints kept. Throws on downsampling or an empty map.
std::vector<double> interpolate_map(std::span<const double> map, std::size_t target_length);

// Min-max rescale to [0, 1] for display; a constant map becomes all zeros.
std::vector<double> normalize(std::span<const double> scores);

// CSV with a `t` column plus one column per lead for T x L maps, or a single
// `score` column for 1D maps. A `<path>.meta` sidecar holds method, class,
// abs flag and dims.
void write_saliency_csv(const SaliencyMap& map, std::span<const std::string> lead_names,
                        const std::filesystem::path& path);

}  // namespace ecgxai::xai
