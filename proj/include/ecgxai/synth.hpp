#pragma once

#include <cstdint>
#include <vector>

#include "ecgxai/signal.hpp"

namespace ecgxai::synth {

// Two raised-cosine bumps: a low, wide pre-excitation bump followed by a
// taller, narrower QRS-like bump. Positions are in time steps.
struct WaveTemplate {
  double delta_onset = 60.0;
  double delta_width = 36.0;
  double delta_amplitude = 0.3;
  double qrs_onset = 84.0;
  double qrs_width = 20.0;
  double qrs_amplitude = 1.0;

  // First and one-past-last step with nonzero value.
  double start() const;
  double end() const;
  double value(double t) const;
};

struct GeneratorConfig {
  int samples_per_class = 100;
  int class_count = signal::kDefaultClasses;
  int steps = signal::kDefaultSteps;
  int leads = signal::kDefaultLeads;
  double noise_std = 0.05;   // 5% of the unit QRS peak
  int jitter = 10;           // per-sample shift drawn uniformly from [-jitter, jitter]
  // Morphological sub-types per class; sample i of a class uses variant i % variants.
  int variants = 1;
  double variant_strength = 0.8;
  // Leads allowed to carry signal (empty = all). Noise is added everywhere.
  std::vector<int> active_leads;
  // Optional overrides; generated from `seed` when empty.
  std::vector<double> class_projection;  // C x L, row-major
  std::vector<WaveTemplate> templates;   // one per class
  // Minimum pairwise row distance with all leads active; scaled by the active
  // fraction when `active_leads` is set.
  double min_projection_distance = 1.5;
  std::uint64_t seed = 7;

  void validate() const;
};

// Lead polarity/amplitude rows: a shared LV or RV base plus a per-class
// perturbation, re-drawn until all rows are at least `min_distance` apart.
std::vector<double> make_class_projection(const GeneratorConfig& config);
double effective_min_distance(double min_distance, double active_leads, std::size_t leads);
std::vector<WaveTemplate> make_templates(const GeneratorConfig& config);

// Noiseless class waveform with zero shift (variant 0); useful as a template
// for nearest-template checks.
signal::EcgSignal class_template(const GeneratorConfig& config, int cls);

signal::LabeledDataset generate_dataset(const GeneratorConfig& config);

}  // namespace ecgxai::synth
