#include "ecgxai/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <numbers>
#include <string>

#include "ecgxai/error.hpp"
#include "ecgxai/rng.hpp"

namespace ecgxai::synth {

namespace {

// Stream identifiers so that projections, templates, variants and samples draw
// from unrelated sequences of the same seed.
constexpr std::uint64_t kProjectionStream = 0x70726f6aULL;
constexpr std::uint64_t kTemplateStream = 0x74706c74ULL;
constexpr std::uint64_t kVariantStream = 0x76617269ULL;

double raised_cosine(double t, double onset, double width, double amplitude) {
  const double u = (t - onset) / width;
  if (u <= 0.0 || u >= 1.0) return 0.0;
  return amplitude * 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * u));
}

std::vector<double> lead_mask(const GeneratorConfig& config) {
  std::vector<double> mask(static_cast<std::size_t>(config.leads), config.active_leads.empty() ? 1.0 : 0.0);
  for (int l : config.active_leads) mask[static_cast<std::size_t>(l)] = 1.0;
  return mask;
}

std::vector<double> variant_offsets(const GeneratorConfig& config) {
  const auto C = static_cast<std::size_t>(config.class_count);
  const auto V = static_cast<std::size_t>(config.variants);
  const auto L = static_cast<std::size_t>(config.leads);
  const auto mask = lead_mask(config);
  std::vector<double> out(C * V * L, 0.0);
  for (std::size_t c = 0; c < C; ++c) {
    // Variant 0 is the class base shape.
    for (std::size_t v = 1; v < V; ++v) {
      Rng rng = Rng::derive(config.seed ^ kVariantStream, c * V + v);
      for (std::size_t l = 0; l < L; ++l) {
        out[(c * V + v) * L + l] = mask[l] * config.variant_strength * rng.uniform(-1.0, 1.0);
      }
    }
  }
  return out;
}

struct Resolved {
  std::vector<double> projection;
  std::vector<WaveTemplate> templates;
  std::vector<double> variants;
};

Resolved resolve(const GeneratorConfig& config) {
  config.validate();
  Resolved r;
  r.projection = config.class_projection.empty() ? make_class_projection(config) : config.class_projection;
  r.templates = config.templates.empty() ? make_templates(config) : config.templates;
  r.variants = variant_offsets(config);
  for (std::size_t c = 0; c < r.templates.size(); ++c) {
    const auto& tpl = r.templates[c];
    if (tpl.start() - config.jitter < 0.0 || tpl.end() + config.jitter > config.steps) {
      throw ValidationError("class " + std::to_string(c) + " template spans [" +
                            std::to_string(tpl.start()) + ", " + std::to_string(tpl.end()) +
                            "); jitter " + std::to_string(config.jitter) +
                            " would push it outside [0, " + std::to_string(config.steps) + ")");
    }
  }
  return r;
}

std::vector<float> render(const GeneratorConfig& config, const Resolved& r, int cls, int variant,
                          int shift, Rng* noise) {
  const auto L = static_cast<std::size_t>(config.leads);
  const auto V = static_cast<std::size_t>(config.variants);
  const auto& tpl = r.templates[static_cast<std::size_t>(cls)];
  std::vector<float> values(static_cast<std::size_t>(config.steps) * L);
  for (int t = 0; t < config.steps; ++t) {
    const double w = tpl.value(static_cast<double>(t - shift));
    for (std::size_t l = 0; l < L; ++l) {
      const double gain = r.projection[static_cast<std::size_t>(cls) * L + l] +
                          r.variants[(static_cast<std::size_t>(cls) * V + variant) * L + l];
      double v = gain * w;
      if (noise != nullptr && config.noise_std > 0.0) v += config.noise_std * noise->normal();
      values[static_cast<std::size_t>(t) * L + l] = static_cast<float>(v);
    }
  }
  return values;
}

}  // namespace

double WaveTemplate::start() const { return std::min(delta_onset, qrs_onset); }

double WaveTemplate::end() const {
  return std::max(delta_onset + delta_width, qrs_onset + qrs_width);
}

double WaveTemplate::value(double t) const {
  return raised_cosine(t, delta_onset, delta_width, delta_amplitude) +
         raised_cosine(t, qrs_onset, qrs_width, qrs_amplitude);
}

void GeneratorConfig::validate() const {
  if (samples_per_class < 1) throw ValidationError("samples_per_class must be >= 1");
  if (class_count < 1) throw ValidationError("class_count must be >= 1");
  if (steps < 1 || leads < 1) throw ValidationError("steps and leads must be >= 1");
  if (!(noise_std >= 0.0) || !std::isfinite(noise_std)) throw ValidationError("noise_std must be >= 0");
  if (jitter < 0) throw ValidationError("jitter must be >= 0");
  if (variants < 1) throw ValidationError("variants must be >= 1");
  for (int l : active_leads) {
    if (l < 0 || l >= leads) throw ValidationError("active lead index out of range");
  }
  if (!class_projection.empty() &&
      class_projection.size() != static_cast<std::size_t>(class_count) * leads) {
    throw ValidationError("class_projection must be C x L");
  }
  if (!templates.empty() && templates.size() != static_cast<std::size_t>(class_count)) {
    throw ValidationError("templates must hold one entry per class");
  }
}

double effective_min_distance(double min_distance, double active_leads, std::size_t leads) {
  return min_distance * active_leads / static_cast<double>(leads);
}

std::vector<double> make_class_projection(const GeneratorConfig& config) {
  const auto C = static_cast<std::size_t>(config.class_count);
  const auto L = static_cast<std::size_t>(config.leads);
  const auto mask = lead_mask(config);
  Rng rng(config.seed ^ kProjectionStream);

  auto random_sign_row = [&]() {
    std::vector<double> row(L);
    for (std::size_t l = 0; l < L; ++l) {
      const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
      row[l] = mask[l] * sign * rng.uniform(0.5, 1.5);
    }
    return row;
  };
  const std::vector<double> left = random_sign_row();
  const std::vector<double> right = random_sign_row();

  std::vector<double> out(C * L);
  // With a lead mask the rows live in fewer dimensions; shrink the spacing in
  // proportion so that 24 rows still fit.
  const double active = std::accumulate(mask.begin(), mask.end(), 0.0);
  const double min_distance = effective_min_distance(config.min_projection_distance, active, L);
  const double min_sq = min_distance * min_distance;
  for (std::size_t c = 0; c < C; ++c) {
    const auto& base = (c < C / 2) ? left : right;
    for (int attempt = 0;; ++attempt) {
      if (attempt > 10000) {
        throw ValidationError("cannot place class projections at the requested minimum distance");
      }
      for (std::size_t l = 0; l < L; ++l) {
        out[c * L + l] = mask[l] * (0.6 * base[l] + rng.uniform(-1.0, 1.0));
      }
      bool ok = true;
      for (std::size_t prev = 0; prev < c && ok; ++prev) {
        double d = 0.0;
        for (std::size_t l = 0; l < L; ++l) {
          const double diff = out[c * L + l] - out[prev * L + l];
          d += diff * diff;
        }
        ok = d >= min_sq;
      }
      if (ok) break;
    }
  }
  return out;
}

std::vector<WaveTemplate> make_templates(const GeneratorConfig& config) {
  std::vector<WaveTemplate> out(static_cast<std::size_t>(config.class_count));
  // Shapes are laid out for the default 200-step window and scale with `steps`.
  const double scale = static_cast<double>(config.steps) / signal::kDefaultSteps;
  for (std::size_t c = 0; c < out.size(); ++c) {
    Rng rng = Rng::derive(config.seed ^ kTemplateStream, c);
    WaveTemplate& t = out[c];
    t.delta_onset = scale * rng.uniform(55.0, 65.0);
    t.delta_width = scale * rng.uniform(30.0, 42.0);
    t.delta_amplitude = rng.uniform(0.2, 0.4);
    t.qrs_onset = t.delta_onset + 0.6 * t.delta_width + scale * rng.uniform(0.0, 4.0);
    t.qrs_width = scale * rng.uniform(16.0, 24.0);
    t.qrs_amplitude = 1.0;
  }
  return out;
}

signal::EcgSignal class_template(const GeneratorConfig& config, int cls) {
  const Resolved r = resolve(config);
  if (cls < 0 || cls >= config.class_count) throw ValidationError("class index out of range");
  return signal::EcgSignal(config.steps, config.leads, render(config, r, cls, 0, 0, nullptr));
}

signal::LabeledDataset generate_dataset(const GeneratorConfig& config) {
  const Resolved r = resolve(config);
  signal::LabeledDataset ds;
  ds.steps = config.steps;
  ds.leads = config.leads;
  ds.class_count = config.class_count;
  ds.ventricle_of_class = signal::default_ventricles(config.class_count);
  const auto n = static_cast<std::size_t>(config.class_count) * config.samples_per_class;
  ds.signals.reserve(n);
  ds.labels.reserve(n);
  for (int c = 0; c < config.class_count; ++c) {
    for (int i = 0; i < config.samples_per_class; ++i) {
      const std::uint64_t index = static_cast<std::uint64_t>(c) * config.samples_per_class + i;
      Rng rng = Rng::derive(config.seed, index);
      const int shift = static_cast<int>(rng.integer(-config.jitter, config.jitter));
      ds.signals.emplace_back(config.steps, config.leads,
                              render(config, r, c, i % config.variants, shift, &rng));
      ds.labels.push_back(c);
    }
  }
  return ds;
}

}  // namespace ecgxai::synth
