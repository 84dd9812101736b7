#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace ecgxai::signal {

inline constexpr int kDefaultSteps = 200;
inline constexpr int kDefaultLeads = 12;
inline constexpr int kDefaultClasses = 24;

inline const std::array<std::string, 12>& standard_lead_names() {
  static const std::array<std::string, 12> names = {
      "I", "II", "III", "aVR", "aVL", "aVF", "V1", "V2", "V3", "V4", "V5", "V6"};
  return names;
}

// Index of a lead name in the standard 12-lead order; throws on unknown names.
int lead_index(const std::string& name);

enum class Ventricle : std::uint8_t { LV, RV };

std::string to_string(Ventricle v);
Ventricle parse_ventricle(const std::string& text);

// One multivariate recording: values[t * L + l] is the voltage (mV) of lead l at step t.
class EcgSignal {
 public:
  EcgSignal(int steps, int leads, std::vector<float> values,
            std::vector<std::string> lead_names = {});

  int steps() const { return steps_; }
  int leads() const { return leads_; }
  float at(int t, int l) const { return values_[static_cast<std::size_t>(t) * leads_ + l]; }
  std::span<const float> values() const { return values_; }
  const std::vector<std::string>& lead_names() const { return lead_names_; }

  friend bool operator==(const EcgSignal&, const EcgSignal&) = default;

 private:
  int steps_;
  int leads_;
  std::vector<float> values_;
  std::vector<std::string> lead_names_;
};

struct LabeledDataset {
  int steps = kDefaultSteps;
  int leads = kDefaultLeads;
  std::vector<EcgSignal> signals;
  std::vector<int> labels;
  int class_count = kDefaultClasses;
  std::vector<Ventricle> ventricle_of_class;

  std::size_t size() const { return signals.size(); }
  // Throws ValidationError when the invariants (equal lengths, labels < C,
  // uniform signal shape, ventricle map sized C) are violated.
  void validate() const;
};

// Classes 0..C/2-1 are LV, the remainder RV.
std::vector<Ventricle> default_ventricles(int class_count);

enum class Layout : std::uint8_t { Stacked, MultiChannel, Image };

std::string to_string(Layout layout);

// Network input in height x width x channels order (row-major, channels last).
//   Stacked:      (T*L) x 1 x 1, lead-major (all of lead 0, then lead 1, ...)
//   MultiChannel: T x 1 x L
//   Image:        T x L x 1
struct ReshapedInput {
  Layout layout = Layout::Image;
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<float> data;

  std::size_t size() const { return data.size(); }
};

ReshapedInput reshape(const EcgSignal& signal, Layout layout);
// Inverse of reshape; `steps`/`leads` are needed to undo the stacked layout.
EcgSignal unreshape(const ReshapedInput& input, int steps, int leads);

struct SplitRatios {
  double train = 0.75;
  double val = 0.15;
  double test = 0.10;
};

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
};

// Per-class largest-remainder allocation; leftover samples go to train.
// Deterministic in `seed`; each list is sorted ascending.
SplitIndices stratified_split(const LabeledDataset& dataset, SplitRatios ratios,
                              std::uint64_t seed);

void write_split(const SplitIndices& split, const std::filesystem::path& path);
SplitIndices read_split(const std::filesystem::path& path);

// On-disk dataset: a directory holding `manifest` and `signals.bin`.
inline constexpr int kDatasetFormatVersion = 1;

void write_dataset(const LabeledDataset& dataset, const std::filesystem::path& dir);
LabeledDataset read_dataset(const std::filesystem::path& dir);

}  // namespace ecgxai::signal
