#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ecgxai/signal.hpp"
#include "ecgxai/xai.hpp"

namespace ecgxai::stats {

// ---------------------------------------------------------------------------
// Lead importance
// ---------------------------------------------------------------------------

// Per class, the absolute saliency summed over time and over the correctly
// classified samples (`mass`), and the normalized share of each lead.
struct LeadImportanceMatrix {
  int classes = 0;
  int leads = 0;
  std::vector<double> mass;  // classes x leads
  std::vector<long> counts;  // samples pooled per class

  double row_total(int c) const;
  // False when the class pooled no sample or its maps carry no mass.
  bool defined(int c) const;
  // Lead shares of class c; throws for an undefined row.
  std::vector<double> row(int c) const;
  double value(int c, int l) const;
};

// `maps` must be T x L; `predicted[i]` must equal `labels[i]`.
LeadImportanceMatrix lead_importance(std::span<const xai::SaliencyMap> maps, std::span<const int> labels,
                                     std::span<const int> predicted, int classes, int steps, int leads);

struct VentricleImportance {
  signal::Ventricle ventricle = signal::Ventricle::LV;
  std::vector<int> classes;       // defined classes that were pooled
  std::vector<double> mass;       // pooled raw per-lead mass
  std::vector<double> share;      // mass / sum(mass)
  std::vector<int> ranking;       // lead indices, most important first
  std::vector<int> rank_of_lead;  // 0 = most important
};

// Pools raw masses of all defined classes of a ventricle before normalizing.
// Throws when a ventricle has no defined class.
std::vector<VentricleImportance> ventricle_rank(const LeadImportanceMatrix& li,
                                                std::span<const signal::Ventricle> ventricle_of_class);

void write_lead_importance_csv(const LeadImportanceMatrix& li, std::span<const VentricleImportance> ventricles,
                               std::span<const std::string> lead_names, const std::filesystem::path& path);
void write_ranking_csv(std::span<const VentricleImportance> ventricles, std::span<const std::string> lead_names,
                       const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Fisher's exact test
// ---------------------------------------------------------------------------

// Rows are methods, columns are (correct, incorrect).
struct ContingencyTable2x2 {
  long a = 0;
  long b = 0;
  long c = 0;
  long d = 0;

  void validate() const;
};

// P(X >= x) and P(X <= x) for X hypergeometric with population n, `successes`
// marked items and `draws` draws.
double hypergeometric_upper_tail(long x, long n, long successes, long draws);
double hypergeometric_lower_tail(long x, long n, long successes, long draws);

// P(X >= a) with the table margins fixed: the probability that the first
// method gets at least this many correct under the null.
double fisher_one_sided(const ContingencyTable2x2& table);

// ---------------------------------------------------------------------------
// Region remapping
// ---------------------------------------------------------------------------

enum class Scheme : std::uint8_t { EasyWpw, Arruda };

std::string to_string(Scheme s);
// "easy-wpw" / "easy_wpw" / "arruda", case-insensitive.
Scheme parse_scheme(const std::string& text);

// Region names in table order.
const std::vector<std::string>& scheme_regions(Scheme s);
// Dataset classes listed under a region.
const std::vector<int>& region_classes(Scheme s, const std::string& region);
// Regions (table order) whose class list contains `cls`.
std::vector<std::string> remap_region(int cls, Scheme s);

// ---------------------------------------------------------------------------
// Comparison against a decision-tree baseline
// ---------------------------------------------------------------------------

inline constexpr double kAlpha = 0.05;

struct BaselinePrediction {
  std::size_t sample = 0;
  Scheme scheme = Scheme::EasyWpw;
  std::string region;
};

struct ComparisonRow {
  std::size_t sample = 0;
  int truth_class = 0;
  std::vector<std::string> truth_set;
  int fcn_class = 0;
  bool fcn_correct = false;
  std::string baseline_region;
  bool baseline_correct = false;
};

struct ComparisonResult {
  Scheme scheme = Scheme::EasyWpw;
  std::vector<ComparisonRow> rows;
  ContingencyTable2x2 table;  // row 1 = network, row 2 = baseline
  double fcn_accuracy = 0.0;       // percent
  double baseline_accuracy = 0.0;  // percent
  double alpha = kAlpha;
  double p_value = 1.0;
  bool significant = false;
};

// Samples are matched by index; every network prediction needs exactly one
// baseline prediction in `scheme`. The network is correct when any region of
// its predicted class lies in the truth set of the true class.
ComparisonResult dt_comparison(std::span<const std::size_t> samples, std::span<const int> truth,
                               std::span<const int> fcn_predicted, std::span<const BaselinePrediction> baseline,
                               Scheme scheme, double alpha = kAlpha);

std::vector<BaselinePrediction> read_baseline_csv(const std::filesystem::path& path);
void write_comparison_csv(const ComparisonResult& result, const std::filesystem::path& path);
void write_comparison_summary(const ComparisonResult& result, const std::filesystem::path& path);

}  // namespace ecgxai::stats
