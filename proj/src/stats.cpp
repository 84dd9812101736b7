#include "ecgxai/stats.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include "ecgxai/error.hpp"

namespace ecgxai::stats {

namespace {

struct RegionTable {
  std::vector<std::string> names;
  std::vector<std::vector<int>> classes;
};

const RegionTable& table_of(Scheme s) {
  static const RegionTable easy{
      {"MV-AL", "MV-PL", "MV-PS", "TV-AL", "TV-PL", "TV-PS", "TV-AS"},
      {{3, 9, 4, 10, 5, 11},
       {0, 6, 1, 7, 5, 11},
       {1, 7, 2, 8},
       {13, 19, 14, 20, 15, 21, 16, 22, 17, 23},
       {12, 18, 13, 19},
       {12, 18, 1, 7, 2, 8},
       {17, 23, 2, 8, 3, 9, 4, 10}}};
  static const RegionTable arruda{
      {"LAL", "LL", "LP", "LPL", "PSMA", "PSTA", "MSTA", "AS", "RA", "RP", "RPL", "RL", "RAL"},
      {{4, 10, 5, 11},
       {0, 6, 5, 11},
       {1, 7, 0, 6},
       {0, 6},
       {1, 7, 2, 8},
       {12, 18, 1, 7, 2, 8},
       {2, 8},
       {2, 8, 3, 9},
       {3, 9, 4, 10, 16, 22, 17, 23},
       {12, 18},
       {12, 18, 13, 19},
       {13, 19, 14, 20},
       {14, 20, 15, 21, 16, 22}}};
  return s == Scheme::EasyWpw ? easy : arruda;
}

constexpr int kRemapClasses = 24;

double log_choose(long n, long k) {
  return std::lgamma(static_cast<double>(n) + 1.0) - std::lgamma(static_cast<double>(k) + 1.0) -
         std::lgamma(static_cast<double>(n - k) + 1.0);
}

double log_sum_exp(const std::vector<double>& terms) {
  if (terms.empty()) return -std::numeric_limits<double>::infinity();
  const double top = *std::max_element(terms.begin(), terms.end());
  double s = 0.0;
  for (double t : terms) s += std::exp(t - top);
  return top + std::log(s);
}

// Log-probabilities of X = lo..hi under the hypergeometric law.
double hypergeometric_range(long lo, long hi, long n, long successes, long draws) {
  if (n < 0 || successes < 0 || draws < 0 || successes > n || draws > n) {
    throw ValidationError("invalid hypergeometric parameters");
  }
  lo = std::max({lo, 0L, draws - (n - successes)});
  hi = std::min({hi, successes, draws});
  if (lo > hi) return 0.0;
  const double denom = log_choose(n, draws);
  std::vector<double> terms;
  for (long x = lo; x <= hi; ++x) {
    terms.push_back(log_choose(successes, x) + log_choose(n - successes, draws - x) - denom);
  }
  return std::min(1.0, std::exp(log_sum_exp(terms)));
}

std::string lower(std::string s) {
  for (auto& ch : s) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return s;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::string join(const std::vector<std::string>& parts, char sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

}  // namespace

double LeadImportanceMatrix::row_total(int c) const {
  double s = 0.0;
  for (int l = 0; l < leads; ++l) s += mass[static_cast<std::size_t>(c) * leads + l];
  return s;
}

bool LeadImportanceMatrix::defined(int c) const { return counts[c] > 0 && row_total(c) > 0.0; }

std::vector<double> LeadImportanceMatrix::row(int c) const {
  if (c < 0 || c >= classes) throw ValidationError("class " + std::to_string(c) + " out of range");
  if (!defined(c)) throw ValidationError("lead importance of class " + std::to_string(c) + " is undefined");
  const double total = row_total(c);
  std::vector<double> out(static_cast<std::size_t>(leads));
  for (int l = 0; l < leads; ++l) out[l] = mass[static_cast<std::size_t>(c) * leads + l] / total;
  return out;
}

double LeadImportanceMatrix::value(int c, int l) const { return row(c).at(static_cast<std::size_t>(l)); }

LeadImportanceMatrix lead_importance(std::span<const xai::SaliencyMap> maps, std::span<const int> labels,
                                     std::span<const int> predicted, int classes, int steps, int leads) {
  if (maps.size() != labels.size() || maps.size() != predicted.size()) {
    throw ValidationError("lead importance needs one label and one prediction per map");
  }
  if (classes <= 0 || steps <= 0 || leads <= 0) throw ValidationError("lead importance needs positive C, T, L");
  LeadImportanceMatrix li;
  li.classes = classes;
  li.leads = leads;
  li.mass.assign(static_cast<std::size_t>(classes) * leads, 0.0);
  li.counts.assign(static_cast<std::size_t>(classes), 0);
  for (std::size_t i = 0; i < maps.size(); ++i) {
    const auto& m = maps[i];
    if (!m.is_2d() || m.dims[0] != steps || m.dims[1] != leads) {
      throw ValidationError("lead importance needs " + std::to_string(steps) + "x" + std::to_string(leads) +
                            " maps, sample " + std::to_string(i) + " is " + xai::dims_string(m.dims));
    }
    if (labels[i] < 0 || labels[i] >= classes) throw ValidationError("label out of range in lead importance");
    if (predicted[i] != labels[i]) {
      throw ValidationError("sample " + std::to_string(i) + " is misclassified (label " + std::to_string(labels[i]) +
                            ", predicted " + std::to_string(predicted[i]) + ")");
    }
    double* row = li.mass.data() + static_cast<std::size_t>(labels[i]) * leads;
    for (int t = 0; t < steps; ++t) {
      for (int l = 0; l < leads; ++l) row[l] += std::abs(m.at(t, l));
    }
    ++li.counts[labels[i]];
  }
  return li;
}

std::vector<VentricleImportance> ventricle_rank(const LeadImportanceMatrix& li,
                                                std::span<const signal::Ventricle> ventricle_of_class) {
  if (ventricle_of_class.size() != static_cast<std::size_t>(li.classes)) {
    throw ValidationError("ventricle map covers " + std::to_string(ventricle_of_class.size()) + " classes, need " +
                          std::to_string(li.classes));
  }
  std::vector<VentricleImportance> out;
  for (auto v : {signal::Ventricle::LV, signal::Ventricle::RV}) {
    VentricleImportance vi;
    vi.ventricle = v;
    vi.mass.assign(static_cast<std::size_t>(li.leads), 0.0);
    for (int c = 0; c < li.classes; ++c) {
      if (ventricle_of_class[c] != v || !li.defined(c)) continue;
      vi.classes.push_back(c);
      for (int l = 0; l < li.leads; ++l) vi.mass[l] += li.mass[static_cast<std::size_t>(c) * li.leads + l];
    }
    if (vi.classes.empty()) {
      throw ValidationError("no class with defined lead importance in ventricle " + signal::to_string(v));
    }
    const double total = std::accumulate(vi.mass.begin(), vi.mass.end(), 0.0);
    for (double m : vi.mass) vi.share.push_back(m / total);
    vi.ranking.resize(static_cast<std::size_t>(li.leads));
    std::iota(vi.ranking.begin(), vi.ranking.end(), 0);
    std::stable_sort(vi.ranking.begin(), vi.ranking.end(),
                     [&](int x, int y) { return vi.share[x] > vi.share[y]; });
    vi.rank_of_lead.resize(static_cast<std::size_t>(li.leads));
    for (int r = 0; r < li.leads; ++r) vi.rank_of_lead[vi.ranking[r]] = r;
    out.push_back(std::move(vi));
  }
  return out;
}

void write_lead_importance_csv(const LeadImportanceMatrix& li, std::span<const VentricleImportance> ventricles,
                               std::span<const std::string> lead_names, const std::filesystem::path& path) {
  if (lead_names.size() != static_cast<std::size_t>(li.leads)) throw ValidationError("lead name count mismatch");
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out << "row";
  for (const auto& n : lead_names) out << ',' << n;
  out << ",samples,defined\n" << std::setprecision(10);
  for (int c = 0; c < li.classes; ++c) {
    out << "class_" << c;
    if (li.defined(c)) {
      for (double v : li.row(c)) out << ',' << v;
    } else {
      for (int l = 0; l < li.leads; ++l) out << ',';
    }
    out << ',' << li.counts[c] << ',' << (li.defined(c) ? 1 : 0) << '\n';
  }
  for (const auto& v : ventricles) {
    long samples = 0;
    for (int c : v.classes) samples += li.counts[c];
    out << signal::to_string(v.ventricle);
    for (double s : v.share) out << ',' << s;
    out << ',' << samples << ",1\n";
  }
}

void write_ranking_csv(std::span<const VentricleImportance> ventricles, std::span<const std::string> lead_names,
                       const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out << "ventricle,rank,lead,importance\n" << std::setprecision(10);
  for (const auto& v : ventricles) {
    for (std::size_t r = 0; r < v.ranking.size(); ++r) {
      out << signal::to_string(v.ventricle) << ',' << r << ',' << lead_names[v.ranking[r]] << ','
          << v.share[v.ranking[r]] << '\n';
    }
  }
}

void ContingencyTable2x2::validate() const {
  if (a < 0 || b < 0 || c < 0 || d < 0) throw ValidationError("contingency counts must be non-negative");
  if (a + b + c + d == 0) throw ValidationError("contingency table is empty");
}

double hypergeometric_upper_tail(long x, long n, long successes, long draws) {
  return hypergeometric_range(x, std::numeric_limits<long>::max(), n, successes, draws);
}

double hypergeometric_lower_tail(long x, long n, long successes, long draws) {
  return hypergeometric_range(std::numeric_limits<long>::min(), x, n, successes, draws);
}

double fisher_one_sided(const ContingencyTable2x2& t) {
  t.validate();
  return hypergeometric_upper_tail(t.a, t.a + t.b + t.c + t.d, t.a + t.c, t.a + t.b);
}

std::string to_string(Scheme s) { return s == Scheme::EasyWpw ? "easy-wpw" : "arruda"; }

Scheme parse_scheme(const std::string& text) {
  std::string t = lower(trim(text));
  std::replace(t.begin(), t.end(), '_', '-');
  if (t == "easy-wpw" || t == "easywpw") return Scheme::EasyWpw;
  if (t == "arruda") return Scheme::Arruda;
  throw ValidationError("unknown scheme '" + text + "' (expected easy-wpw or arruda)");
}

const std::vector<std::string>& scheme_regions(Scheme s) { return table_of(s).names; }

const std::vector<int>& region_classes(Scheme s, const std::string& region) {
  const auto& t = table_of(s);
  for (std::size_t i = 0; i < t.names.size(); ++i) {
    if (t.names[i] == region) return t.classes[i];
  }
  throw ValidationError("region '" + region + "' is not part of the " + to_string(s) + " scheme");
}

std::vector<std::string> remap_region(int cls, Scheme s) {
  if (cls < 0 || cls >= kRemapClasses) {
    throw ValidationError("class " + std::to_string(cls) + " outside the 24 mapped classes");
  }
  const auto& t = table_of(s);
  std::vector<std::string> out;
  for (std::size_t i = 0; i < t.names.size(); ++i) {
    if (std::find(t.classes[i].begin(), t.classes[i].end(), cls) != t.classes[i].end()) out.push_back(t.names[i]);
  }
  return out;
}

ComparisonResult dt_comparison(std::span<const std::size_t> samples, std::span<const int> truth,
                               std::span<const int> fcn_predicted, std::span<const BaselinePrediction> baseline,
                               Scheme scheme, double alpha) {
  if (samples.size() != truth.size() || samples.size() != fcn_predicted.size()) {
    throw ValidationError("samples, truth and network predictions must have equal counts");
  }
  if (samples.empty()) throw ValidationError("nothing to compare");
  std::map<std::size_t, const BaselinePrediction*> by_sample;
  for (const auto& b : baseline) {
    if (b.scheme != scheme) {
      throw ValidationError("baseline prediction for sample " + std::to_string(b.sample) + " uses scheme " +
                            to_string(b.scheme) + " but the comparison uses " + to_string(scheme));
    }
    region_classes(scheme, b.region);  // rejects unknown region labels
    if (!by_sample.emplace(b.sample, &b).second) {
      throw ValidationError("duplicate baseline prediction for sample " + std::to_string(b.sample));
    }
  }
  if (by_sample.size() != samples.size()) {
    throw ValidationError("baseline covers " + std::to_string(by_sample.size()) + " samples, network covers " +
                          std::to_string(samples.size()));
  }

  ComparisonResult r;
  r.scheme = scheme;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto it = by_sample.find(samples[i]);
    if (it == by_sample.end()) {
      throw ValidationError("no baseline prediction for sample " + std::to_string(samples[i]));
    }
    ComparisonRow row;
    row.sample = samples[i];
    row.truth_class = truth[i];
    row.truth_set = remap_region(truth[i], scheme);
    row.fcn_class = fcn_predicted[i];
    for (const auto& region : remap_region(fcn_predicted[i], scheme)) {
      if (std::find(row.truth_set.begin(), row.truth_set.end(), region) != row.truth_set.end()) {
        row.fcn_correct = true;
      }
    }
    row.baseline_region = it->second->region;
    row.baseline_correct =
        std::find(row.truth_set.begin(), row.truth_set.end(), row.baseline_region) != row.truth_set.end();
    (row.fcn_correct ? r.table.a : r.table.b)++;
    (row.baseline_correct ? r.table.c : r.table.d)++;
    r.rows.push_back(std::move(row));
  }
  const double n = static_cast<double>(samples.size());
  r.fcn_accuracy = 100.0 * static_cast<double>(r.table.a) / n;
  r.baseline_accuracy = 100.0 * static_cast<double>(r.table.c) / n;
  r.p_value = fisher_one_sided(r.table);
  r.alpha = alpha;
  r.significant = r.p_value < alpha;
  return r;
}

std::vector<BaselinePrediction> read_baseline_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open baseline file " + path.string());
  std::vector<BaselinePrediction> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) cols.push_back(trim(cell));
    if (lineno == 1 && !cols.empty() && lower(cols[0]) == "sample") continue;
    if (cols.size() != 3) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected sample,scheme,region");
    }
    BaselinePrediction b;
    try {
      std::size_t used = 0;
      b.sample = std::stoull(cols[0], &used);
      if (used != cols[0].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": bad sample index '" + cols[0] + "'");
    }
    b.scheme = parse_scheme(cols[1]);
    b.region = cols[2];
    out.push_back(std::move(b));
  }
  return out;
}

void write_comparison_csv(const ComparisonResult& r, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out << "sample,truth_class,truth_set,fcn_class,fcn_correct,baseline_region,baseline_correct\n";
  for (const auto& row : r.rows) {
    out << row.sample << ',' << row.truth_class << ',' << join(row.truth_set, '|') << ',' << row.fcn_class << ','
        << (row.fcn_correct ? 1 : 0) << ',' << row.baseline_region << ',' << (row.baseline_correct ? 1 : 0) << '\n';
  }
}

void write_comparison_summary(const ComparisonResult& r, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out << "scheme=" << to_string(r.scheme) << '\n'
      << "samples=" << r.rows.size() << '\n'
      << "fcn_correct=" << r.table.a << "\nfcn_incorrect=" << r.table.b << '\n'
      << "baseline_correct=" << r.table.c << "\nbaseline_incorrect=" << r.table.d << '\n'
      << std::setprecision(6) << "fcn_accuracy=" << r.fcn_accuracy << '\n'
      << "baseline_accuracy=" << r.baseline_accuracy << '\n'
      << "p_value=" << r.p_value << '\n'
      << "alpha=" << r.alpha << '\n'
      << "verdict=" << (r.significant ? "significant" : "not significant") << '\n'
      << "note=network correctness is set membership: a prediction counts when one of its regions is in the "
         "truth set\n";
}

}  // namespace ecgxai::stats
