#include "ecgxai/cluster.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <set>

#include "ecgxai/error.hpp"
#include "ecgxai/rng.hpp"

namespace ecgxai::cluster {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr int kMaxSweeps = 10000;

struct Partition {
  std::vector<int> assignment;
  double cost = 0.0;
};

// Medoids keep their own cluster; other points go to the nearest medoid,
// ties toward the lower cluster id.
Partition assign(const DistanceMatrix& dist, const std::vector<std::size_t>& medoids) {
  const std::size_t n = dist.size();
  Partition p;
  p.assignment.assign(n, -1);
  for (std::size_t c = 0; c < medoids.size(); ++c) p.assignment[medoids[c]] = static_cast<int>(c);
  for (std::size_t i = 0; i < n; ++i) {
    if (p.assignment[i] >= 0) continue;
    double best = kInf;
    for (std::size_t c = 0; c < medoids.size(); ++c) {
      const double d = dist(i, medoids[c]);
      if (d < best) {
        best = d;
        p.assignment[i] = static_cast<int>(c);
      }
    }
    p.cost += best;
  }
  return p;
}

std::size_t distinct_clusters(std::span<const int> assignment) {
  return std::set<int>(assignment.begin(), assignment.end()).size();
}

}  // namespace

DistanceMatrix::DistanceMatrix(std::size_t n, std::vector<double> values) : n_(n), d_(std::move(values)) {
  if (d_.size() != n * n) {
    throw ValidationError("distance matrix needs " + std::to_string(n * n) + " entries, got " +
                          std::to_string(d_.size()));
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (d_[i * n + i] != 0.0) throw ValidationError("distance matrix diagonal must be exactly 0");
    for (std::size_t j = 0; j < n; ++j) {
      const double v = d_[i * n + j];
      if (!(v >= 0.0) || !std::isfinite(v)) throw ValidationError("distances must be finite and non-negative");
      if (std::abs(v - d_[j * n + i]) > 1e-9) throw ValidationError("distance matrix is not symmetric");
    }
  }
}

double dtw_distance(std::span<const float> a, std::size_t len_a, std::span<const float> b, std::size_t len_b,
                    std::size_t leads, const DtwOptions& options) {
  if (len_a == 0 || len_b == 0 || leads == 0) throw ValidationError("DTW needs non-empty series");
  if (a.size() != len_a * leads || b.size() != len_b * leads) {
    throw ValidationError("DTW series sizes do not match their declared shapes");
  }
  if (options.band && *options.band < 0) throw ValidationError("DTW band must be non-negative");
  // A band narrower than the length difference cannot reach the end cell.
  const double band = options.band
                          ? std::max<double>(*options.band, std::abs(static_cast<double>(len_a) - len_b))
                          : kInf;
  const double slope = len_a > 1 ? static_cast<double>(len_b - 1) / static_cast<double>(len_a - 1) : 0.0;

  std::vector<double> prev(len_b + 1, kInf), cur(len_b + 1, kInf);
  prev[0] = 0.0;
  for (std::size_t i = 1; i <= len_a; ++i) {
    cur[0] = kInf;
    const float* ra = a.data() + (i - 1) * leads;
    const double centre = static_cast<double>(i - 1) * slope;
    for (std::size_t j = 1; j <= len_b; ++j) {
      if (std::abs(static_cast<double>(j - 1) - centre) > band) {
        cur[j] = kInf;
        continue;
      }
      const float* rb = b.data() + (j - 1) * leads;
      double cost = 0.0;
      for (std::size_t l = 0; l < leads; ++l) {
        const double d = static_cast<double>(ra[l]) - rb[l];
        cost += d * d;
      }
      cur[j] = cost + std::min({prev[j], cur[j - 1], prev[j - 1]});
    }
    std::swap(prev, cur);
  }
  return prev[len_b];
}

double dtw_distance(const signal::EcgSignal& a, const signal::EcgSignal& b, const DtwOptions& options) {
  if (a.leads() != b.leads()) {
    throw ValidationError("DTW needs equal lead counts (" + std::to_string(a.leads()) + " vs " +
                          std::to_string(b.leads()) + ")");
  }
  return dtw_distance(a.values(), static_cast<std::size_t>(a.steps()), b.values(),
                      static_cast<std::size_t>(b.steps()), static_cast<std::size_t>(a.leads()), options);
}

DistanceMatrix dtw_matrix(std::span<const signal::EcgSignal> signals, const DtwOptions& options) {
  DistanceMatrix d(signals.size());
  for (std::size_t i = 0; i < signals.size(); ++i) {
    for (std::size_t j = i + 1; j < signals.size(); ++j) d.set(i, j, dtw_distance(signals[i], signals[j], options));
  }
  return d;
}

ClusteringResult kmedoids(const DistanceMatrix& dist, int k, std::uint64_t seed) {
  const std::size_t n = dist.size();
  if (k < 1) throw ValidationError("k must be >= 1");
  if (static_cast<std::size_t>(k) > n) {
    throw ValidationError("k=" + std::to_string(k) + " exceeds the " + std::to_string(n) + " samples");
  }
  Rng rng(seed);
  std::vector<std::size_t> medoids = {static_cast<std::size_t>(rng.below(n))};
  std::vector<double> nearest(n);
  for (std::size_t i = 0; i < n; ++i) nearest[i] = dist(i, medoids[0]);
  while (medoids.size() < static_cast<std::size_t>(k)) {
    std::size_t pick = n;
    double far = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (std::find(medoids.begin(), medoids.end(), i) != medoids.end()) continue;
      if (nearest[i] > far) {
        far = nearest[i];
        pick = i;
      }
    }
    medoids.push_back(pick);
    for (std::size_t i = 0; i < n; ++i) nearest[i] = std::min(nearest[i], dist(i, pick));
  }

  ClusteringResult r;
  r.k = k;
  Partition part = assign(dist, medoids);
  r.cost_history.push_back(part.cost);
  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    bool moved = false;
    for (std::size_t c = 0; c < medoids.size(); ++c) {
      auto within = [&](std::size_t m) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          if (part.assignment[i] == static_cast<int>(c)) s += dist(i, m);
        }
        return s;
      };
      double best = within(medoids[c]);
      for (std::size_t i = 0; i < n; ++i) {
        if (part.assignment[i] != static_cast<int>(c) || i == medoids[c]) continue;
        const double s = within(i);
        if (s < best) {
          best = s;
          medoids[c] = i;
          moved = true;
        }
      }
    }
    if (!moved) break;
    Partition next = assign(dist, medoids);
    part = std::move(next);
    r.cost_history.push_back(part.cost);
  }
  r.medoids = medoids;
  r.assignment = part.assignment;
  r.cost = part.cost;
  r.silhouette = k >= 2 ? silhouette(dist, r.assignment) : std::numeric_limits<double>::quiet_NaN();
  return r;
}

std::vector<double> silhouette_samples(const DistanceMatrix& dist, std::span<const int> assignment) {
  const std::size_t n = dist.size();
  if (assignment.size() != n) throw ValidationError("assignment length differs from the distance matrix");
  if (distinct_clusters(assignment) < 2) throw ValidationError("silhouette needs at least 2 clusters");
  std::map<int, std::size_t> sizes;
  for (int c : assignment) ++sizes[c];
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const int own = assignment[i];
    if (sizes[own] == 1) continue;
    std::map<int, double> sums;
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) sums[assignment[j]] += dist(i, j);
    }
    const double a = sums[own] / static_cast<double>(sizes[own] - 1);
    double b = kInf;
    for (const auto& [c, s] : sums) {
      if (c != own) b = std::min(b, s / static_cast<double>(sizes[c]));
    }
    const double denom = std::max(a, b);
    out[i] = denom > 0.0 ? (b - a) / denom : 0.0;
  }
  return out;
}

double silhouette(const DistanceMatrix& dist, std::span<const int> assignment) {
  const auto s = silhouette_samples(dist, assignment);
  double total = 0.0;
  for (double v : s) total += v;
  return total / static_cast<double>(s.size());
}

ClusteringResult select_k(const DistanceMatrix& dist, std::span<const int> candidates, std::uint64_t seed) {
  if (candidates.empty()) throw ValidationError("no k candidates given");
  std::vector<int> ks(candidates.begin(), candidates.end());
  std::sort(ks.begin(), ks.end());
  ks.erase(std::unique(ks.begin(), ks.end()), ks.end());
  if (ks.front() < 2) throw ValidationError("k candidates must be >= 2 for silhouette selection");
  if (dist.size() < static_cast<std::size_t>(ks.back()) + 1) {
    throw ValidationError("too few samples for k=" + std::to_string(ks.back()) + ": need at least " +
                          std::to_string(ks.back() + 1) + ", have " + std::to_string(dist.size()));
  }
  ClusteringResult best;
  bool have = false;
  for (int k : ks) {
    auto r = kmedoids(dist, k, seed);
    if (!have || r.silhouette > best.silhouette) {
      best = std::move(r);
      have = true;
    }
  }
  return best;
}

ClusteringResult select_k(std::span<const signal::EcgSignal> signals, std::span<const int> candidates,
                          std::uint64_t seed, const DtwOptions& options) {
  return select_k(dtw_matrix(signals, options), candidates, seed);
}

void write_report_csv(const ClusteringResult& result, const DistanceMatrix& dist,
                      std::span<const std::size_t> sample_ids, const std::filesystem::path& path) {
  if (sample_ids.size() != result.assignment.size()) {
    throw ValidationError("report needs one sample id per clustered sample");
  }
  std::vector<double> sil(result.assignment.size(), 0.0);
  if (result.k >= 2) sil = silhouette_samples(dist, result.assignment);
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out << "sample,cluster,medoid,silhouette\n" << std::setprecision(10);
  for (std::size_t i = 0; i < sample_ids.size(); ++i) {
    const bool medoid = std::find(result.medoids.begin(), result.medoids.end(), i) != result.medoids.end();
    out << sample_ids[i] << ',' << result.assignment[i] << ',' << (medoid ? 1 : 0) << ',' << sil[i] << '\n';
  }
}

}  // namespace ecgxai::cluster
