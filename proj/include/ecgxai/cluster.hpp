#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "ecgxai/signal.hpp"

namespace ecgxai::cluster {

// Symmetric, zero-diagonal, non-negative n x n matrix.
class DistanceMatrix {
 public:
  DistanceMatrix() = default;
  explicit DistanceMatrix(std::size_t n) : n_(n), d_(n * n, 0.0) {}
  // Checks shape, symmetry (1e-9), zero diagonal and non-negativity.
  DistanceMatrix(std::size_t n, std::vector<double> values);

  std::size_t size() const { return n_; }
  double operator()(std::size_t i, std::size_t j) const { return d_[i * n_ + j]; }
  void set(std::size_t i, std::size_t j, double v) {
    d_[i * n_ + j] = v;
    d_[j * n_ + i] = v;
  }
  const std::vector<double>& values() const { return d_; }

 private:
  std::size_t n_ = 0;
  std::vector<double> d_;
};

struct DtwOptions {
  // Sakoe-Chiba half-width in samples; unset means unconstrained.
  std::optional<int> band;
};

// Accumulated squared-Euclidean cost (across leads) along the optimal warping
// path with steps (1,0), (0,1), (1,1). No square root is taken.
double dtw_distance(const signal::EcgSignal& a, const signal::EcgSignal& b, const DtwOptions& options = {});
// Same on raw row-major (length x leads) arrays.
double dtw_distance(std::span<const float> a, std::size_t len_a, std::span<const float> b, std::size_t len_b,
                    std::size_t leads, const DtwOptions& options = {});

DistanceMatrix dtw_matrix(std::span<const signal::EcgSignal> signals, const DtwOptions& options = {});

struct ClusteringResult {
  int k = 0;
  std::vector<std::size_t> medoids;  // indices into the clustered set, one per cluster
  std::vector<int> assignment;       // sample -> cluster id
  double cost = 0.0;
  double silhouette = 0.0;           // NaN when k == 1
  std::vector<double> cost_history;  // after initialization, then after each sweep
};

// Seeded random first medoid, then farthest-point seeding; alternates nearest
// assignment and in-cluster medoid updates until no medoid moves.
ClusteringResult kmedoids(const DistanceMatrix& dist, int k, std::uint64_t seed);

// Per-sample silhouette; samples in singleton clusters score 0.
std::vector<double> silhouette_samples(const DistanceMatrix& dist, std::span<const int> assignment);
double silhouette(const DistanceMatrix& dist, std::span<const int> assignment);

inline const std::vector<int> kDefaultKCandidates = {2, 3, 4};

// Best silhouette over the candidates; ties go to the smaller k.
ClusteringResult select_k(const DistanceMatrix& dist, std::span<const int> candidates, std::uint64_t seed);
ClusteringResult select_k(std::span<const signal::EcgSignal> signals, std::span<const int> candidates,
                          std::uint64_t seed, const DtwOptions& options = {});

// sample,cluster,medoid,silhouette with `sample_ids` naming each row.
void write_report_csv(const ClusteringResult& result, const DistanceMatrix& dist,
                      std::span<const std::size_t> sample_ids, const std::filesystem::path& path);

}  // namespace ecgxai::cluster
