#include <doctest.h>

#include <fstream>

#include "ecgxai/cluster.hpp"
#include "ecgxai/error.hpp"
#include "oracles.hpp"
#include "tempdir.hpp"

using namespace ecgxai;
using namespace ecgxai::cluster;

namespace {

signal::EcgSignal uni(std::vector<float> v) {
  const int n = static_cast<int>(v.size());
  return signal::EcgSignal(n, 1, std::move(v));
}

// Textbook recursion with memo, no band.
double dtw_reference(const signal::EcgSignal& a, const signal::EcgSignal& b) {
  const int n = a.steps(), m = b.steps();
  std::vector<double> memo(static_cast<std::size_t>(n) * m, -1.0);
  auto cost = [&](int i, int j) {
    double c = 0.0;
    for (int l = 0; l < a.leads(); ++l) c += (double(a.at(i, l)) - b.at(j, l)) * (double(a.at(i, l)) - b.at(j, l));
    return c;
  };
  auto rec = [&](auto&& self, int i, int j) -> double {
    double& slot = memo[static_cast<std::size_t>(i) * m + j];
    if (slot >= 0.0) return slot;
    double prev = 0.0;
    if (i > 0 || j > 0) {
      prev = std::numeric_limits<double>::infinity();
      if (i > 0) prev = std::min(prev, self(self, i - 1, j));
      if (j > 0) prev = std::min(prev, self(self, i, j - 1));
      if (i > 0 && j > 0) prev = std::min(prev, self(self, i - 1, j - 1));
    }
    return slot = cost(i, j) + prev;
  };
  return rec(rec, n - 1, m - 1);
}

signal::EcgSignal random_signal(int steps, int leads, Rng& rng) {
  std::vector<float> v(static_cast<std::size_t>(steps) * leads);
  for (auto& x : v) x = static_cast<float>(rng.normal());
  return signal::EcgSignal(steps, leads, std::move(v));
}

// Points on a line: blobs of `per_blob` points spaced `gap` apart, jitter < 0.5.
DistanceMatrix blobs(int k, int per_blob, double gap, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> x;
  for (int c = 0; c < k; ++c) {
    for (int i = 0; i < per_blob; ++i) x.push_back(c * gap + rng.uniform(0.0, 0.5));
  }
  DistanceMatrix d(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (std::size_t j = i + 1; j < x.size(); ++j) d.set(i, j, std::abs(x[i] - x[j]));
  }
  return d;
}

DistanceMatrix constant(std::size_t n, double v) {
  DistanceMatrix d(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) d.set(i, j, v);
  }
  return d;
}

}  // namespace

TEST_CASE("dtw examples") {
  CHECK(dtw_distance(uni({0, 0, 1, 0}), uni({0, 1, 0, 0})) == 0.0);
  CHECK(dtw_distance(uni({0, 0}), uni({1, 1})) == 2.0);
  const auto x = uni({3, 1, 4, 1, 5});
  CHECK(dtw_distance(x, x) == 0.0);
  CHECK(dtw_distance(uni({1, 2, 3}), uni({1, 2, 2, 2, 3})) == 0.0);
  CHECK(dtw_distance(uni({0, 0, 1, 0}), uni({0, 1, 0, 0}), DtwOptions{0}) == 2.0);
}

TEST_CASE("dtw matches the reference recursion and its axioms") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const int la = static_cast<int>(rng.integer(1, 12)), lb = static_cast<int>(rng.integer(1, 12));
    const auto a = random_signal(la, 3, rng), b = random_signal(lb, 3, rng);
    const double d = dtw_distance(a, b);
    CHECK(d == doctest::Approx(dtw_reference(a, b)).epsilon(1e-12));
    CHECK(d >= 0.0);
    CHECK(d == doctest::Approx(dtw_distance(b, a)).epsilon(1e-12));
    // A band at least as wide as both lengths is the unconstrained problem.
    CHECK(dtw_distance(a, b, DtwOptions{12}) == doctest::Approx(d).epsilon(1e-12));
    // Narrow bands can only cost more.
    CHECK(dtw_distance(a, b, DtwOptions{1}) >= d - 1e-12);
  }
  for (int trial = 0; trial < 10; ++trial) {
    const auto a = random_signal(15, 2, rng), b = random_signal(15, 2, rng);
    double euclid = 0.0;
    for (std::size_t i = 0; i < a.values().size(); ++i) {
      euclid += (double(a.values()[i]) - b.values()[i]) * (double(a.values()[i]) - b.values()[i]);
    }
    CHECK(dtw_distance(a, b) <= euclid + 1e-9);
  }
  CHECK_THROWS_AS(dtw_distance(uni({1, 2}), signal::EcgSignal(2, 2, {1, 2, 3, 4})), ValidationError);
}

TEST_CASE("dtw matrix is permutation consistent") {
  Rng rng(8);
  std::vector<signal::EcgSignal> s;
  for (int i = 0; i < 6; ++i) s.push_back(random_signal(10, 2, rng));
  const auto d = dtw_matrix(s);
  const std::vector<std::size_t> perm{3, 0, 5, 1, 4, 2};
  std::vector<signal::EcgSignal> p;
  for (auto i : perm) p.push_back(s[i]);
  const auto dp = dtw_matrix(p);
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(d(i, i) == 0.0);
    for (std::size_t j = 0; j < 6; ++j) CHECK(dp(i, j) == d(perm[i], perm[j]));
  }
}

TEST_CASE("distance matrix validation") {
  CHECK_THROWS_AS(DistanceMatrix(2, {0, 1, 2, 0}), ValidationError);
  CHECK_THROWS_AS(DistanceMatrix(2, {1, 1, 1, 0}), ValidationError);
  CHECK_THROWS_AS(DistanceMatrix(2, {0, -1, -1, 0}), ValidationError);
  CHECK_THROWS_AS(DistanceMatrix(2, {0, 1, 1}), ValidationError);
  CHECK_NOTHROW(DistanceMatrix(2, {0, 1, 1, 0}));
}

TEST_CASE("k-medoids with k = 1 picks the row-sum argmin") {
  const auto d = blobs(3, 4, 5.0, 2);
  std::size_t best = 0;
  double best_sum = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < d.size(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < d.size(); ++j) s += d(i, j);
    if (s < best_sum) {
      best_sum = s;
      best = i;
    }
  }
  const auto r = kmedoids(d, 1, 3);
  CHECK(r.medoids == std::vector<std::size_t>{best});
  CHECK(r.cost == doctest::Approx(best_sum));
  CHECK(std::isnan(r.silhouette));
}

TEST_CASE("k-medoids recovers separated blobs and matches exhaustive search") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto d = blobs(2, 4, 150.0, seed);
    const auto r = kmedoids(d, 2, seed);
    const auto ex = oracle::exhaustive_partition(d, 2);
    CHECK(oracle::canonical(r.assignment) == std::vector<int>{0, 0, 0, 0, 1, 1, 1, 1});
    CHECK(oracle::canonical(r.assignment) == ex.labels);
    CHECK(r.cost == doctest::Approx(ex.cost));
  }
}

TEST_CASE("k-medoids degenerate and error cases") {
  const auto d = blobs(2, 3, 10.0, 4);
  const auto all = kmedoids(d, 6, 1);
  CHECK(all.cost == 0.0);
  for (int c = 0; c < 6; ++c) CHECK(all.medoids[static_cast<std::size_t>(all.assignment[c])] == static_cast<std::size_t>(c));
  CHECK_THROWS_AS(kmedoids(d, 7, 1), ValidationError);
  CHECK_THROWS_AS(kmedoids(d, 0, 1), ValidationError);
}

TEST_CASE("k-medoids cost history never increases") {
  Rng rng(9);
  std::vector<signal::EcgSignal> s;
  for (int i = 0; i < 25; ++i) s.push_back(random_signal(12, 2, rng));
  const auto d = dtw_matrix(s);
  for (int k = 2; k <= 5; ++k) {
    const auto r = kmedoids(d, k, static_cast<std::uint64_t>(k));
    REQUIRE_FALSE(r.cost_history.empty());
    for (std::size_t i = 1; i < r.cost_history.size(); ++i) CHECK(r.cost_history[i] <= r.cost_history[i - 1]);
    CHECK(r.cost == doctest::Approx(r.cost_history.back()));
    CHECK(r.silhouette >= -1.0);
    CHECK(r.silhouette <= 1.0);
    const auto again = kmedoids(d, k, static_cast<std::uint64_t>(k));
    CHECK(again.assignment == r.assignment);
  }
}

TEST_CASE("silhouette examples") {
  DistanceMatrix pairs(4);
  pairs.set(0, 2, 10);
  pairs.set(0, 3, 10);
  pairs.set(1, 2, 10);
  pairs.set(1, 3, 10);
  const std::vector<int> two{0, 0, 1, 1};
  CHECK(silhouette(pairs, two) == doctest::Approx(1.0));

  CHECK(silhouette(constant(5, 2.0), std::vector<int>{0, 0, 1, 1, 1}) == doctest::Approx(0.0));

  DistanceMatrix d = constant(4, 3.0);
  d.set(0, 1, 1);
  d.set(2, 3, 1);
  const auto per = silhouette_samples(d, two);
  for (double v : per) CHECK(v == doctest::Approx(2.0 / 3.0));
  CHECK(silhouette(d, two) == doctest::Approx(oracle::silhouette_reference(d, two)));

  const std::vector<int> with_singleton{0, 0, 0, 1};
  CHECK(silhouette_samples(d, with_singleton)[3] == 0.0);
  CHECK(silhouette(d, with_singleton) == doctest::Approx(oracle::silhouette_reference(d, with_singleton)));
  CHECK_THROWS_AS(silhouette(d, std::vector<int>{0, 0, 0, 0}), ValidationError);
}

TEST_CASE("silhouette agrees with the reference on random partitions") {
  Rng rng(13);
  std::vector<signal::EcgSignal> s;
  for (int i = 0; i < 12; ++i) s.push_back(random_signal(8, 2, rng));
  const auto d = dtw_matrix(s);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<int> labels(12);
    for (int i = 0; i < 12; ++i) labels[i] = i < 3 ? i : static_cast<int>(rng.integer(0, 2));
    CHECK(silhouette(d, labels) == doctest::Approx(oracle::silhouette_reference(d, labels)).epsilon(1e-12));
  }
}

TEST_CASE("select_k finds planted cluster counts") {
  for (int k : {2, 3, 4}) {
    const auto d = blobs(k, 3, 200.0, static_cast<std::uint64_t>(k));
    // oracle: best silhouette over exhaustive optimal partitions per candidate
    int oracle_k = 0;
    double best = -2.0;
    for (int c : kDefaultKCandidates) {
      const double s = oracle::silhouette_reference(d, oracle::exhaustive_partition(d, c).labels);
      if (s > best) {
        best = s;
        oracle_k = c;
      }
    }
    REQUIRE(oracle_k == k);
    const auto r = select_k(d, kDefaultKCandidates, 1);
    CHECK(r.k == k);
  }
}

TEST_CASE("select_k on planted DTW blobs") {
  Rng rng(21);
  std::vector<signal::EcgSignal> s;
  for (int c = 0; c < 3; ++c) {
    for (int i = 0; i < 4; ++i) {
      std::vector<float> v(30, 0.0f);
      for (int t = 0; t < 5; ++t) v[static_cast<std::size_t>(5 + 8 * c + t)] = static_cast<float>(3.0 * (c + 1));
      for (auto& x : v) x += static_cast<float>(0.05 * rng.normal());
      s.push_back(uni(v));
    }
  }
  const auto r = select_k(s, kDefaultKCandidates, 4);
  CHECK(r.k == 3);
  CHECK(oracle::canonical(r.assignment) == std::vector<int>{0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2});
}

TEST_CASE("select_k ties go to the smaller k and small sets are rejected") {
  const auto flat = constant(6, 1.0);
  CHECK(select_k(flat, kDefaultKCandidates, 2).k == 2);
  CHECK_THROWS_AS(select_k(constant(4, 1.0), kDefaultKCandidates, 2), ValidationError);
  try {
    (void)select_k(constant(4, 1.0), kDefaultKCandidates, 2);
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("too few samples") != std::string::npos);
  }
  const std::vector<int> bad{1, 2};
  CHECK_THROWS_AS(select_k(flat, bad, 1), ValidationError);
}

TEST_CASE("cluster report csv") {
  TempDir dir("clus");
  const auto d = blobs(2, 3, 50.0, 1);
  const auto r = kmedoids(d, 2, 1);
  const std::vector<std::size_t> ids{10, 11, 12, 13, 14, 15};
  write_report_csv(r, d, ids, dir / "r.csv");
  std::ifstream in(dir / "r.csv");
  std::string line;
  std::getline(in, line);
  CHECK(line == "sample,cluster,medoid,silhouette");
  int rows = 0;
  while (std::getline(in, line)) {
    CHECK(line.rfind(std::to_string(10 + rows) + ",", 0) == 0);
    ++rows;
  }
  CHECK(rows == 6);
}
