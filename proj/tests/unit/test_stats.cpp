#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <iterator>
#include <numeric>
#include <set>

#include "ecgxai/error.hpp"
#include "ecgxai/stats.hpp"
#include "oracles.hpp"
#include "tempdir.hpp"

using namespace ecgxai;
using namespace ecgxai::stats;

namespace {

constexpr int kT = 4;
constexpr int kL = 12;

xai::SaliencyMap lead_map(const std::vector<double>& per_lead) {
  xai::SaliencyMap m;
  m.method = xai::Method::GuidedGradCam;
  m.dims = {kT, kL};
  m.scores.assign(kT * kL, 0.0);
  for (int l = 0; l < kL; ++l) m.scores[static_cast<std::size_t>(l)] = per_lead[static_cast<std::size_t>(l)];
  return m;
}

std::vector<double> leads_with(std::initializer_list<std::pair<int, double>> entries) {
  std::vector<double> v(kL, 0.0);
  for (auto [l, x] : entries) v[static_cast<std::size_t>(l)] = x;
  return v;
}

LeadImportanceMatrix li_of(int classes, std::vector<double> mass) {
  LeadImportanceMatrix li;
  li.classes = classes;
  li.leads = kL;
  li.mass = std::move(mass);
  li.counts.assign(static_cast<std::size_t>(classes), 1);
  return li;
}

std::vector<std::size_t> iota_ids(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

std::vector<BaselinePrediction> baseline_for(Scheme s, const std::vector<std::string>& regions) {
  std::vector<BaselinePrediction> out;
  for (std::size_t i = 0; i < regions.size(); ++i) out.push_back({i, s, regions[i]});
  return out;
}

}  // namespace

TEST_CASE("lead importance examples") {
  const std::vector<int> one{0};
  {
    const std::vector<xai::SaliencyMap> maps{lead_map(leads_with({{7, 5.0}}))};
    const auto li = lead_importance(maps, one, one, 2, kT, kL);
    CHECK(li.defined(0));
    CHECK_FALSE(li.defined(1));
    const auto row = li.row(0);
    for (int l = 0; l < kL; ++l) CHECK(row[static_cast<std::size_t>(l)] == (l == 7 ? 1.0 : 0.0));
    CHECK_THROWS_AS(li.row(1), ValidationError);
  }
  {
    const std::vector<xai::SaliencyMap> maps{lead_map(std::vector<double>(kL, 0.3))};
    const auto li = lead_importance(maps, one, one, 1, kT, kL);
    for (double v : li.row(0)) CHECK(v == doctest::Approx(1.0 / 12.0));
  }
  {
    const std::vector<xai::SaliencyMap> maps{lead_map(leads_with({{0, 1}, {1, 1}})),
                                             lead_map(leads_with({{0, 3}, {1, 1}}))};
    const std::vector<int> zeros{0, 0};
    const auto li = lead_importance(maps, zeros, zeros, 1, kT, kL);
    CHECK(li.value(0, 0) == doctest::Approx(4.0 / 6.0));
    CHECK(li.value(0, 1) == doctest::Approx(2.0 / 6.0));
    CHECK(li.counts[0] == 2);
    double sum = 0.0;
    for (double v : li.row(0)) sum += v;
    CHECK(std::abs(sum - 1.0) < 1e-9);
  }
}

TEST_CASE("lead importance is invariant to scaling a class's maps") {
  Rng rng(3);
  std::vector<xai::SaliencyMap> maps, scaled;
  std::vector<int> labels;
  for (int i = 0; i < 6; ++i) {
    std::vector<double> v(kL);
    for (auto& x : v) x = rng.uniform(0.0, 2.0);
    maps.push_back(lead_map(v));
    for (auto& x : v) x *= (i % 2 == 0 ? 7.5 : 0.01);
    scaled.push_back(lead_map(v));
    labels.push_back(i % 2);
  }
  const auto a = lead_importance(maps, labels, labels, 2, kT, kL);
  const auto b = lead_importance(scaled, labels, labels, 2, kT, kL);
  for (int c = 0; c < 2; ++c) {
    for (int l = 0; l < kL; ++l) CHECK(a.value(c, l) == doctest::Approx(b.value(c, l)).epsilon(1e-12));
  }
}

TEST_CASE("lead importance errors") {
  const std::vector<int> zero{0}, one{1};
  const std::vector<xai::SaliencyMap> good{lead_map(std::vector<double>(kL, 1.0))};
  CHECK_THROWS_AS(lead_importance(good, zero, one, 2, kT, kL), ValidationError);
  auto flat = good[0];
  flat.dims = {kT * kL};
  const std::vector<xai::SaliencyMap> bad{flat};
  CHECK_THROWS_AS(lead_importance(bad, zero, zero, 2, kT, kL), ValidationError);
  // zero mass: counted but undefined
  const std::vector<xai::SaliencyMap> empty{lead_map(std::vector<double>(kL, 0.0))};
  const auto li = lead_importance(empty, zero, zero, 1, kT, kL);
  CHECK(li.counts[0] == 1);
  CHECK_FALSE(li.defined(0));
}

TEST_CASE("ventricle ranking examples") {
  std::vector<double> mass(2 * kL, 0.0);
  mass[0] = 2.0;
  mass[kL + 1] = 2.0;
  const auto li = li_of(2, mass);
  const std::vector<signal::Ventricle> both_lv{signal::Ventricle::LV, signal::Ventricle::LV};
  CHECK_THROWS_AS(ventricle_rank(li, both_lv), ValidationError);  // RV has no classes

  const auto three = li_of(3, [&] {
    auto m = mass;
    m.resize(3 * kL, 0.0);
    m[2 * kL + 5] = 1.0;
    return m;
  }());
  const std::vector<signal::Ventricle> vent{signal::Ventricle::LV, signal::Ventricle::LV, signal::Ventricle::RV};
  const auto r = ventricle_rank(three, vent);
  REQUIRE(r.size() == 2);
  CHECK(r[0].ventricle == signal::Ventricle::LV);
  CHECK(r[0].share[0] == doctest::Approx(0.5));
  CHECK(r[0].share[1] == doctest::Approx(0.5));
  CHECK(r[0].ranking[0] == 0);
  CHECK(r[0].ranking[1] == 1);
  CHECK(r[0].rank_of_lead[1] == 1);
  CHECK(r[1].share == three.row(2));
  CHECK(r[1].ranking[0] == 5);

  // identical rows pool to that row
  std::vector<double> same;
  for (int c = 0; c < 3; ++c) {
    for (int l = 0; l < kL; ++l) same.push_back(l + 1.0);
  }
  const std::vector<signal::Ventricle> lv3(3, signal::Ventricle::LV);
  auto li3 = li_of(3, same);
  std::vector<signal::Ventricle> with_rv = lv3;
  with_rv[2] = signal::Ventricle::RV;
  const auto pooled = ventricle_rank(li3, with_rv);
  for (int l = 0; l < kL; ++l) CHECK(pooled[0].share[static_cast<std::size_t>(l)] == doctest::Approx(li3.value(0, l)));
}

TEST_CASE("fisher one-sided values") {
  CHECK(fisher_one_sided({75, 0, 57, 18}) == doctest::Approx(1.20e-6).epsilon(0.02));
  // hypergeometric sums evaluated independently in arbitrary precision
  CHECK(fisher_one_sided({75, 0, 57, 18}) == doctest::Approx(1.198155e-06).epsilon(1e-6));
  CHECK(fisher_one_sided({75, 0, 54, 21}) == doctest::Approx(9.35729e-08).epsilon(1e-5));
  CHECK(fisher_one_sided({3, 0, 1, 2}) == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(fisher_one_sided({0, 5, 0, 5}) == doctest::Approx(1.0));
  CHECK(fisher_one_sided({10, 0, 9, 1}) == doctest::Approx(0.5));
  for (long a = 0; a <= 6; ++a) {
    for (long b = 0; b <= 6; ++b) {
      for (long c = 0; c <= 6; ++c) {
        for (long d = 0; d <= 6; d += 2) {
          const long n = a + b + c + d;
          if (n == 0) continue;
          const double p = fisher_one_sided({a, b, c, d});
          CHECK(p == doctest::Approx(oracle::fisher_enumerated(a, b, c, d)).epsilon(1e-10));
          const double lower = a > 0 ? hypergeometric_lower_tail(a - 1, n, a + c, a + b) : 0.0;
          CHECK(p + lower == doctest::Approx(1.0).epsilon(1e-10));
        }
      }
    }
  }
  CHECK_THROWS_AS(fisher_one_sided({-1, 0, 0, 0}), ValidationError);
}

TEST_CASE("scheme remapping") {
  CHECK(remap_region(0, Scheme::EasyWpw) == std::vector<std::string>{"MV-PL"});
  const auto three = remap_region(3, Scheme::EasyWpw);
  CHECK(std::set<std::string>(three.begin(), three.end()) == std::set<std::string>{"MV-AL", "TV-AS"});
  const auto eighteen = remap_region(18, Scheme::Arruda);
  CHECK(std::set<std::string>(eighteen.begin(), eighteen.end()) == std::set<std::string>{"PSTA", "RP", "RPL"});
  for (auto s : {Scheme::EasyWpw, Scheme::Arruda}) {
    std::set<std::string> seen;
    for (int c = 0; c < 24; ++c) {
      const auto r = remap_region(c, s);
      CHECK_FALSE(r.empty());
      seen.insert(r.begin(), r.end());
    }
    CHECK(seen.size() == scheme_regions(s).size());
    CHECK(parse_scheme(to_string(s)) == s);
  }
  CHECK(scheme_regions(Scheme::EasyWpw).size() == 7);
  CHECK(scheme_regions(Scheme::Arruda).size() == 13);
  CHECK_THROWS_AS(remap_region(24, Scheme::Arruda), ValidationError);
  CHECK_THROWS_AS(parse_scheme("bogus"), ValidationError);
  CHECK_THROWS_AS(region_classes(Scheme::Arruda, "MV-PL"), ValidationError);
}

TEST_CASE("dt comparison examples") {
  // 75 class-0 samples: FCN always right; baseline right on the first 57.
  const std::size_t n = 75;
  const auto ids = iota_ids(n);
  const std::vector<int> truth(n, 0), fcn(n, 0);
  std::vector<std::string> regions(n, "MV-PL");
  for (std::size_t i = 57; i < n; ++i) regions[i] = "TV-AL";
  const auto r = dt_comparison(ids, truth, fcn, baseline_for(Scheme::EasyWpw, regions), Scheme::EasyWpw);
  CHECK(r.table.a == 75);
  CHECK(r.table.b == 0);
  CHECK(r.table.c == 57);
  CHECK(r.table.d == 18);
  CHECK(r.p_value == doctest::Approx(1.20e-6).epsilon(0.02));
  CHECK(r.significant);
  CHECK(r.fcn_accuracy == 100.0);
  CHECK(r.baseline_accuracy == doctest::Approx(76.0));

  const std::vector<std::string> right(n, "MV-PL");
  const auto same = dt_comparison(ids, truth, fcn, baseline_for(Scheme::EasyWpw, right), Scheme::EasyWpw);
  CHECK(same.p_value == doctest::Approx(1.0));
  CHECK_FALSE(same.significant);

  const auto ten = iota_ids(10);
  std::vector<std::string> nine(10, "MV-PL");
  nine[9] = "MV-AL";
  const std::vector<int> t10(10, 0);
  const auto small = dt_comparison(ten, t10, t10, baseline_for(Scheme::EasyWpw, nine), Scheme::EasyWpw);
  CHECK(small.p_value == doctest::Approx(oracle::fisher_enumerated(10, 0, 9, 1)));
  CHECK_FALSE(small.significant);
}

TEST_CASE("dt comparison uses set membership and validates input") {
  // class 3 is in MV-AL and TV-AS; class 17 is in TV-AL and TV-AS
  const std::vector<std::size_t> ids{0};
  const std::vector<int> truth{3}, pred{17};
  const auto r = dt_comparison(ids, truth, pred, baseline_for(Scheme::EasyWpw, {"TV-AS"}), Scheme::EasyWpw);
  CHECK(r.rows[0].fcn_correct);
  CHECK(r.rows[0].baseline_correct);

  CHECK_THROWS_AS(dt_comparison(ids, truth, pred, baseline_for(Scheme::Arruda, {"RP"}), Scheme::EasyWpw),
                  ValidationError);
  CHECK_THROWS_AS(dt_comparison(ids, truth, pred, baseline_for(Scheme::EasyWpw, {"XX"}), Scheme::EasyWpw),
                  ValidationError);
  CHECK_THROWS_AS(dt_comparison(ids, truth, pred, std::vector<BaselinePrediction>{}, Scheme::EasyWpw),
                  ValidationError);
}

TEST_CASE("baseline csv and reports") {
  TempDir dir("cmp");
  std::ofstream(dir / "b.csv") << "sample,scheme,region\n0,easy-wpw,MV-PL\n1,easy-wpw,TV-AL\n";
  const auto b = read_baseline_csv(dir / "b.csv");
  REQUIRE(b.size() == 2);
  CHECK(b[1].region == "TV-AL");
  CHECK(b[1].scheme == Scheme::EasyWpw);

  const std::vector<std::size_t> ids{0, 1};
  const std::vector<int> truth{0, 0};
  const auto r = dt_comparison(ids, truth, truth, b, Scheme::EasyWpw);
  write_comparison_csv(r, dir / "c.csv");
  write_comparison_summary(r, dir / "s.txt");
  std::ifstream s(dir / "s.txt");
  const std::string text((std::istreambuf_iterator<char>(s)), std::istreambuf_iterator<char>());
  CHECK(text.find("easy-wpw") != std::string::npos);
  CHECK(text.find("not significant") != std::string::npos);

  std::ofstream(dir / "bad.csv") << "0,easy-wpw\n";
  CHECK_THROWS(read_baseline_csv(dir / "bad.csv"));
}

TEST_CASE("lead importance csv marks undefined rows") {
  TempDir dir("li");
  std::vector<double> mass(2 * kL, 0.0);
  mass[3] = 1.0;
  auto li = li_of(2, mass);
  li.counts[1] = 0;
  const auto names = signal::standard_lead_names();
  write_lead_importance_csv(li, {}, names, dir / "li.csv");
  std::ifstream in(dir / "li.csv");
  std::string header, r0, r1;
  std::getline(in, header);
  std::getline(in, r0);
  std::getline(in, r1);
  CHECK(header.rfind("row,I,II", 0) == 0);
  CHECK(r0.rfind("class_0,0,0,0,1", 0) == 0);
  CHECK(r1.rfind("class_1,,", 0) == 0);
  CHECK(r1.substr(r1.size() - 2) == ",0");
}
