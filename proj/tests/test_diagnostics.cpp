#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "shiftcp/diagnostics.hpp"
#include "shiftcp/errors.hpp"

using namespace shiftcp;

namespace {

ScoreSet test_set(std::vector<double> v) { return ScoreSet(std::move(v), ScoreSource::test); }

WeightedDistribution unit_dist(const std::vector<double>& scores) {
  return weighted_distribution(ScoreSet(scores, ScoreSource::calibration),
                               ShiftWeights(std::vector<double>(scores.size(), 1.0), 1.0));
}

// Midpoint Riemann sum of |F_a - F_b| for unit-weight samples.
double riemann_cdf_area(const std::vector<double>& a, const std::vector<double>& b, double lo,
                        double hi, int steps) {
  const auto cdf = [](const std::vector<double>& s, double v) {
    return static_cast<double>(std::count_if(s.begin(), s.end(), [&](double x) { return x <= v; })) /
           static_cast<double>(s.size());
  };
  const double dx = (hi - lo) / steps;
  double area = 0.0;
  for (int i = 0; i < steps; ++i) {
    const double v = lo + (i + 0.5) * dx;
    area += std::abs(cdf(a, v) - cdf(b, v)) * dx;
  }
  return area;
}

WeightedDistribution random_dist(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> u(0.0, 5.0);
  std::lognormal_distribution<double> ln(0.0, 1.0);
  std::vector<double> s(n), w(n);
  for (auto& x : s) x = std::round(u(rng) * 4.0) / 4.0;
  for (auto& x : w) x = ln(rng);
  return weighted_distribution(ScoreSet(s, ScoreSource::calibration), ShiftWeights(w, ln(rng)));
}

}  // namespace

TEST_CASE("expected coverage") {
  const WeightedDistribution d({{1, 0.3}, {2, 0.3}, {3, 0.3}}, 0.1);
  CHECK(expected_coverage(0.5, d) == 0.0);
  CHECK(expected_coverage(2.0, d) == doctest::Approx(0.6));
  CHECK(expected_coverage(10.0, d) == doctest::Approx(0.9));
  CHECK_THROWS_AS(expected_coverage(kInfinity, d), InvalidInput);
}

TEST_CASE("expected coverage at the weighted quantile reaches 1 - alpha") {
  std::mt19937_64 rng(29);
  for (int t = 0; t < 300; ++t) {
    const auto d = random_dist(rng, 1 + rng() % 40);
    for (int a = 1; a <= 99; ++a) {
      const ConfidenceLevel level(a / 100.0);
      const double v = weighted_quantile(level, d);
      if (std::isinf(v)) continue;
      CHECK(expected_coverage(v, d) >= level.confidence() - 1e-12);
    }
  }
}

TEST_CASE("exact coverage") {
  CHECK(exact_coverage(kInfinity, test_set({1, 2})) == 1.0);
  CHECK(exact_coverage(2.5, test_set({1, 2, 3, 4})) == 0.5);
  CHECK_THROWS_AS(exact_coverage(1.0, test_set({})), InvalidInput);
}

TEST_CASE("coverage divergence") {
  const WeightedDistribution d({{1, 0.4}, {2, 0.4}}, 0.2);
  CHECK(coverage_divergence(3.0, d, test_set({5, 6})) == doctest::Approx(0.8));
  CHECK(coverage_divergence(1.0, WeightedDistribution({{1, 1.0}}, 0.0), test_set({0})) == 0.0);

  auto p = divergence_point(ConfidenceLevel(0.5), d, test_set({1.5, 2.5}));
  CHECK(p.divergence == p.expected_cov - p.exact_cov);
  CHECK(p.abs_divergence == std::abs(p.divergence));

  auto inf = divergence_point(ConfidenceLevel(0.1), d, test_set({1.5}));
  CHECK(inf.v_q == kInfinity);
  CHECK(inf.expected_cov == doctest::Approx(0.8));
  CHECK(inf.exact_cov == 1.0);
}

TEST_CASE("identical samples stay within the discretization bound") {
  std::mt19937_64 rng(31);
  std::exponential_distribution<double> e(1.0);
  for (std::size_t n : {5u, 20u, 200u}) {
    std::vector<double> v(n);
    for (auto& x : v) x = e(rng);
    const auto d = unit_dist(v);
    const auto t = test_set(v);
    const double bound = 1.0 / static_cast<double>(n + 1) + 1.0 / static_cast<double>(n);
    std::vector<double> alphas;
    for (int a = 1; a <= 99; ++a) {
      const ConfidenceLevel level(a / 100.0);
      if (std::isinf(weighted_quantile(level, d))) continue;
      alphas.push_back(a / 100.0);
      CHECK(std::abs(coverage_divergence(weighted_quantile(level, d), d, t)) <= bound + 1e-12);
    }
    CHECK(wasserstein_grid(alphas, d, t) <= bound + 1e-12);
    CHECK(wasserstein_exact(d, t) == doctest::Approx(0.0));
  }
}

TEST_CASE("grid spacing and area") {
  const std::vector<double> grid{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  const auto dx = grid_spacing(grid);
  CHECK(dx.front() == doctest::Approx(0.1));
  CHECK(dx[4] == doctest::Approx(0.1));
  CHECK(grid_spacing(std::vector<double>{0.5}).front() == 1.0);
  std::vector<DivergencePoint> pts;
  for (double a : grid) pts.push_back({a, 0, 0, 0, -0.2, 0.2});
  CHECK(divergence_area(pts) == doctest::Approx(0.18));
  CHECK(divergence_area(pts, AreaWeighting::raw_sum) == doctest::Approx(1.8));
  CHECK(mean_abs_divergence(pts) == doctest::Approx(0.2));
}

TEST_CASE("exact wasserstein") {
  for (double c : {0.0, 0.5, 3.0, 17.25}) {
    CHECK(wasserstein_exact(WeightedDistribution({{0.0, 1.0}}, 0.0), test_set({c})) == c);
  }
  CHECK(wasserstein_exact(unit_dist({0, 1}), test_set({0.5, 1.5})) == doctest::Approx(0.5));
  CHECK(riemann_cdf_area({0, 1}, {0.5, 1.5}, -1.0, 3.0, 40000) == doctest::Approx(0.5).epsilon(1e-4));
  // Finite part is renormalized, so the infinity atom does not matter.
  CHECK(wasserstein_exact(WeightedDistribution({{2.0, 0.5}}, 0.5), test_set({2.0})) == 0.0);

  // Thirds and sevenths do not sum exactly in binary.
  for (std::size_t n : {3u, 7u, 11u, 29u}) {
    std::vector<double> s;
    for (std::size_t i = 0; i < n; ++i) s.push_back(0.1 * static_cast<double>(i % 4));
    CHECK(wasserstein_exact(unit_dist(s), test_set(s)) == 0.0);
  }
}

TEST_CASE("cdf area matches a Riemann oracle and is a metric") {
  std::mt19937_64 rng(37);
  std::uniform_real_distribution<double> u(0.0, 4.0);
  const auto sample = [&](std::size_t n) {
    std::vector<double> v(n);
    for (auto& x : v) x = u(rng);
    return v;
  };
  for (int t = 0; t < 30; ++t) {
    auto a = sample(1 + rng() % 10), b = sample(1 + rng() % 10), c = sample(1 + rng() % 10);
    const std::vector<double> wa(a.size(), 1.0), wb(b.size(), 1.0), wc(c.size(), 1.0);
    const double ab = cdf_area_distance(a, wa, b, wb);
    CHECK(ab == doctest::Approx(riemann_cdf_area(a, b, 0.0, 4.0, 100000)).epsilon(1e-3));
    CHECK(ab == doctest::Approx(cdf_area_distance(b, wb, a, wa)).epsilon(1e-12));
    CHECK(ab <= cdf_area_distance(a, wa, c, wc) + cdf_area_distance(c, wc, b, wb) + 1e-12);
    CHECK(cdf_area_distance(a, wa, a, wa) == 0.0);
    auto doubled = a;
    doubled.insert(doubled.end(), a.begin(), a.end());
    const std::vector<double> wd(doubled.size(), 1.0);
    CHECK(cdf_area_distance(a, wa, doubled, wd) == doctest::Approx(0.0));
  }
  CHECK_THROWS_AS(cdf_area_distance({}, {}, std::vector<double>{1.0}, std::vector<double>{1.0}),
                  InvalidInput);
}

TEST_CASE("prediction size") {
  const auto d = unit_dist({1, 2, 3, 4});
  CHECK(prediction_size(ConfidenceLevel(0.05), d) == kInfinity);
  CHECK(prediction_size(ConfidenceLevel(0.5), d) == 6.0);
  double prev = kInfinity;
  for (int a = 1; a <= 99; ++a) {
    const double s = prediction_size(ConfidenceLevel(a / 100.0), d);
    CHECK(s <= prev);
    prev = s;
  }
}

TEST_CASE("accuracy metrics") {
  auto same = accuracy_metrics(std::vector<double>{1, 2}, std::vector<double>{1, 2});
  CHECK(same.rmse == 0.0);
  CHECK(same.mae == 0.0);
  auto m = accuracy_metrics(std::vector<double>{3, -4}, std::vector<double>{0, 0});
  CHECK(m.rmse == doctest::Approx(std::sqrt(12.5)));
  CHECK(m.mae == 3.5);
  CHECK(m.rmse >= m.mae);
  CHECK_THROWS_AS(accuracy_metrics(std::vector<double>{1}, std::vector<double>{}), InvalidInput);
}

TEST_CASE("location shift of scores peaks mid-grid") {
  std::mt19937_64 rng(41);
  std::normal_distribution<double> z;
  std::vector<double> cal(4000), test(4000);
  for (auto& x : cal) x = std::abs(5.0 + z(rng));
  for (auto& x : test) x = std::abs(5.5 + z(rng));
  const auto d = unit_dist(cal);
  const auto t = test_set(test);
  const auto at = [&](double a) {
    return divergence_point(ConfidenceLevel(a), d, t).abs_divergence;
  };
  CHECK(at(0.5) > at(0.1));
  CHECK(at(0.5) > at(0.9));
}

TEST_CASE("report assembly") {
  const std::vector<double> cal{1, 2, 3, 4, 5, 6, 7, 8, 9};
  const std::vector<double> w(cal.size(), 1.0);
  const WeightedCalibration wc(ScoreSet(cal, ScoreSource::calibration), w);
  const std::vector<double> scores{1.5, 2.5, 9.5};
  const std::vector<double> tw(3, 1.0);
  const std::vector<double> pred{0, 0, 0}, truth{1.5, -2.5, 9.5};
  const std::vector<double> alphas{0.1, 0.5, 0.9};
  const DomainScores ds{scores, tw, pred, truth};

  auto per = build_report("m", "d", alphas, wc, ds, QueryMode::per_query);
  auto shared = build_report("m", "d", alphas, wc, ds, QueryMode::shared);
  REQUIRE(per.points.size() == 3);
  // Unit weights: both modes coincide.
  for (std::size_t k = 0; k < 3; ++k) {
    CHECK(per.points[k].v_q == shared.points[k].v_q);
    CHECK(per.points[k].expected_cov == doctest::Approx(shared.points[k].expected_cov));
    CHECK(per.points[k].exact_cov == shared.points[k].exact_cov);
  }
  CHECK(per.points[1].v_q == 5.0);
  CHECK(per.points[1].exact_cov == doctest::Approx(2.0 / 3.0));
  CHECK(per.points[1].expected_cov == doctest::Approx(0.5));
  CHECK(per.sizes[1].size == 10.0);
  CHECK(per.wasserstein_exact == doctest::Approx(shared.wasserstein_exact));
  CHECK(per.mae == doctest::Approx((1.5 + 2.5 + 9.5) / 3.0));
  CHECK(per.wasserstein_grid == doctest::Approx(divergence_area(per.points)));
  CHECK_THROWS_AS(build_report("m", "d", std::vector<double>{0.5, 0.1}, wc, ds, QueryMode::shared),
                  InvalidInput);
}

TEST_CASE("per-query weights match individually built distributions") {
  std::mt19937_64 rng(43);
  std::lognormal_distribution<double> ln(0.0, 1.0);
  std::exponential_distribution<double> e(1.0);
  std::vector<double> cal(60), w(60), scores(15), tw(15);
  for (auto& x : cal) x = e(rng);
  for (auto& x : w) x = ln(rng);
  for (auto& x : scores) x = e(rng);
  for (auto& x : tw) x = ln(rng);
  const ScoreSet cs(cal, ScoreSource::calibration);
  const WeightedCalibration wc(cs, w);
  const std::vector<double> alphas{0.2, 0.5, 0.8};
  const auto r = build_report("m", "d", alphas, wc, {scores, tw, {}, {}}, QueryMode::per_query);
  for (std::size_t k = 0; k < alphas.size(); ++k) {
    const ConfidenceLevel level(alphas[k]);
    double expected = 0.0, covered = 0.0;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      const auto d = weighted_distribution(cs, ShiftWeights(w, tw[j]));
      const double v = weighted_quantile(level, d);
      expected += std::isinf(v) ? d.finite_mass() : expected_coverage(v, d);
      covered += scores[j] <= v ? 1.0 : 0.0;
    }
    CHECK(r.points[k].expected_cov == doctest::Approx(expected / 15.0).epsilon(1e-12));
    CHECK(r.points[k].exact_cov == doctest::Approx(covered / 15.0));
  }
}
