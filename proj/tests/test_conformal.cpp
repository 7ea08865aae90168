#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <random>
#include <vector>

#include "shiftcp/conformal.hpp"
#include "shiftcp/errors.hpp"

using namespace shiftcp;

namespace {

// Sort scores plus +inf and take the ceil((1 - alpha)(n + 1))-th element,
// with the rank computed in exact integer arithmetic on alpha = a / 100.
double sorted_index_oracle(std::vector<double> scores, int alpha_percent) {
  const std::size_t n = scores.size();
  scores.push_back(kInfinity);
  std::sort(scores.begin(), scores.end());
  const long num = static_cast<long>(100 - alpha_percent) * static_cast<long>(n + 1);
  const long k = (num + 99) / 100;
  return scores[static_cast<std::size_t>(std::max(k, 1L)) - 1];
}

}  // namespace

TEST_CASE("conformal score is the absolute residual") {
  CHECK(conformal_score(5.0, 3.0) == 2.0);
  CHECK(conformal_score(3.0, 3.0) == 0.0);
  CHECK(conformal_score(-1.5, 2.5) == 4.0);
}

TEST_CASE("confidence level rejects alpha outside (0,1)") {
  CHECK_THROWS_AS(ConfidenceLevel(0.0), InvalidInput);
  CHECK_THROWS_AS(ConfidenceLevel(1.0), InvalidInput);
  CHECK_THROWS_AS(ConfidenceLevel(-0.1), InvalidInput);
  CHECK(ConfidenceLevel(0.1).confidence() == doctest::Approx(0.9));
}

TEST_CASE("score sets reject negative or non-finite scores") {
  CHECK_THROWS_AS(ScoreSet({1.0, -1.0}, ScoreSource::calibration), InvalidInput);
  CHECK_THROWS_AS(ScoreSet({kInfinity}, ScoreSource::test), InvalidInput);
  ScoreSet s({2.0, 2.0, 1.0}, ScoreSource::test);
  CHECK(s.size() == 3);
}

TEST_CASE("augmented quantile") {
  const ScoreSet s({1, 2, 3, 4}, ScoreSource::calibration);
  CHECK(augmented_rank(ConfidenceLevel(0.5), 4) == 3);
  CHECK(augmented_quantile(ConfidenceLevel(0.5), s) == 3.0);
  CHECK(augmented_quantile(ConfidenceLevel(0.05), s) == kInfinity);
  CHECK(augmented_quantile(ConfidenceLevel(0.9), ScoreSet({7}, ScoreSource::calibration)) == 7.0);
  CHECK_THROWS_AS(augmented_quantile(ConfidenceLevel(0.5), ScoreSet({}, ScoreSource::calibration)),
                  InvalidInput);
}

TEST_CASE("rank snaps exact products despite round-off") {
  // 0.7 * 10 evaluates to 7.000000000000001 in doubles.
  CHECK(augmented_rank(ConfidenceLevel(0.3), 9) == 7);
  CHECK(augmented_rank(ConfidenceLevel(0.1), 9) == 9);
  CHECK(augmented_rank(ConfidenceLevel(0.9), 9) == 1);
}

TEST_CASE("prediction intervals") {
  const ScoreSet s({1, 2, 3, 4}, ScoreSource::calibration);
  auto a = predict_interval(10.0, ConfidenceLevel(0.5), s);
  CHECK(a.lower() == 7.0);
  CHECK(a.upper() == 13.0);
  auto b = predict_interval(0.0, ConfidenceLevel(0.05), s);
  CHECK(b.unbounded());
  CHECK(b.lower() == -kInfinity);
  CHECK(b.upper() == kInfinity);
  CHECK(b.contains(1e300));
  auto c = predict_interval(2.0, ConfidenceLevel(0.9), ScoreSet({0}, ScoreSource::calibration));
  CHECK(c.lower() == 2.0);
  CHECK(c.upper() == 2.0);
  CHECK(c.contains(2.0));
}

TEST_CASE("empirical coverage") {
  std::vector<PredictionInterval> inf(3, PredictionInterval{0.0, kInfinity});
  CHECK(empirical_coverage(inf, std::vector<double>{1, -5, 1e9}) == 1.0);
  std::vector<PredictionInterval> two{{1.0, 1.0}, {1.0, 1.0}};
  CHECK(empirical_coverage(two, std::vector<double>{1, 3}) == 0.5);
  CHECK_THROWS_AS(empirical_coverage(two, std::vector<double>{1}), InvalidInput);
}

TEST_CASE("exhaustive order-statistic oracle on small multisets") {
  std::size_t mismatches = 0;
  std::vector<double> scores;
  for (std::size_t n = 1; n <= 8; ++n) {
    std::vector<int> digits(n, 0);
    while (true) {
      scores.assign(digits.begin(), digits.end());
      const ScoreSet set(scores, ScoreSource::calibration);
      for (int a = 10; a <= 90; a += 10) {
        if (augmented_quantile(ConfidenceLevel(a / 100.0), set) != sorted_index_oracle(scores, a)) {
          ++mismatches;
        }
      }
      std::size_t i = 0;
      while (i < n && digits[i] == 3) digits[i++] = 0;
      if (i == n) break;
      ++digits[i];
    }
  }
  CHECK(mismatches == 0);
}

TEST_CASE("quantile is nondecreasing as alpha decreases") {
  std::mt19937_64 rng(7);
  std::exponential_distribution<double> exp1(1.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> v(1 + rng() % 40);
    for (auto& x : v) x = exp1(rng);
    const ScoreSet s(v, ScoreSource::calibration);
    double prev = -1.0;
    for (int a = 99; a >= 1; --a) {
      const double q = augmented_quantile(ConfidenceLevel(a / 100.0), s);
      CHECK(q >= prev);
      prev = q;
    }
  }
}

TEST_CASE("interval containment matches score comparison") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> z;
  std::uniform_real_distribution<double> u(0.05, 0.95);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> v(20);
    for (auto& x : v) x = std::abs(z(rng));
    const ScoreSet s(v, ScoreSource::calibration);
    const ConfidenceLevel level(u(rng));
    const double f = z(rng);
    const double y = f + z(rng);
    const bool inside = predict_interval(f, level, s).contains(y);
    CHECK(inside == (conformal_score(f, y) <= augmented_quantile(level, s)));
  }
}
