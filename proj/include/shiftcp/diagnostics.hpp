#pragma once

// Coverage divergence between weighted calibration scores and test scores,
// Wasserstein summaries, and the accuracy metrics reported alongside them.

#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "shiftcp/conformal.hpp"
#include "shiftcp/weighted.hpp"

namespace shiftcp {

// Sum of finite atom masses with score <= v_q. The infinity atom is never
// counted and the finite part is not renormalized. Throws InvalidInput for
// an infinite v_q.
double expected_coverage(double v_q, const WeightedDistribution& dist);

// Fraction of test scores <= v_q (1 for v_q = +infinity).
double exact_coverage(double v_q, const ScoreSet& test_scores);

double coverage_divergence(double v_q, const WeightedDistribution& dist,
                           const ScoreSet& test_scores);

struct DivergencePoint {
  double alpha = 0.0;
  double v_q = 0.0;
  double expected_cov = 0.0;
  double exact_cov = 0.0;
  double divergence = 0.0;
  // |divergence| for a single run; the mean of |divergence| over runs once
  // reports are aggregated across seeds.
  double abs_divergence = 0.0;
};

// One alpha of the sweep. When the weighted quantile is +infinity the point
// records expected_cov = finite mass and exact_cov = 1.
DivergencePoint divergence_point(ConfidenceLevel level, const WeightedDistribution& dist,
                                 const ScoreSet& test_scores);

enum class AreaWeighting {
  delta_alpha,  // sum |D| * spacing
  raw_sum,      // sum |D|
};

// Spacing of each grid node: half the distance between its neighbours, or
// the one-sided gap at the ends. A single node gets weight 1.
std::vector<double> grid_spacing(std::span<const double> alphas);

// Area under the |D| curve of already-computed points, in the order given.
double divergence_area(std::span<const DivergencePoint> points,
                       AreaWeighting weighting = AreaWeighting::delta_alpha);

double wasserstein_grid(std::span<const double> alphas, const WeightedDistribution& dist,
                        const ScoreSet& test_scores,
                        AreaWeighting weighting = AreaWeighting::delta_alpha);

// Integral of |F_a(v) - F_b(v)| dv between two finite weighted samples.
// Weights need not be normalized.
double cdf_area_distance(std::span<const double> values_a, std::span<const double> weights_a,
                         std::span<const double> values_b, std::span<const double> weights_b);

// Area between the finite part of dist (renormalized to total mass 1) and
// the empirical CDF of the test scores.
double wasserstein_exact(const WeightedDistribution& dist, const ScoreSet& test_scores);

// 2 * weighted quantile, the width of the symmetric residual interval.
double prediction_size(ConfidenceLevel level, const WeightedDistribution& dist);

struct AccuracyMetrics {
  double rmse = 0.0;
  double mae = 0.0;
};

AccuracyMetrics accuracy_metrics(std::span<const double> predictions,
                                 std::span<const double> truths);

struct SizePoint {
  double alpha = 0.0;
  double size = 0.0;
};

struct DivergenceReport {
  std::string model_id;
  std::string test_domain_id;
  std::vector<DivergencePoint> points;
  double wasserstein_grid = 0.0;
  double wasserstein_exact = 0.0;
  double mean_abs_divergence = 0.0;
  std::vector<SizePoint> sizes;
  double rmse = 0.0;
  double mae = 0.0;
  // Rolled-out level RMSE where the task defines one (epidemic series).
  std::optional<double> level_rmse;
};

// Mean of abs_divergence over the points (|D|_t for one test domain).
double mean_abs_divergence(std::span<const DivergencePoint> points);

enum class QueryMode {
  per_query,  // exact F(x): renormalize with each test point's own w(x)
  shared,     // one distribution using the mean test weight of the domain
};

struct DomainScores {
  std::span<const double> test_scores;
  std::span<const double> test_weights;  // w(x) per test point
  std::span<const double> predictions;
  std::span<const double> truths;
};

// Sweep the alpha grid for one (model, test domain) pair.
DivergenceReport build_report(std::string model_id, std::string test_domain_id,
                              std::span<const double> alphas, const WeightedCalibration& cal,
                              const DomainScores& domain, QueryMode mode,
                              AreaWeighting weighting = AreaWeighting::delta_alpha);

}  // namespace shiftcp
