#include "shiftcp/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "shiftcp/errors.hpp"

namespace shiftcp {

double expected_coverage(double v_q, const WeightedDistribution& dist) {
  if (!std::isfinite(v_q)) {
    throw InvalidInput("expected coverage is undefined at an infinite quantile");
  }
  double mass = 0.0;
  for (const auto& a : dist.atoms()) {
    if (a.score > v_q) break;
    mass += a.mass;
  }
  return mass;
}

double exact_coverage(double v_q, const ScoreSet& test_scores) {
  if (test_scores.empty()) throw InvalidInput("exact coverage needs test scores");
  const auto s = test_scores.scores();
  const auto covered = std::count_if(s.begin(), s.end(), [v_q](double x) { return x <= v_q; });
  return static_cast<double>(covered) / static_cast<double>(s.size());
}

double coverage_divergence(double v_q, const WeightedDistribution& dist,
                           const ScoreSet& test_scores) {
  return expected_coverage(v_q, dist) - exact_coverage(v_q, test_scores);
}

DivergencePoint divergence_point(ConfidenceLevel level, const WeightedDistribution& dist,
                                 const ScoreSet& test_scores) {
  DivergencePoint p;
  p.alpha = level.alpha();
  p.v_q = weighted_quantile(level, dist);
  p.expected_cov = std::isfinite(p.v_q) ? expected_coverage(p.v_q, dist) : dist.finite_mass();
  p.exact_cov = exact_coverage(p.v_q, test_scores);
  p.divergence = p.expected_cov - p.exact_cov;
  p.abs_divergence = std::abs(p.divergence);
  return p;
}

std::vector<double> grid_spacing(std::span<const double> alphas) {
  const std::size_t m = alphas.size();
  std::vector<double> out(m, 1.0);
  if (m < 2) return out;
  for (std::size_t k = 0; k < m; ++k) {
    if (k == 0) {
      out[k] = alphas[1] - alphas[0];
    } else if (k == m - 1) {
      out[k] = alphas[m - 1] - alphas[m - 2];
    } else {
      out[k] = 0.5 * (alphas[k + 1] - alphas[k - 1]);
    }
  }
  return out;
}

double divergence_area(std::span<const DivergencePoint> points, AreaWeighting weighting) {
  std::vector<double> alphas;
  alphas.reserve(points.size());
  for (const auto& p : points) alphas.push_back(p.alpha);
  const auto spacing = grid_spacing(alphas);
  double area = 0.0;
  for (std::size_t k = 0; k < points.size(); ++k) {
    area += weighting == AreaWeighting::raw_sum ? points[k].abs_divergence
                                                : points[k].abs_divergence * spacing[k];
  }
  return area;
}

double wasserstein_grid(std::span<const double> alphas, const WeightedDistribution& dist,
                        const ScoreSet& test_scores, AreaWeighting weighting) {
  if (!std::is_sorted(alphas.begin(), alphas.end())) {
    throw InvalidInput("alpha grid must be sorted");
  }
  std::vector<DivergencePoint> points;
  points.reserve(alphas.size());
  for (double a : alphas) points.push_back(divergence_point(ConfidenceLevel(a), dist, test_scores));
  return divergence_area(points, weighting);
}

namespace {

struct Step {
  double value;
  double weight;  // CDF at value once normalized_steps returns
};

std::vector<Step> normalized_steps(std::span<const double> values, std::span<const double> weights) {
  if (values.size() != weights.size()) throw InvalidInput("values and weights differ in length");
  if (values.empty()) throw InvalidInput("CDF distance needs a nonempty support");
  double total = 0.0;
  std::vector<Step> steps;
  steps.reserve(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) throw InvalidInput("CDF support must be finite");
    if (!(weights[i] >= 0.0)) throw InvalidInput("CDF weights must be nonnegative");
    steps.push_back({values[i], weights[i]});
    total += weights[i];
  }
  if (!(total > 0.0)) throw InvalidInput("CDF distance needs positive total mass");
  std::sort(steps.begin(), steps.end(),
            [](const Step& a, const Step& b) { return a.value < b.value; });
  // Store the CDF itself: raw running weight over the total, so the last
  // step is exactly 1 and equal supports give equal values.
  double running = 0.0;
  for (auto& s : steps) {
    running += s.weight;
    s.weight = running / total;
  }
  return steps;
}

}  // namespace

double cdf_area_distance(std::span<const double> values_a, std::span<const double> weights_a,
                         std::span<const double> values_b, std::span<const double> weights_b) {
  const auto a = normalized_steps(values_a, weights_a);
  const auto b = normalized_steps(values_b, weights_b);
  std::size_t i = 0;
  std::size_t j = 0;
  double fa = 0.0;
  double fb = 0.0;
  double area = 0.0;
  double x = std::min(a.front().value, b.front().value);
  while (i < a.size() || j < b.size()) {
    const double next = std::min(i < a.size() ? a[i].value : kInfinity,
                                 j < b.size() ? b[j].value : kInfinity);
    const double gap = std::abs(fa - fb);
    if (gap > kMassTolerance) area += gap * (next - x);
    x = next;
    while (i < a.size() && a[i].value == x) fa = a[i++].weight;
    while (j < b.size() && b[j].value == x) fb = b[j++].weight;
  }
  return area;
}

double wasserstein_exact(const WeightedDistribution& dist, const ScoreSet& test_scores) {
  if (dist.atoms().empty()) throw InvalidInput("distribution has no finite atoms");
  if (test_scores.empty()) throw InvalidInput("test score set is empty");
  std::vector<double> values;
  std::vector<double> masses;
  for (const auto& atom : dist.atoms()) {
    values.push_back(atom.score);
    masses.push_back(atom.mass);
  }
  const std::vector<double> unit(test_scores.size(), 1.0);
  return cdf_area_distance(values, masses, test_scores.scores(), unit);
}

double prediction_size(ConfidenceLevel level, const WeightedDistribution& dist) {
  return 2.0 * weighted_quantile(level, dist);
}

AccuracyMetrics accuracy_metrics(std::span<const double> predictions,
                                 std::span<const double> truths) {
  if (predictions.size() != truths.size()) {
    throw InvalidInput("predictions and truths differ in length");
  }
  if (predictions.empty()) throw InvalidInput("accuracy metrics need at least one pair");
  double sq = 0.0;
  double ab = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const double r = predictions[i] - truths[i];
    sq += r * r;
    ab += std::abs(r);
  }
  const double n = static_cast<double>(predictions.size());
  return {std::sqrt(sq / n), ab / n};
}

double mean_abs_divergence(std::span<const DivergencePoint> points) {
  if (points.empty()) return 0.0;
  double total = 0.0;
  for (const auto& p : points) total += p.abs_divergence;
  return total / static_cast<double>(points.size());
}

DivergenceReport build_report(std::string model_id, std::string test_domain_id,
                              std::span<const double> alphas, const WeightedCalibration& cal,
                              const DomainScores& domain, QueryMode mode,
                              AreaWeighting weighting) {
  const std::size_t m = domain.test_scores.size();
  if (m == 0) throw InvalidInput("test domain " + test_domain_id + " is empty");
  if (domain.test_weights.size() != m) throw InvalidInput("one test weight per test score");
  if (!std::is_sorted(alphas.begin(), alphas.end())) {
    throw InvalidInput("alpha grid must be sorted");
  }

  DivergenceReport report;
  report.model_id = std::move(model_id);
  report.test_domain_id = std::move(test_domain_id);
  const ScoreSet test(std::vector<double>(domain.test_scores.begin(), domain.test_scores.end()),
                      ScoreSource::test);

  if (mode == QueryMode::shared) {
    const double mean_w =
        std::accumulate(domain.test_weights.begin(), domain.test_weights.end(), 0.0) /
        static_cast<double>(m);
    const auto dist = cal.distribution(mean_w);
    for (double a : alphas) {
      const ConfidenceLevel level(a);
      report.points.push_back(divergence_point(level, dist, test));
      report.sizes.push_back({a, prediction_size(level, dist)});
    }
    report.wasserstein_exact = wasserstein_exact(dist, test);
  } else {
    for (double a : alphas) {
      const ConfidenceLevel level(a);
      DivergencePoint p;
      p.alpha = a;
      double v_sum = 0.0;
      double expected_sum = 0.0;
      std::size_t covered = 0;
      for (std::size_t k = 0; k < m; ++k) {
        const double w = domain.test_weights[k];
        const double v = cal.quantile(level, w);
        v_sum += v;
        expected_sum += std::isfinite(v) ? cal.mass_at_or_below(v, w)
                                         : cal.total_weight() / (cal.total_weight() + w);
        if (domain.test_scores[k] <= v) ++covered;
      }
      const double md = static_cast<double>(m);
      p.v_q = v_sum / md;
      p.expected_cov = expected_sum / md;
      p.exact_cov = static_cast<double>(covered) / md;
      p.divergence = p.expected_cov - p.exact_cov;
      p.abs_divergence = std::abs(p.divergence);
      report.points.push_back(p);
      report.sizes.push_back({a, 2.0 * p.v_q});
    }
    // The renormalized finite part does not depend on w(x).
    const auto scores = cal.scores();
    const auto cumulative = cal.cumulative_weights();
    std::vector<double> increments(cumulative.size());
    std::adjacent_difference(cumulative.begin(), cumulative.end(), increments.begin());
    const std::vector<double> unit(m, 1.0);
    report.wasserstein_exact = cdf_area_distance(scores, increments, test.scores(), unit);
  }

  report.wasserstein_grid = divergence_area(report.points, weighting);
  report.mean_abs_divergence = mean_abs_divergence(report.points);
  if (!domain.predictions.empty()) {
    const auto acc = accuracy_metrics(domain.predictions, domain.truths);
    report.rmse = acc.rmse;
    report.mae = acc.mae;
  }
  return report;
}

}  // namespace shiftcp
