#include "shiftcp/weighted.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <string>

#include "shiftcp/errors.hpp"

namespace shiftcp {

namespace {

void check_positive_finite(double w, const char* what) {
  if (!std::isfinite(w) || w <= 0.0) {
    throw InvalidInput(std::string(what) + " must be positive and finite");
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// KdeModel

KdeModel::KdeModel(std::vector<double> flat, std::size_t n, std::size_t dim, double bandwidth)
    : points_(std::move(flat)), n_(n), dim_(dim), bandwidth_(bandwidth) {
  log_norm_ = -std::log(static_cast<double>(n_)) -
              0.5 * static_cast<double>(dim_) *
                  std::log(2.0 * std::numbers::pi * bandwidth_ * bandwidth_);
}

KdeModel KdeModel::fit(const std::vector<std::vector<double>>& points, double bandwidth) {
  if (points.size() < 2) throw InvalidInput("KDE needs at least two points");
  if (!(bandwidth > 0.0) || !std::isfinite(bandwidth)) {
    throw InvalidInput("KDE bandwidth must be positive");
  }
  const std::size_t dim = points.front().size();
  if (dim == 0) throw InvalidInput("KDE points must have at least one coordinate");
  std::vector<double> flat;
  flat.reserve(points.size() * dim);
  for (const auto& p : points) {
    if (p.size() != dim) throw InvalidInput("KDE points have inconsistent dimensions");
    for (double v : p) {
      if (!std::isfinite(v)) throw InvalidInput("KDE points must be finite");
    }
    flat.insert(flat.end(), p.begin(), p.end());
  }
  return KdeModel(std::move(flat), points.size(), dim, bandwidth);
}

double KdeModel::log_density(std::span<const double> x) const {
  if (x.size() != dim_) throw InvalidInput("KDE query has the wrong dimension");
  thread_local std::vector<double> sq;
  sq.resize(n_);
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n_; ++i) {
    const double* p = points_.data() + i * dim_;
    double d2 = 0.0;
    for (std::size_t k = 0; k < dim_; ++k) {
      const double diff = x[k] - p[k];
      d2 += diff * diff;
    }
    sq[i] = d2;
    best = std::min(best, d2);
  }
  const double inv_two_h2 = 0.5 / (bandwidth_ * bandwidth_);
  double acc = 0.0;
  for (std::size_t i = 0; i < n_; ++i) acc += std::exp(-(sq[i] - best) * inv_two_h2);
  return log_norm_ - best * inv_two_h2 + std::log(acc);
}

double KdeModel::density(std::span<const double> x) const { return std::exp(log_density(x)); }

// ---------------------------------------------------------------------------
// Standardizer

Standardizer Standardizer::fit(const std::vector<std::vector<double>>& points) {
  if (points.empty()) throw InvalidInput("cannot standardize an empty sample");
  const std::size_t dim = points.front().size();
  Standardizer s{std::vector<double>(dim, 0.0), std::vector<double>(dim, 1.0)};
  const double n = static_cast<double>(points.size());
  for (const auto& p : points) {
    if (p.size() != dim) throw InvalidInput("points have inconsistent dimensions");
    for (std::size_t k = 0; k < dim; ++k) s.mean[k] += p[k];
  }
  for (auto& m : s.mean) m /= n;
  std::vector<double> var(dim, 0.0);
  for (const auto& p : points) {
    for (std::size_t k = 0; k < dim; ++k) var[k] += (p[k] - s.mean[k]) * (p[k] - s.mean[k]);
  }
  for (std::size_t k = 0; k < dim; ++k) {
    const double sd = std::sqrt(var[k] / n);
    s.scale[k] = sd > 0.0 ? sd : 1.0;
  }
  return s;
}

std::vector<double> Standardizer::apply(std::span<const double> x) const {
  if (x.size() != mean.size()) throw InvalidInput("standardizer dimension mismatch");
  std::vector<double> out(x.size());
  for (std::size_t k = 0; k < x.size(); ++k) out[k] = (x[k] - mean[k]) / scale[k];
  return out;
}

std::vector<std::vector<double>> Standardizer::apply_all(
    const std::vector<std::vector<double>>& points) const {
  std::vector<std::vector<double>> out;
  out.reserve(points.size());
  for (const auto& p : points) out.push_back(apply(p));
  return out;
}

// ---------------------------------------------------------------------------
// Likelihood ratios and normalization

double likelihood_ratio_from_logs(double log_test_density, double log_cal_density,
                                  const RatioOptions& options) {
  check_positive_finite(options.floor, "ratio floor");
  check_positive_finite(options.cap, "ratio cap");
  if (!(options.floor < options.cap)) throw InvalidInput("ratio floor must be below the cap");
  const double log_cal = std::max(log_cal_density, std::log(options.floor));
  const double ratio = std::exp(log_test_density - log_cal);
  return std::clamp(ratio, options.floor, options.cap);
}

double likelihood_ratio(const KdeModel& test_kde, const KdeModel& cal_kde,
                        std::span<const double> x, const RatioOptions& options) {
  if (test_kde.dim() != cal_kde.dim()) throw InvalidInput("KDE dimensions differ");
  return likelihood_ratio_from_logs(test_kde.log_density(x), cal_kde.log_density(x), options);
}

ShiftWeights::ShiftWeights(std::vector<double> cal_weights, double test_weight)
    : cal_(std::move(cal_weights)), test_(test_weight) {
  for (double w : cal_) check_positive_finite(w, "calibration weight");
  check_positive_finite(test_, "test weight");
}

NormalizedMasses normalize_weights(const ShiftWeights& weights) {
  const auto cal = weights.cal_weights();
  const double denom = std::accumulate(cal.begin(), cal.end(), 0.0) + weights.test_weight();
  NormalizedMasses out;
  out.cal.reserve(cal.size());
  for (double w : cal) out.cal.push_back(w / denom);
  out.test = weights.test_weight() / denom;
  return out;
}

// ---------------------------------------------------------------------------
// WeightedDistribution

WeightedDistribution::WeightedDistribution(std::vector<Atom> atoms, double infinity_mass)
    : infinity_mass_(infinity_mass) {
  if (!std::isfinite(infinity_mass) || infinity_mass < 0.0 || infinity_mass > 1.0) {
    throw InvalidInput("infinity mass must lie in [0, 1]");
  }
  double total = infinity_mass;
  for (const auto& a : atoms) {
    if (!std::isfinite(a.score) || a.score < 0.0) {
      throw InvalidInput("atom scores must be finite and nonnegative");
    }
    if (!std::isfinite(a.mass) || a.mass < 0.0) throw InvalidInput("atom masses must be >= 0");
    total += a.mass;
  }
  if (std::abs(total - 1.0) > 1e-12) {
    throw InvalidInput("distribution masses must sum to 1, got " + std::to_string(total));
  }
  std::stable_sort(atoms.begin(), atoms.end(),
                   [](const Atom& a, const Atom& b) { return a.score < b.score; });
  for (const auto& a : atoms) {
    if (!atoms_.empty() && atoms_.back().score == a.score) {
      atoms_.back().mass += a.mass;
    } else {
      atoms_.push_back(a);
    }
  }
}

double WeightedDistribution::finite_mass() const noexcept {
  double total = 0.0;
  for (const auto& a : atoms_) total += a.mass;
  return total;
}

WeightedDistribution weighted_distribution(const ScoreSet& cal_scores,
                                           const ShiftWeights& weights) {
  if (cal_scores.size() != weights.cal_weights().size()) {
    throw InvalidInput("calibration scores and weights differ in length");
  }
  const auto masses = normalize_weights(weights);
  std::vector<Atom> atoms;
  atoms.reserve(cal_scores.size());
  for (std::size_t i = 0; i < cal_scores.size(); ++i) {
    atoms.push_back({cal_scores.scores()[i], masses.cal[i]});
  }
  return WeightedDistribution(std::move(atoms), masses.test);
}

double weighted_quantile(ConfidenceLevel level, const WeightedDistribution& dist) {
  const double target = level.confidence() - kMassTolerance;
  double cumulative = 0.0;
  for (const auto& a : dist.atoms()) {
    cumulative += a.mass;
    if (cumulative >= target) return a.score;
  }
  return kInfinity;
}

// ---------------------------------------------------------------------------
// WeightedCalibration

WeightedCalibration::WeightedCalibration(const ScoreSet& cal_scores,
                                         std::span<const double> cal_weights) {
  if (cal_scores.size() != cal_weights.size()) {
    throw InvalidInput("calibration scores and weights differ in length");
  }
  if (cal_scores.empty()) throw InvalidInput("calibration set is empty");
  std::vector<std::size_t> order(cal_scores.size());
  std::iota(order.begin(), order.end(), 0);
  const auto s = cal_scores.scores();
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return s[a] < s[b]; });
  double running = 0.0;
  for (std::size_t idx : order) {
    check_positive_finite(cal_weights[idx], "calibration weight");
    running += cal_weights[idx];
    if (!scores_.empty() && scores_.back() == s[idx]) {
      cumulative_.back() = running;
    } else {
      scores_.push_back(s[idx]);
      cumulative_.push_back(running);
    }
  }
  total_ = running;
}

WeightedDistribution WeightedCalibration::distribution(double test_weight) const {
  check_positive_finite(test_weight, "test weight");
  const double denom = total_ + test_weight;
  std::vector<Atom> atoms;
  atoms.reserve(scores_.size());
  double previous = 0.0;
  double assigned = 0.0;
  for (std::size_t j = 0; j < scores_.size(); ++j) {
    const double mass = (cumulative_[j] - previous) / denom;
    atoms.push_back({scores_[j], mass});
    assigned += mass;
    previous = cumulative_[j];
  }
  // Absorb accumulated round-off into the infinity atom.
  return WeightedDistribution(std::move(atoms), std::max(0.0, 1.0 - assigned));
}

double WeightedCalibration::quantile(ConfidenceLevel level, double test_weight) const {
  check_positive_finite(test_weight, "test weight");
  const double denom = total_ + test_weight;
  const double target = level.confidence() - kMassTolerance;
  const auto it = std::lower_bound(cumulative_.begin(), cumulative_.end(), target,
                                   [denom](double c, double t) { return c / denom < t; });
  if (it == cumulative_.end()) return kInfinity;
  return scores_[static_cast<std::size_t>(it - cumulative_.begin())];
}

double WeightedCalibration::mass_at_or_below(double v, double test_weight) const {
  check_positive_finite(test_weight, "test weight");
  const auto it = std::upper_bound(scores_.begin(), scores_.end(), v);
  if (it == scores_.begin()) return 0.0;
  const auto j = static_cast<std::size_t>(it - scores_.begin()) - 1;
  return cumulative_[j] / (total_ + test_weight);
}

// ---------------------------------------------------------------------------
// Bandwidth selection

namespace {

// Fisher-Yates with explicit modular draws so the fold assignment does not
// depend on the standard library's distribution implementation.
std::vector<std::size_t> fold_assignment(std::size_t n, std::size_t folds, std::uint64_t seed) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng() % i);
    std::swap(perm[i - 1], perm[j]);
  }
  std::vector<std::size_t> fold(n);
  for (std::size_t pos = 0; pos < n; ++pos) fold[perm[pos]] = pos % folds;
  return fold;
}

}  // namespace

double cross_validated_log_likelihood(const std::vector<std::vector<double>>& points,
                                      double bandwidth, const BandwidthSearchOptions& options) {
  if (options.folds < 2) throw InvalidInput("cross-validation needs at least two folds");
  if (points.size() < options.folds + 2) {
    throw InvalidInput("not enough points for " + std::to_string(options.folds) + " folds");
  }
  const auto fold = fold_assignment(points.size(), options.folds, options.seed);
  double total = 0.0;
  for (std::size_t f = 0; f < options.folds; ++f) {
    std::vector<std::vector<double>> train;
    std::vector<std::size_t> held;
    for (std::size_t i = 0; i < points.size(); ++i) {
      if (fold[i] == f) {
        held.push_back(i);
      } else {
        train.push_back(points[i]);
      }
    }
    const auto kde = KdeModel::fit(train, bandwidth);
    for (std::size_t i : held) total += kde.log_density(points[i]);
  }
  return total / static_cast<double>(points.size());
}

double bandwidth_grid_search(const std::vector<std::vector<double>>& points,
                             std::span<const double> grid, const BandwidthSearchOptions& options) {
  if (grid.empty()) throw InvalidInput("bandwidth grid is empty");
  std::vector<double> sorted(grid.begin(), grid.end());
  std::sort(sorted.begin(), sorted.end());
  for (double h : sorted) check_positive_finite(h, "bandwidth");

  double best_h = 0.0;
  double best_ll = -std::numeric_limits<double>::infinity();
  std::vector<double> degenerate;
  for (double h : sorted) {
    const double ll = cross_validated_log_likelihood(points, h, options);
    if (!std::isfinite(ll)) {
      degenerate.push_back(h);
      continue;
    }
    if (ll > best_ll) {
      best_ll = ll;
      best_h = h;
    }
  }
  if (best_h == 0.0) {
    throw SearchFailure("every bandwidth gave a degenerate held-out likelihood", degenerate);
  }
  return best_h;
}

}  // namespace shiftcp
