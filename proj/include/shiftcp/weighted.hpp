#pragma once

// Importance-weighted conformal prediction under covariate shift.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "shiftcp/conformal.hpp"

namespace shiftcp {

// Isotropic Gaussian kernel density estimate,
//   density(x) = (1/n) sum_i N(x; x_i, h^2 I).
// Immutable after fit; queries are thread-safe.
class KdeModel {
 public:
  // Throws InvalidInput for fewer than two points, ragged dimensions, or a
  // nonpositive bandwidth.
  static KdeModel fit(const std::vector<std::vector<double>>& points, double bandwidth);

  double density(std::span<const double> x) const;
  // Evaluated with log-sum-exp; finite even where density() underflows.
  double log_density(std::span<const double> x) const;

  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return n_; }
  double bandwidth() const noexcept { return bandwidth_; }
  std::span<const double> point(std::size_t i) const {
    return {points_.data() + i * dim_, dim_};
  }

 private:
  KdeModel(std::vector<double> flat, std::size_t n, std::size_t dim, double bandwidth);

  std::vector<double> points_;  // row-major n x dim
  std::size_t n_;
  std::size_t dim_;
  double bandwidth_;
  double log_norm_;  // -log(n) - (dim/2) log(2 pi h^2)
};

// Per-coordinate affine map to mean 0 / variance 1 on the fitting sample.
// Constant coordinates keep scale 1.
struct Standardizer {
  std::vector<double> mean;
  std::vector<double> scale;

  static Standardizer fit(const std::vector<std::vector<double>>& points);
  std::vector<double> apply(std::span<const double> x) const;
  std::vector<std::vector<double>> apply_all(const std::vector<std::vector<double>>& points) const;
};

struct RatioOptions {
  double floor = 1e-12;  // density floor for the calibration KDE
  double cap = 20.0;     // upper clip of the ratio
};

// test_density / max(cal_density, floor), clipped into [floor, cap].
double likelihood_ratio(const KdeModel& test_kde, const KdeModel& cal_kde,
                        std::span<const double> x, const RatioOptions& options = {});
// Same ratio from precomputed log densities.
double likelihood_ratio_from_logs(double log_test_density, double log_cal_density,
                                  const RatioOptions& options = {});

// Unnormalized likelihood ratios w(X_i^c) for calibration points and w(x)
// for the query point.
class ShiftWeights {
 public:
  ShiftWeights(std::vector<double> cal_weights, double test_weight);

  std::span<const double> cal_weights() const noexcept { return cal_; }
  double test_weight() const noexcept { return test_; }

 private:
  std::vector<double> cal_;
  double test_;
};

struct NormalizedMasses {
  std::vector<double> cal;
  double test = 0.0;
};

NormalizedMasses normalize_weights(const ShiftWeights& weights);

struct Atom {
  double score = 0.0;
  double mass = 0.0;
};

// Point masses on finite scores plus one mass at +infinity. Atoms are kept
// sorted ascending and atoms at equal scores are merged.
class WeightedDistribution {
 public:
  // Throws InvalidInput if any mass is negative or the total differs from 1
  // by more than 1e-12.
  WeightedDistribution(std::vector<Atom> atoms, double infinity_mass);

  std::span<const Atom> atoms() const noexcept { return atoms_; }
  double infinity_mass() const noexcept { return infinity_mass_; }
  double finite_mass() const noexcept;

 private:
  std::vector<Atom> atoms_;
  double infinity_mass_;
};

WeightedDistribution weighted_distribution(const ScoreSet& cal_scores, const ShiftWeights& weights);

// Smallest atom whose cumulative mass reaches 1 - alpha; +infinity when only
// the infinity atom gets there.
double weighted_quantile(ConfidenceLevel level, const WeightedDistribution& dist);

// Calibration scores with fixed likelihood-ratio weights, prepared for many
// queries that differ only in the test-point weight w(x). Equivalent to
// building weighted_distribution() per query, in O(log n) per quantile.
class WeightedCalibration {
 public:
  WeightedCalibration(const ScoreSet& cal_scores, std::span<const double> cal_weights);

  double total_weight() const noexcept { return total_; }
  WeightedDistribution distribution(double test_weight) const;
  double quantile(ConfidenceLevel level, double test_weight) const;
  // Calibration mass at or below v for the query's normalization; the
  // infinity atom never counts.
  double mass_at_or_below(double v, double test_weight) const;

  std::span<const double> scores() const noexcept { return scores_; }
  std::span<const double> cumulative_weights() const noexcept { return cumulative_; }

 private:
  std::vector<double> scores_;      // distinct, ascending
  std::vector<double> cumulative_;  // running sum of raw weights
  double total_ = 0.0;
};

struct BandwidthSearchOptions {
  std::size_t folds = 5;
  std::uint64_t seed = 0;
};

// K-fold cross-validated mean held-out log-likelihood for one bandwidth.
double cross_validated_log_likelihood(const std::vector<std::vector<double>>& points,
                                      double bandwidth, const BandwidthSearchOptions& options);

// Grid bandwidth with the largest cross-validated log-likelihood; ties go to
// the smaller bandwidth. Throws SearchFailure if every candidate is
// degenerate.
double bandwidth_grid_search(const std::vector<std::vector<double>>& points,
                             std::span<const double> grid, const BandwidthSearchOptions& options);

}  // namespace shiftcp
