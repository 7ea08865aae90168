#pragma once

// Split conformal prediction for regression with absolute-residual scores.

#include <cstddef>
#include <limits>
#include <span>
#include <vector>

namespace shiftcp {

// Unbounded quantiles and interval half-widths are IEEE +infinity, never a
// large finite stand-in.
inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

// Slack used when comparing a cumulative mass against 1 - alpha so that
// floating-point round-off never moves a quantile across an exact tie.
inline constexpr double kMassTolerance = 1e-12;

struct RegressionSample {
  std::vector<double> features;
  double label = 0.0;
};

class ConfidenceLevel {
 public:
  // Throws InvalidInput unless 0 < alpha < 1.
  explicit ConfidenceLevel(double alpha);

  double alpha() const noexcept { return alpha_; }
  double confidence() const noexcept { return 1.0 - alpha_; }

 private:
  double alpha_;
};

enum class ScoreSource { calibration, test };

// Nonnegative finite conformal scores. Duplicates are kept.
class ScoreSet {
 public:
  ScoreSet(std::vector<double> scores, ScoreSource source);

  std::span<const double> scores() const noexcept { return scores_; }
  std::size_t size() const noexcept { return scores_.size(); }
  bool empty() const noexcept { return scores_.empty(); }
  ScoreSource source() const noexcept { return source_; }

 private:
  std::vector<double> scores_;
  ScoreSource source_;
};

struct PredictionInterval {
  double center = 0.0;
  double half_width = 0.0;

  double lower() const noexcept { return center - half_width; }
  double upper() const noexcept { return center + half_width; }
  bool unbounded() const noexcept { return half_width == kInfinity; }
  // Closed interval; an unbounded interval contains every finite value.
  bool contains(double y) const noexcept;
};

double conformal_score(double prediction, double truth);

// Rank k = ceil((1 - alpha)(n + 1)) of the order statistic used by split CP.
// k == n + 1 selects the +infinity atom.
std::size_t augmented_rank(ConfidenceLevel level, std::size_t n);

// k-th smallest element of scores plus one atom at +infinity.
double augmented_quantile(ConfidenceLevel level, const ScoreSet& scores);

PredictionInterval predict_interval(double prediction, ConfidenceLevel level,
                                    const ScoreSet& cal_scores);

double empirical_coverage(std::span<const PredictionInterval> intervals,
                          std::span<const double> truths);

}  // namespace shiftcp
