#include "shiftcp/conformal.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "shiftcp/errors.hpp"

namespace shiftcp {

ConfidenceLevel::ConfidenceLevel(double alpha) : alpha_(alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw InvalidInput("alpha must lie in (0, 1), got " + std::to_string(alpha));
  }
}

ScoreSet::ScoreSet(std::vector<double> scores, ScoreSource source)
    : scores_(std::move(scores)), source_(source) {
  for (double s : scores_) {
    if (!std::isfinite(s) || s < 0.0) {
      throw InvalidInput("conformal scores must be finite and nonnegative");
    }
  }
}

bool PredictionInterval::contains(double y) const noexcept {
  if (unbounded()) return true;
  return y >= lower() && y <= upper();
}

double conformal_score(double prediction, double truth) { return std::abs(prediction - truth); }

std::size_t augmented_rank(ConfidenceLevel level, std::size_t n) {
  const double target = level.confidence() * static_cast<double>(n + 1);
  // 1 - alpha is rarely exact in binary; snap values within round-off of an
  // integer down to that integer before taking the ceiling.
  const double snapped = std::ceil(target - 1e-12 * static_cast<double>(n + 1));
  const auto k = static_cast<std::size_t>(std::max(1.0, snapped));
  return std::min(k, n + 1);
}

double augmented_quantile(ConfidenceLevel level, const ScoreSet& scores) {
  if (scores.empty()) throw InvalidInput("augmented_quantile needs at least one score");
  const std::size_t n = scores.size();
  const std::size_t k = augmented_rank(level, n);
  if (k == n + 1) return kInfinity;
  std::vector<double> work(scores.scores().begin(), scores.scores().end());
  std::nth_element(work.begin(), work.begin() + static_cast<std::ptrdiff_t>(k - 1), work.end());
  return work[k - 1];
}

PredictionInterval predict_interval(double prediction, ConfidenceLevel level,
                                    const ScoreSet& cal_scores) {
  return {prediction, augmented_quantile(level, cal_scores)};
}

double empirical_coverage(std::span<const PredictionInterval> intervals,
                          std::span<const double> truths) {
  if (intervals.size() != truths.size()) {
    throw InvalidInput("intervals and truths differ in length");
  }
  if (intervals.empty()) throw InvalidInput("empirical_coverage needs at least one pair");
  std::size_t covered = 0;
  for (std::size_t i = 0; i < intervals.size(); ++i) {
    if (intervals[i].contains(truths[i])) ++covered;
  }
  return static_cast<double>(covered) / static_cast<double>(intervals.size());
}

}  // namespace shiftcp
