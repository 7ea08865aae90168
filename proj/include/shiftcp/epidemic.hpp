#pragma once

// Discrete SIR / SIS predictors for weekly infection counts.
//
// SIR: dI(t) = (beta (N - I(t) - gamma * sum_{s=t_o}^{t} I(s)) / N - gamma) I(t)
// SIS: dI(t) = (beta (N - I(t)) / N - gamma) I(t)
//
// t_o is the first week of the epidemic period containing t; the recovered
// compartment restarts from zero at every period boundary.

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace shiftcp {

enum class EpiVariant { SIR, SIS };

std::string to_string(EpiVariant v);
EpiVariant epi_variant_from_string(const std::string& s);

struct EpiParams {
  EpiVariant variant = EpiVariant::SIR;
  double beta = 0.0;   // per week
  double gamma = 0.0;  // per week
};

struct EpidemicSeries {
  std::string location_id;
  std::vector<std::string> week_start;  // ISO dates, one per observation
  std::vector<double> infected;         // I(t) >= 0
  double population = 0.0;              // N
  bool population_defaulted = false;
  std::vector<std::size_t> period_starts;  // sorted, first is 0

  std::size_t size() const noexcept { return infected.size(); }
  // Index of the period containing week t.
  std::size_t period_of(std::size_t t) const;
  // [begin, end) of period p.
  std::pair<std::size_t, std::size_t> period_range(std::size_t p) const;
};

// Throws InvalidInput if counts are negative or exceed N, or if the period
// boundaries are unsorted or do not start at 0.
void validate(const EpidemicSeries& series);

// Boundaries every period_weeks weeks starting at 0.
std::vector<std::size_t> yearly_periods(std::size_t n_weeks, std::size_t period_weeks = 52);

// Default population: multiple x the largest period total of I.
double default_population(std::span<const double> infected,
                          std::span<const std::size_t> period_starts, double multiple = 10.0);

double sir_delta_I(double infected, double cumulative_infected, double population,
                   const EpiParams& params);
double sis_delta_I(double infected, double population, const EpiParams& params);
double epi_delta_I(const EpiParams& params, double infected, double cumulative_infected,
                   double population);

// Period-local running sum sum_{s=t_o}^{t} I(s), inclusive of t.
std::vector<double> period_cumulative(const EpidemicSeries& series);

struct Compartments {
  double S = 0.0;
  double I = 0.0;
  double R = 0.0;
};

// Forward Euler with one-week steps. R(t) = gamma * sum_{s=t_o}^{t-1} I(s)
// (zero at each boundary), S = N - I - R for SIR and N - I for SIS. I is
// clamped to [0, N - R]. Returns steps + 1 states.
std::vector<Compartments> simulate(const EpiParams& params, double initial_infected,
                                   double population, std::size_t steps,
                                   std::span<const std::size_t> period_starts);

// One-step (teacher-forced) regression sample: observed I(t) and its
// period-local cumulative predict the observed change I(t+1) - I(t).
struct EpiSample {
  double infected = 0.0;
  double cumulative = 0.0;
  double population = 0.0;
  double target = 0.0;
  std::size_t time_index = 0;
};

// Samples for transitions t -> t+1 with begin <= t and t + 1 < end. Steps
// into a new period are skipped.
std::vector<EpiSample> epi_samples(const EpidemicSeries& series, std::size_t begin,
                                   std::size_t end);

// Weighted-CP regressors: (I, cumulative I) for SIR, (I) for SIS.
std::vector<double> epi_features(EpiVariant variant, const EpiSample& sample);

double epi_predict(const EpiParams& params, const EpiSample& sample);

// Uniform grid of `points` values over [lo, hi].
std::vector<double> uniform_grid(double lo, double hi, std::size_t points);

// Exhaustive (beta, gamma) search minimizing the one-step mean squared error;
// ties go to the smaller beta, then the smaller gamma.
EpiParams fit_epidemic(EpiVariant variant, std::span<const EpiSample> samples,
                       std::span<const double> beta_grid, std::span<const double> gamma_grid);

// Convenience overload fitting on transitions inside [begin, end).
EpiParams fit_epidemic(EpiVariant variant, const EpidemicSeries& series,
                       std::span<const double> beta_grid, std::span<const double> gamma_grid,
                       std::size_t begin, std::size_t end);

inline constexpr std::array<double, 3> kPandemicThresholds = {0.05, 0.5, 0.95};

// Interval endpoints as half-open boundaries in absolute week indices:
//   Initiation [start, t1), Acceleration [t1, t2), Deceleration [t2, t3),
//   Subsidence [t3, end).
// t_k is one past the first week whose inclusive cumulative share of the
// period total reaches the k-th threshold.
struct PandemicIntervals {
  std::size_t start = 0;
  std::size_t t1 = 0;
  std::size_t t2 = 0;
  std::size_t t3 = 0;
  std::size_t end = 0;

  // 0 initiation, 1 acceleration, 2 deceleration, 3 subsidence.
  int interval_of(std::size_t t) const noexcept;
};

inline constexpr std::array<const char*, 4> kPandemicIntervalNames = {
    "1_initiation", "2_acceleration", "3_deceleration", "4_subsidence"};

// Throws InvalidInput if the period has no infections.
PandemicIntervals pandemic_split(std::span<const double> infected, std::size_t start,
                                 std::size_t end);
PandemicIntervals pandemic_split(const EpidemicSeries& series, std::size_t period);

}  // namespace shiftcp
