#include "shiftcp/epidemic.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "shiftcp/errors.hpp"

namespace shiftcp {

std::string to_string(EpiVariant v) { return v == EpiVariant::SIR ? "SIR" : "SIS"; }

EpiVariant epi_variant_from_string(const std::string& s) {
  if (s == "SIR") return EpiVariant::SIR;
  if (s == "SIS") return EpiVariant::SIS;
  throw InvalidInput("unknown epidemic model '" + s + "' (expected SIR or SIS)");
}

std::size_t EpidemicSeries::period_of(std::size_t t) const {
  const auto it = std::upper_bound(period_starts.begin(), period_starts.end(), t);
  return static_cast<std::size_t>(it - period_starts.begin()) - 1;
}

std::pair<std::size_t, std::size_t> EpidemicSeries::period_range(std::size_t p) const {
  if (p >= period_starts.size()) throw InvalidInput("period index out of range");
  const std::size_t end = p + 1 < period_starts.size() ? period_starts[p + 1] : size();
  return {period_starts[p], end};
}

void validate(const EpidemicSeries& series) {
  if (!(series.population > 0.0) || !std::isfinite(series.population)) {
    throw InvalidInput(series.location_id + ": population must be positive");
  }
  for (std::size_t t = 0; t < series.size(); ++t) {
    const double v = series.infected[t];
    if (!std::isfinite(v) || v < 0.0) {
      throw InvalidInput(series.location_id + ": negative or non-finite count at week " +
                         std::to_string(t));
    }
    if (v > series.population) {
      throw InvalidInput(series.location_id + ": count exceeds population at week " +
                         std::to_string(t));
    }
  }
  if (series.period_starts.empty() || series.period_starts.front() != 0) {
    throw InvalidInput(series.location_id + ": period boundaries must start at 0");
  }
  if (!std::is_sorted(series.period_starts.begin(), series.period_starts.end()) ||
      std::adjacent_find(series.period_starts.begin(), series.period_starts.end()) !=
          series.period_starts.end()) {
    throw InvalidInput(series.location_id + ": period boundaries must be strictly increasing");
  }
}

std::vector<std::size_t> yearly_periods(std::size_t n_weeks, std::size_t period_weeks) {
  if (period_weeks == 0) throw InvalidInput("period length must be positive");
  std::vector<std::size_t> starts;
  for (std::size_t t = 0; t < std::max<std::size_t>(n_weeks, 1); t += period_weeks) {
    starts.push_back(t);
  }
  return starts;
}

double default_population(std::span<const double> infected,
                          std::span<const std::size_t> period_starts, double multiple) {
  double best = 0.0;
  for (std::size_t p = 0; p < period_starts.size(); ++p) {
    const std::size_t end = p + 1 < period_starts.size() ? period_starts[p + 1] : infected.size();
    double total = 0.0;
    for (std::size_t t = period_starts[p]; t < end && t < infected.size(); ++t) total += infected[t];
    best = std::max(best, total);
  }
  return best > 0.0 ? multiple * best : 1.0;
}

double sir_delta_I(double infected, double cumulative_infected, double population,
                   const EpiParams& params) {
  const double susceptible = population - infected - params.gamma * cumulative_infected;
  return (params.beta * susceptible / population - params.gamma) * infected;
}

double sis_delta_I(double infected, double population, const EpiParams& params) {
  return (params.beta * (population - infected) / population - params.gamma) * infected;
}

double epi_delta_I(const EpiParams& params, double infected, double cumulative_infected,
                   double population) {
  return params.variant == EpiVariant::SIR
             ? sir_delta_I(infected, cumulative_infected, population, params)
             : sis_delta_I(infected, population, params);
}

std::vector<double> period_cumulative(const EpidemicSeries& series) {
  std::vector<double> cum(series.size());
  double running = 0.0;
  std::size_t next_boundary = 0;
  for (std::size_t t = 0; t < series.size(); ++t) {
    if (next_boundary < series.period_starts.size() && series.period_starts[next_boundary] == t) {
      running = 0.0;
      ++next_boundary;
    }
    running += series.infected[t];
    cum[t] = running;
  }
  return cum;
}

std::vector<Compartments> simulate(const EpiParams& params, double initial_infected,
                                   double population, std::size_t steps,
                                   std::span<const std::size_t> period_starts) {
  if (!(population > 0.0)) throw InvalidInput("population must be positive");
  if (initial_infected < 0.0 || initial_infected > population) {
    throw InvalidInput("initial infections must lie in [0, N]");
  }
  const auto is_boundary = [&](std::size_t t) {
    return std::binary_search(period_starts.begin(), period_starts.end(), t);
  };
  const bool sir = params.variant == EpiVariant::SIR;

  std::vector<Compartments> path;
  path.reserve(steps + 1);
  double infected = initial_infected;
  double recovered = 0.0;
  double cumulative = 0.0;
  for (std::size_t t = 0;; ++t) {
    if (is_boundary(t)) {
      recovered = 0.0;
      cumulative = 0.0;
    }
    path.push_back({population - infected - recovered, infected, recovered});
    if (t == steps) break;
    cumulative += infected;
    const double delta = epi_delta_I(params, infected, cumulative, population);
    double next_recovered = sir ? std::min(params.gamma * cumulative, population) : 0.0;
    if (is_boundary(t + 1)) next_recovered = 0.0;
    infected = std::clamp(infected + delta, 0.0, population - next_recovered);
    recovered = next_recovered;
  }
  return path;
}

std::vector<EpiSample> epi_samples(const EpidemicSeries& series, std::size_t begin,
                                   std::size_t end) {
  end = std::min(end, series.size());
  const auto cum = period_cumulative(series);
  std::vector<EpiSample> out;
  for (std::size_t t = begin; t + 1 < end; ++t) {
    if (std::binary_search(series.period_starts.begin(), series.period_starts.end(), t + 1)) {
      continue;
    }
    out.push_back({series.infected[t], cum[t], series.population,
                   series.infected[t + 1] - series.infected[t], t});
  }
  return out;
}

std::vector<double> epi_features(EpiVariant variant, const EpiSample& sample) {
  if (variant == EpiVariant::SIR) return {sample.infected, sample.cumulative};
  return {sample.infected};
}

double epi_predict(const EpiParams& params, const EpiSample& sample) {
  return epi_delta_I(params, sample.infected, sample.cumulative, sample.population);
}

std::vector<double> uniform_grid(double lo, double hi, std::size_t points) {
  if (points == 0) return {};
  if (points == 1) return {lo};
  std::vector<double> g(points);
  for (std::size_t i = 0; i < points; ++i) {
    g[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(points - 1);
  }
  return g;
}

EpiParams fit_epidemic(EpiVariant variant, std::span<const EpiSample> samples,
                       std::span<const double> beta_grid, std::span<const double> gamma_grid) {
  if (beta_grid.empty() || gamma_grid.empty()) throw InvalidInput("parameter grids are empty");
  if (samples.empty()) throw InvalidInput("no transitions to fit");
  std::vector<double> betas(beta_grid.begin(), beta_grid.end());
  std::vector<double> gammas(gamma_grid.begin(), gamma_grid.end());
  std::sort(betas.begin(), betas.end());
  std::sort(gammas.begin(), gammas.end());

  EpiParams best{variant, betas.front(), gammas.front()};
  double best_loss = std::numeric_limits<double>::infinity();
  for (double b : betas) {
    for (double g : gammas) {
      const EpiParams p{variant, b, g};
      double loss = 0.0;
      for (const auto& s : samples) {
        const double e = epi_predict(p, s) - s.target;
        loss += e * e;
      }
      if (loss < best_loss) {
        best_loss = loss;
        best = p;
      }
    }
  }
  return best;
}

EpiParams fit_epidemic(EpiVariant variant, const EpidemicSeries& series,
                       std::span<const double> beta_grid, std::span<const double> gamma_grid,
                       std::size_t begin, std::size_t end) {
  const auto samples = epi_samples(series, begin, end);
  return fit_epidemic(variant, samples, beta_grid, gamma_grid);
}

int PandemicIntervals::interval_of(std::size_t t) const noexcept {
  if (t < t1) return 0;
  if (t < t2) return 1;
  if (t < t3) return 2;
  return 3;
}

PandemicIntervals pandemic_split(std::span<const double> infected, std::size_t start,
                                 std::size_t end) {
  if (start >= end || end > infected.size()) throw InvalidInput("invalid period range");
  double total = 0.0;
  for (std::size_t t = start; t < end; ++t) total += infected[t];
  if (!(total > 0.0)) throw InvalidInput("period has no infections to split");

  PandemicIntervals out;
  out.start = start;
  out.end = end;
  std::array<std::size_t*, 3> slots = {&out.t1, &out.t2, &out.t3};
  std::size_t k = 0;
  double running = 0.0;
  for (std::size_t t = start; t < end && k < 3; ++t) {
    running += infected[t];
    while (k < 3 && running >= kPandemicThresholds[k] * total * (1.0 - 1e-12)) {
      *slots[k++] = t + 1;
    }
  }
  while (k < 3) *slots[k++] = end;
  return out;
}

PandemicIntervals pandemic_split(const EpidemicSeries& series, std::size_t period) {
  const auto [begin, end] = series.period_range(period);
  return pandemic_split(series.infected, begin, end);
}

}  // namespace shiftcp
