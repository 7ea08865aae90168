#pragma once

// Experiment orchestration: fit predictors, compute calibration/test scores,
// weight the calibration set per test domain, sweep the alpha grid and write
// reports.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "shiftcp/data_io.hpp"
#include "shiftcp/diagnostics.hpp"
#include "shiftcp/epidemic.hpp"
#include "shiftcp/traffic.hpp"
#include "shiftcp/weighted.hpp"

namespace shiftcp {

enum class Task { traffic, epidemic };

std::string to_string(Task task);
Task task_from_string(const std::string& s);

// Train/cal/test fractions used when the config leaves them unset.
SplitSpec default_split(Task task);

struct ExperimentConfig {
  Task task = Task::traffic;
  // Unset fields take task-dependent defaults in resolved().
  std::vector<std::string> models;
  std::string input;  // CSV path; empty selects the synthetic generator

  // Synthetic worlds.
  std::size_t n_days = 40;
  std::size_t n_years = 20;
  std::size_t n_locations = 4;
  std::optional<double> noise_sd;
  double shift_amplitude = 1.0;

  std::optional<SplitSpec> split;
  std::optional<DomainMode> domain_mode;
  // Null-case control: the calibration set itself is the only test domain.
  bool null_control = false;

  std::vector<double> alphas = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  std::vector<double> bandwidth_grid = {0.1, 0.2, 0.3, 0.5, 0.8, 1.2};
  RatioOptions ratio;
  std::size_t kde_folds = 5;
  QueryMode query_mode = QueryMode::per_query;
  AreaWeighting area_weighting = AreaWeighting::delta_alpha;

  RdFitOptions optimizer;
  bool density_buckets = true;
  std::optional<DensityBuckets> density_thresholds;

  std::size_t beta_points = 51;
  std::size_t gamma_points = 51;
  double beta_max = 1.0;
  double gamma_max = 1.0;
  std::size_t period_weeks = 52;

  std::size_t n_seeds = 10;
  std::uint64_t seed = 1;
  std::size_t threads = 0;  // 0: hardware concurrency
  std::string out_dir = "out";

  // Copy with task defaults filled in; throws InvalidInput on an invalid
  // combination.
  ExperimentConfig resolved() const;
};

// Flat "key = value" lines, '[section]' headers, '#' or ';' comments. Keys
// are returned in file order with the section name dropped.
std::vector<std::pair<std::string, std::string>> read_config_file(const std::string& path);

struct ExperimentResult {
  std::vector<DivergenceReport> reports;  // sorted by (model_id, test_domain_id)
  std::vector<std::string> warnings;
  std::vector<std::string> failures;  // seeds or domains that could not run
};

ExperimentResult run_experiment(const ExperimentConfig& config);

// Mean of per-seed reports for the same (model, domain) pair. The Wasserstein
// grid area and mean |D| are recomputed from the averaged curve.
DivergenceReport aggregate_reports(const std::vector<DivergenceReport>& runs,
                                   AreaWeighting weighting);

// Writes report_<model>_<domain>.json, divergence_curve.csv and summary.csv.
void emit_reports(const ExperimentResult& result, const std::string& dir);

std::string report_to_json(const DivergenceReport& report);
DivergenceReport report_from_json(const std::string& text);

struct SummaryRow {
  std::string model;
  std::string domain;
  double mean_abs_divergence = 0.0;
  double w_grid = 0.0;
  double w_exact = 0.0;
  double rmse = 0.0;
  double mae = 0.0;
};

struct CurveRow {
  std::string model;
  std::string domain;
  DivergencePoint point;
  double size = 0.0;
};

std::vector<CurveRow> read_curve_csv(const std::string& path);
std::vector<SummaryRow> read_summary_csv(const std::string& path);
void write_summary_csv(const std::vector<SummaryRow>& rows, const std::string& path);

// Recomputes mean |D| and the grid area for every (model, domain) in the
// curve file, taking W_exact/RMSE/MAE from the existing summary rows.
std::vector<SummaryRow> recompute_summary(const std::vector<CurveRow>& curve,
                                          const std::vector<SummaryRow>& existing,
                                          AreaWeighting weighting);

// Per-model means over domains, printed as an aligned table.
void print_comparison(const std::vector<DivergenceReport>& reports, std::ostream& out);

// Fitted parameters for every sensor/location, keyed by node or location id.
std::string fit_models_json(const ExperimentConfig& config);

}  // namespace shiftcp
