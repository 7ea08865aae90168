#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "shiftcp/data_io.hpp"
#include "shiftcp/errors.hpp"
#include "shiftcp/harness.hpp"

using namespace shiftcp;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Raw option text; converted after parsing so every field keeps its
// task-dependent default when absent.
struct RawOptions {
  std::string config;
  std::string task = "traffic";
  std::string models;
  std::string input;
  std::size_t n_days = 40;
  std::size_t n_years = 20;
  std::size_t n_locations = 4;
  std::optional<double> noise_sd;
  double shift_amplitude = 1.0;
  std::optional<double> train_frac, cal_frac, test_frac;
  std::string domain_mode;
  bool null_control = false;
  std::string alphas = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9";
  std::string bandwidth_grid = "0.1,0.2,0.3,0.5,0.8,1.2";
  double density_floor = 1e-12;
  double ratio_cap = 20.0;
  std::size_t kde_folds = 5;
  std::string query_mode = "per-query";
  std::string area_weighting = "delta-alpha";
  double step_size = 1e-2;
  std::size_t max_iters = 10000;
  double tolerance = 1e-9;
  bool density_buckets = true;
  std::optional<double> density_k1, density_k2;
  std::size_t beta_points = 51;
  std::size_t gamma_points = 51;
  double beta_max = 1.0;
  double gamma_max = 1.0;
  std::size_t period_weeks = 52;
  std::size_t n_seeds = 10;
  std::uint64_t seed = 1;
  std::size_t threads = 0;
  std::string out_dir = "out";
  std::string output;
};

std::vector<double> parse_list(const std::string& text, const std::string& name) {
  std::vector<double> out;
  for (const auto& field : split_csv_line(text)) {
    const auto v = parse_number(field);
    if (!v) throw UsageError("--" + name + ": not a number list: '" + text + "'");
    out.push_back(*v);
  }
  return out;
}

std::vector<std::string> parse_names(const std::string& text) {
  std::vector<std::string> out;
  if (text.empty()) return out;
  for (auto& f : split_csv_line(text)) {
    if (!f.empty()) out.push_back(f);
  }
  return out;
}

ExperimentConfig to_config(const RawOptions& o) {
  ExperimentConfig c;
  c.task = task_from_string(o.task);
  c.models = parse_names(o.models);
  c.input = o.input;
  c.n_days = o.n_days;
  c.n_years = o.n_years;
  c.n_locations = o.n_locations;
  c.noise_sd = o.noise_sd;
  c.shift_amplitude = o.shift_amplitude;
  if (o.train_frac || o.cal_frac || o.test_frac) {
    SplitSpec s = default_split(c.task);
    if (o.train_frac) s.train_frac = *o.train_frac;
    if (o.cal_frac) s.cal_frac = *o.cal_frac;
    if (o.test_frac) s.test_frac = *o.test_frac;
    c.split = s;
  }
  if (!o.domain_mode.empty()) c.domain_mode = domain_mode_from_string(o.domain_mode);
  c.null_control = o.null_control;
  c.alphas = parse_list(o.alphas, "alphas");
  c.bandwidth_grid = parse_list(o.bandwidth_grid, "bandwidth-grid");
  c.ratio.floor = o.density_floor;
  c.ratio.cap = o.ratio_cap;
  c.kde_folds = o.kde_folds;
  if (o.query_mode == "per-query") {
    c.query_mode = QueryMode::per_query;
  } else if (o.query_mode == "shared") {
    c.query_mode = QueryMode::shared;
  } else {
    throw UsageError("--query-mode must be per-query or shared");
  }
  if (o.area_weighting == "delta-alpha") {
    c.area_weighting = AreaWeighting::delta_alpha;
  } else if (o.area_weighting == "raw-sum") {
    c.area_weighting = AreaWeighting::raw_sum;
  } else {
    throw UsageError("--area-weighting must be delta-alpha or raw-sum");
  }
  c.optimizer.step_size = o.step_size;
  c.optimizer.max_iters = o.max_iters;
  c.optimizer.tolerance = o.tolerance;
  c.density_buckets = o.density_buckets;
  if (o.density_k1 || o.density_k2) {
    if (!o.density_k1 || !o.density_k2) throw UsageError("--density-k1 and --density-k2 go together");
    c.density_thresholds = DensityBuckets(*o.density_k1, *o.density_k2);
  }
  c.beta_points = o.beta_points;
  c.gamma_points = o.gamma_points;
  c.beta_max = o.beta_max;
  c.gamma_max = o.gamma_max;
  c.period_weeks = o.period_weeks;
  c.n_seeds = o.n_seeds;
  c.seed = o.seed;
  c.threads = o.threads;
  c.out_dir = o.out_dir;
  return c.resolved();
}

void add_options(CLI::App& app, RawOptions& o) {
  app.add_option("--config", o.config, "INI-style config file; keys are flag names ('_' or '-')");
  app.add_option("--task", o.task, "traffic or epidemic")->capture_default_str();
  app.add_option("--models", o.models,
                 "Comma list of variants (RD-U,RD-UQ or SIR,SIS); default: both for the task");
  app.add_option("--input", o.input, "Dataset CSV; omit to use the synthetic generator");
  app.add_option("--n-days", o.n_days, "Synthetic traffic: days simulated")->capture_default_str();
  app.add_option("--n-years", o.n_years, "Synthetic epidemic: years per location")->capture_default_str();
  app.add_option("--n-locations", o.n_locations, "Synthetic epidemic: locations")->capture_default_str();
  app.add_option("--noise-sd", o.noise_sd,
                 "Synthetic noise level (traffic: km/h, epidemic: log scale); default 0.3 / 0.05");
  app.add_option("--shift-amplitude", o.shift_amplitude,
                 "Synthetic traffic: time-of-day swing of the volume gradients")
      ->capture_default_str();
  app.add_option("--train-frac", o.train_frac, "Training fraction (default 0.35)");
  app.add_option("--cal-frac", o.cal_frac, "Calibration fraction (traffic 0.15, epidemic 0.35)");
  app.add_option("--test-frac", o.test_frac, "Test fraction (traffic 0.50, epidemic 0.30)");
  app.add_option("--domain-mode", o.domain_mode,
                 "hour_of_day, pandemic_interval or whole; default by task");
  app.add_option("--null-control", o.null_control,
                 "Use the calibration set as the only test domain (true/false)")
      ->capture_default_str();
  app.add_option("--alphas", o.alphas, "Comma list of miscoverage levels in (0,1)")->capture_default_str();
  app.add_option("--bandwidth-grid", o.bandwidth_grid, "Comma list of KDE bandwidths")
      ->capture_default_str();
  app.add_option("--density-floor", o.density_floor, "Calibration density floor")->capture_default_str();
  app.add_option("--ratio-cap", o.ratio_cap, "Likelihood-ratio cap")->capture_default_str();
  app.add_option("--kde-folds", o.kde_folds, "Bandwidth cross-validation folds")->capture_default_str();
  app.add_option("--query-mode", o.query_mode, "per-query or shared test-weight normalization")
      ->capture_default_str();
  app.add_option("--area-weighting", o.area_weighting, "delta-alpha or raw-sum grid area")
      ->capture_default_str();
  app.add_option("--step-size", o.step_size, "RD gradient-descent step")->capture_default_str();
  app.add_option("--max-iters", o.max_iters, "RD gradient-descent iterations")->capture_default_str();
  app.add_option("--tolerance", o.tolerance, "RD relative loss-change stop")->capture_default_str();
  app.add_option("--density-buckets", o.density_buckets,
                 "Fit RD-UQ per traffic-density bucket (true/false)")
      ->capture_default_str();
  app.add_option("--density-k1", o.density_k1, "Low/medium density threshold (default: tertiles)");
  app.add_option("--density-k2", o.density_k2, "Medium/high density threshold (default: tertiles)");
  app.add_option("--beta-points", o.beta_points, "Beta grid size")->capture_default_str();
  app.add_option("--gamma-points", o.gamma_points, "Gamma grid size")->capture_default_str();
  app.add_option("--beta-max", o.beta_max, "Beta grid upper end")->capture_default_str();
  app.add_option("--gamma-max", o.gamma_max, "Gamma grid upper end")->capture_default_str();
  app.add_option("--period-weeks", o.period_weeks, "Weeks per epidemic period")->capture_default_str();
  app.add_option("--n-seeds", o.n_seeds, "Replications averaged in the reports")->capture_default_str();
  app.add_option("--seed", o.seed, "First seed; replication s uses seed + s")->capture_default_str();
  app.add_option("--threads", o.threads, "Worker threads (0: all cores)")->capture_default_str();
  app.add_option("--out-dir", o.out_dir, "Output directory")->capture_default_str();
  app.add_option("--output", o.output, "synth: CSV path (default <out-dir>/<task>.csv)");
}

// Config entries become leading "--key=value" arguments so that flags given on
// the command line (parsed later, last one wins) override them.
std::vector<std::string> expand_config(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  std::string path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
  }
  if (path.empty()) return args;
  std::vector<std::string> out;
  for (auto [key, value] : read_config_file(path)) {
    for (auto& ch : key) {
      if (ch == '_') ch = '-';
    }
    if (key == "config") continue;
    out.push_back("--" + key + "=" + value);
  }
  out.insert(out.end(), args.begin(), args.end());
  return out;
}

int run_synth(const ExperimentConfig& cfg, const RawOptions& o) {
  namespace fs = std::filesystem;
  std::string path = o.output;
  if (path.empty()) path = (fs::path(cfg.out_dir) / (to_string(cfg.task) + ".csv")).string();
  const auto parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
  if (cfg.task == Task::traffic) {
    const auto world = synth_traffic({cfg.seed, cfg.n_days, *cfg.noise_sd, cfg.shift_amplitude});
    write_traffic_csv(world.dataset, path);
  } else {
    EpidemicSynthConfig synth;
    synth.seed = cfg.seed;
    synth.n_years = cfg.n_years;
    synth.n_locations = cfg.n_locations;
    synth.noise_sd = *cfg.noise_sd;
    write_epidemic_csv(synth_epidemic(synth).series, path);
  }
  std::cout << path << '\n';
  return 0;
}

int run_fit(const ExperimentConfig& cfg) {
  namespace fs = std::filesystem;
  fs::create_directories(cfg.out_dir);
  const auto path = fs::path(cfg.out_dir) / "models.json";
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  const auto text = fit_models_json(cfg);
  out << text;
  std::cout << text;
  return 0;
}

int run_pipeline(const ExperimentConfig& cfg) {
  namespace fs = std::filesystem;
  const auto result = run_experiment(cfg);
  for (const auto& w : result.warnings) std::cerr << "warning: " << w << '\n';
  emit_reports(result, cfg.out_dir);
  const auto marker = fs::path(cfg.out_dir) / "INCOMPLETE";
  if (!result.failures.empty()) {
    std::ofstream flag(marker, std::ios::trunc);
    for (const auto& f : result.failures) {
      flag << f << '\n';
      std::cerr << "error: " << f << '\n';
    }
    return 1;
  }
  fs::remove(marker);
  print_comparison(result.reports, std::cout);
  return 0;
}

int run_report(const ExperimentConfig& cfg) {
  namespace fs = std::filesystem;
  const fs::path dir(cfg.out_dir);
  const auto curve = read_curve_csv((dir / "divergence_curve.csv").string());
  const auto existing = read_summary_csv((dir / "summary.csv").string());
  const auto rows = recompute_summary(curve, existing, cfg.area_weighting);
  write_summary_csv(rows, (dir / "summary_recomputed.csv").string());
  std::size_t mismatches = 0;
  for (const auto& r : rows) {
    bool found = false;
    for (const auto& e : existing) {
      if (e.model != r.model || e.domain != r.domain) continue;
      found = true;
      if (e.mean_abs_divergence != r.mean_abs_divergence || e.w_grid != r.w_grid) {
        std::cerr << "mismatch: " << r.model << '/' << r.domain << '\n';
        ++mismatches;
      }
    }
    if (!found) ++mismatches;
  }
  if (existing.size() != rows.size()) ++mismatches;
  std::printf("%zu rows recomputed, %zu mismatches\n", rows.size(), mismatches);
  return mismatches ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Conformal prediction diagnostics under distribution shift", "shiftcp"};
  app.require_subcommand(1);
  app.fallthrough();
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  RawOptions raw;
  add_options(app, raw);
  auto* synth = app.add_subcommand("synth", "Write a synthetic dataset CSV");
  auto* fit = app.add_subcommand("fit", "Fit the predictors and write models.json");
  auto* run = app.add_subcommand("run", "Full pipeline: reports, curves and summary");
  auto* report = app.add_subcommand("report", "Recompute summary statistics from the curve CSV");
  for (auto* sub : {synth, fit, run, report}) sub->fallthrough();

  std::vector<std::string> args;
  try {
    args = expand_config(argc, argv);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  ExperimentConfig cfg;
  try {
    cfg = to_config(raw);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const InvalidInput& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }

  try {
    if (*synth) return run_synth(cfg, raw);
    if (*fit) return run_fit(cfg);
    if (*run) return run_pipeline(cfg);
    return run_report(cfg);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
