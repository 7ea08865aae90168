#include "shiftcp/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <map>
#include <ostream>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "shiftcp/errors.hpp"

namespace shiftcp {

using Json = nlohmann::ordered_json;

std::string to_string(Task task) { return task == Task::traffic ? "traffic" : "epidemic"; }

Task task_from_string(const std::string& s) {
  if (s == "traffic") return Task::traffic;
  if (s == "epidemic") return Task::epidemic;
  throw InvalidInput("unknown task '" + s + "' (expected traffic or epidemic)");
}

SplitSpec default_split(Task task) {
  return task == Task::traffic ? SplitSpec{0.35, 0.15, 0.50} : SplitSpec{0.35, 0.35, 0.30};
}

ExperimentConfig ExperimentConfig::resolved() const {
  ExperimentConfig c = *this;
  const bool traffic = task == Task::traffic;
  if (c.models.empty()) {
    c.models = traffic ? std::vector<std::string>{"RD-U", "RD-UQ"}
                       : std::vector<std::string>{"SIR", "SIS"};
  }
  for (const auto& m : c.models) {
    if (traffic) {
      rd_variant_from_string(m);
    } else {
      epi_variant_from_string(m);
    }
  }
  if (!c.noise_sd) c.noise_sd = traffic ? 0.3 : 0.05;
  if (!c.split) c.split = default_split(task);
  if (!c.domain_mode) {
    c.domain_mode = traffic ? DomainMode::hour_of_day : DomainMode::pandemic_interval;
  }
  c.split->validate();
  if (traffic && *c.domain_mode == DomainMode::pandemic_interval) {
    throw InvalidInput("pandemic-interval domains need the epidemic task");
  }
  if (!traffic && *c.domain_mode == DomainMode::hour_of_day) {
    throw InvalidInput("hour-of-day domains need the traffic task");
  }
  if (c.alphas.empty()) throw InvalidInput("alpha grid is empty");
  std::sort(c.alphas.begin(), c.alphas.end());
  for (double a : c.alphas) ConfidenceLevel{a};
  if (c.bandwidth_grid.empty()) throw InvalidInput("bandwidth grid is empty");
  if (c.n_seeds == 0) throw InvalidInput("n_seeds must be at least 1");
  if (c.beta_points == 0 || c.gamma_points == 0) throw InvalidInput("parameter grids are empty");
  return c;
}

std::vector<std::pair<std::string, std::string>> read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  const auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string();
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  };
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ParseError("unterminated section header", line_no);
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("expected key = value", line_no);
    auto key = trim(line.substr(0, eq));
    auto value = trim(line.substr(eq + 1));
    if (key.empty()) throw ParseError("empty key", line_no);
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') {
      value = value.substr(1, value.size() - 2);
    }
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Per-seed pipeline

namespace {

// Scores and regressors of one fitted model class, pooled over sensors or
// locations.
struct ModelData {
  std::string model_id;
  std::vector<double> cal_scores;
  std::vector<double> cal_pred;
  std::vector<double> cal_truth;
  std::vector<std::vector<double>> cal_features;
  std::vector<double> test_scores;
  std::vector<double> test_pred;
  std::vector<double> test_truth;
  std::vector<std::vector<double>> test_features;
  std::vector<DomainKey> test_keys;
  std::vector<double> test_level_sq;  // epidemic only
};

struct SeedOutcome {
  std::vector<DivergenceReport> reports;
  std::vector<std::string> warnings;
  std::vector<std::string> failures;
};

bool inside(const IndexRange& r, std::size_t t) { return r.contains(t) && r.contains(t + 1); }

std::vector<ModelData> prepare_traffic(const ExperimentConfig& cfg, const TrafficDataset& ds,
                                       std::vector<std::string>& warnings) {
  const auto ranges = chronological_split(ds.n_steps, *cfg.split);
  const auto sensors = filter_degree2(ds.graph);
  if (sensors.nodes.empty()) throw InvalidInput("no sensor has exactly one upstream and one downstream neighbour");

  RdSensorFitOptions fit_options;
  fit_options.optimizer = cfg.optimizer;
  fit_options.density_buckets = cfg.density_buckets;
  fit_options.thresholds = cfg.density_thresholds;

  std::vector<ModelData> out;
  for (const auto& model_id : cfg.models) {
    const RdVariant variant = rd_variant_from_string(model_id);
    ModelData md;
    md.model_id = model_id;
    for (const auto& node : sensors.nodes) {
      const auto samples = traffic_samples(ds, node.id);
      std::vector<RdSample> train;
      for (const auto& s : samples) {
        if (inside(ranges.train, s.time_index)) train.push_back(s);
      }
      if (train.empty()) {
        warnings.push_back(node.id + ": no training samples, sensor skipped");
        continue;
      }
      const auto model = fit_sensor_model(node.id, variant, train, fit_options);
      for (const auto& w : model.warnings) warnings.push_back(model_id + " " + w);
      for (const auto& s : samples) {
        const bool cal = inside(ranges.cal, s.time_index);
        const bool test = inside(ranges.test, s.time_index);
        if (!cal && !test) continue;
        const double pred = model.predict(s);
        const double score = conformal_score(pred, s.target);
        auto features = rd_features(variant, s.input);
        if (cal) {
          md.cal_scores.push_back(score);
          md.cal_pred.push_back(pred);
          md.cal_truth.push_back(s.target);
          md.cal_features.push_back(std::move(features));
        } else {
          md.test_scores.push_back(score);
          md.test_pred.push_back(pred);
          md.test_truth.push_back(s.target);
          md.test_features.push_back(std::move(features));
          md.test_keys.push_back({hour_of_day(ds.time_at(s.time_index)), std::nullopt});
        }
      }
    }
    out.push_back(std::move(md));
  }
  return out;
}

// Free-running level forecast from the first test week of each period, one
// squared level error per test transition (keyed by time index).
std::map<std::size_t, double> level_errors(const EpidemicSeries& s, const EpiParams& params,
                                           const IndexRange& test) {
  std::map<std::size_t, double> out;
  for (std::size_t p = 0; p < s.period_starts.size(); ++p) {
    const auto [pb, pe] = s.period_range(p);
    const std::size_t begin = std::max(pb, test.begin);
    const std::size_t end = std::min(pe, test.end);
    if (begin >= end) continue;
    double cumulative = 0.0;
    for (std::size_t t = pb; t < begin; ++t) cumulative += s.infected[t];
    double level = s.infected[begin];
    for (std::size_t t = begin; t + 1 < end; ++t) {
      cumulative += level;
      level = std::clamp(level + epi_delta_I(params, level, cumulative, s.population), 0.0,
                         s.population);
      const double e = level - s.infected[t + 1];
      out[t] = e * e;
    }
  }
  return out;
}

std::vector<ModelData> prepare_epidemic(const ExperimentConfig& cfg,
                                        const std::vector<EpidemicSeries>& series,
                                        std::vector<std::string>& warnings) {
  const auto betas = uniform_grid(0.0, cfg.beta_max, cfg.beta_points);
  const auto gammas = uniform_grid(0.0, cfg.gamma_max, cfg.gamma_points);
  std::vector<ModelData> out;
  for (const auto& model_id : cfg.models) {
    const EpiVariant variant = epi_variant_from_string(model_id);
    ModelData md;
    md.model_id = model_id;
    for (const auto& s : series) {
      const auto ranges = chronological_split(s.size(), *cfg.split);
      const auto train = epi_samples(s, ranges.train.begin, ranges.train.end);
      if (train.empty()) {
        warnings.push_back(s.location_id + ": no training transitions, location skipped");
        continue;
      }
      const auto params = fit_epidemic(variant, train, betas, gammas);
      if (params.gamma > 1.0) warnings.push_back(s.location_id + ": fitted gamma above 1");

      for (const auto& c : epi_samples(s, ranges.cal.begin, ranges.cal.end)) {
        const double pred = epi_predict(params, c);
        md.cal_scores.push_back(conformal_score(pred, c.target));
        md.cal_pred.push_back(pred);
        md.cal_truth.push_back(c.target);
        md.cal_features.push_back(epi_features(variant, c));
      }

      std::map<std::size_t, std::optional<PandemicIntervals>> splits;
      const auto levels = level_errors(s, params, ranges.test);
      for (const auto& t : epi_samples(s, ranges.test.begin, ranges.test.end)) {
        const std::size_t p = s.period_of(t.time_index);
        if (!splits.count(p)) {
          try {
            splits[p] = pandemic_split(s, p);
          } catch (const InvalidInput&) {
            splits[p] = std::nullopt;
            warnings.push_back(s.location_id + ": period " + std::to_string(p) +
                               " has no infections, no pandemic intervals");
          }
        }
        if (!splits[p]) continue;
        const double pred = epi_predict(params, t);
        md.test_scores.push_back(conformal_score(pred, t.target));
        md.test_pred.push_back(pred);
        md.test_truth.push_back(t.target);
        md.test_features.push_back(epi_features(variant, t));
        md.test_keys.push_back({std::nullopt, splits[p]->interval_of(t.time_index)});
        md.test_level_sq.push_back(levels.at(t.time_index));
      }
    }
    out.push_back(std::move(md));
  }
  return out;
}

template <typename T>
std::vector<T> pick(const std::vector<T>& v, const std::vector<std::size_t>& idx) {
  std::vector<T> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(v[i]);
  return out;
}

void evaluate_model(const ExperimentConfig& cfg, const ModelData& md, std::uint64_t seed,
                    SeedOutcome& outcome) {
  if (md.cal_scores.size() < cfg.kde_folds + 2) {
    throw InvalidInput(md.model_id + ": only " + std::to_string(md.cal_scores.size()) +
                       " calibration samples");
  }
  const auto standardizer = Standardizer::fit(md.cal_features);
  const auto cal_z = standardizer.apply_all(md.cal_features);
  const double h = bandwidth_grid_search(cal_z, cfg.bandwidth_grid, {cfg.kde_folds, seed});
  const auto cal_kde = KdeModel::fit(cal_z, h);
  std::vector<double> cal_log(cal_z.size());
  for (std::size_t i = 0; i < cal_z.size(); ++i) cal_log[i] = cal_kde.log_density(cal_z[i]);
  const ScoreSet cal_scores(md.cal_scores, ScoreSource::calibration);

  struct Domain {
    std::string id;
    std::vector<double> scores, pred, truth, level_sq;
    std::vector<std::vector<double>> z;
  };
  std::vector<Domain> domains;
  if (cfg.null_control) {
    domains.push_back({"calibration", md.cal_scores, md.cal_pred, md.cal_truth, {}, cal_z});
  } else {
    const auto test_z = standardizer.apply_all(md.test_features);
    for (const auto& d : partition_test_domains(md.test_keys, {*cfg.domain_mode})) {
      Domain dom{d.id, pick(md.test_scores, d.members), pick(md.test_pred, d.members),
                 pick(md.test_truth, d.members), {}, pick(test_z, d.members)};
      if (!md.test_level_sq.empty()) dom.level_sq = pick(md.test_level_sq, d.members);
      domains.push_back(std::move(dom));
    }
  }

  for (const auto& dom : domains) {
    if (dom.z.size() < 2) {
      outcome.warnings.push_back(md.model_id + " " + dom.id + ": fewer than two test samples, skipped");
      continue;
    }
    const auto test_kde = KdeModel::fit(dom.z, h);
    std::vector<double> cal_w(cal_z.size());
    for (std::size_t i = 0; i < cal_z.size(); ++i) {
      cal_w[i] = likelihood_ratio_from_logs(test_kde.log_density(cal_z[i]), cal_log[i], cfg.ratio);
    }
    std::vector<double> test_w(dom.z.size());
    for (std::size_t k = 0; k < dom.z.size(); ++k) {
      test_w[k] = likelihood_ratio(test_kde, cal_kde, dom.z[k], cfg.ratio);
    }
    const WeightedCalibration weighted(cal_scores, cal_w);
    auto report = build_report(md.model_id, dom.id, cfg.alphas, weighted,
                               {dom.scores, test_w, dom.pred, dom.truth}, cfg.query_mode,
                               cfg.area_weighting);
    if (!dom.level_sq.empty()) {
      double acc = 0.0;
      for (double e : dom.level_sq) acc += e;
      report.level_rmse = std::sqrt(acc / static_cast<double>(dom.level_sq.size()));
    }
    outcome.reports.push_back(std::move(report));
  }
}

SeedOutcome run_seed(const ExperimentConfig& cfg, std::uint64_t seed,
                     const TrafficDataset* shared_traffic,
                     const std::vector<EpidemicSeries>* shared_epidemic) {
  SeedOutcome outcome;
  try {
    std::vector<ModelData> models;
    if (cfg.task == Task::traffic) {
      if (shared_traffic) {
        models = prepare_traffic(cfg, *shared_traffic, outcome.warnings);
      } else {
        const auto world =
            synth_traffic({seed, cfg.n_days, *cfg.noise_sd, cfg.shift_amplitude});
        models = prepare_traffic(cfg, world.dataset, outcome.warnings);
      }
    } else {
      if (shared_epidemic) {
        models = prepare_epidemic(cfg, *shared_epidemic, outcome.warnings);
      } else {
        EpidemicSynthConfig synth;
        synth.seed = seed;
        synth.n_years = cfg.n_years;
        synth.n_locations = cfg.n_locations;
        synth.noise_sd = *cfg.noise_sd;
        const auto world = synth_epidemic(synth);
        models = prepare_epidemic(cfg, world.series, outcome.warnings);
      }
    }
    for (const auto& md : models) evaluate_model(cfg, md, seed, outcome);
  } catch (const std::exception& e) {
    outcome.failures.push_back("seed " + std::to_string(seed) + ": " + e.what());
  }
  for (auto& w : outcome.warnings) w = "seed " + std::to_string(seed) + ": " + w;
  return outcome;
}

}  // namespace

DivergenceReport aggregate_reports(const std::vector<DivergenceReport>& runs,
                                   AreaWeighting weighting) {
  if (runs.empty()) throw InvalidInput("nothing to aggregate");
  DivergenceReport out;
  out.model_id = runs.front().model_id;
  out.test_domain_id = runs.front().test_domain_id;
  const double n = static_cast<double>(runs.size());
  const std::size_t m = runs.front().points.size();
  out.points.resize(m);
  out.sizes.resize(m);
  bool has_level = true;
  double level = 0.0;
  for (const auto& r : runs) {
    if (r.points.size() != m) throw InvalidInput("runs use different alpha grids");
    for (std::size_t k = 0; k < m; ++k) {
      auto& p = out.points[k];
      p.alpha = r.points[k].alpha;
      p.v_q += r.points[k].v_q / n;
      p.expected_cov += r.points[k].expected_cov / n;
      p.exact_cov += r.points[k].exact_cov / n;
      p.abs_divergence += r.points[k].abs_divergence / n;
      out.sizes[k].alpha = r.sizes[k].alpha;
      out.sizes[k].size += r.sizes[k].size / n;
    }
    out.wasserstein_exact += r.wasserstein_exact / n;
    out.rmse += r.rmse / n;
    out.mae += r.mae / n;
    if (r.level_rmse) {
      level += *r.level_rmse / n;
    } else {
      has_level = false;
    }
  }
  for (auto& p : out.points) p.divergence = p.expected_cov - p.exact_cov;
  if (runs.size() == 1) {
    out.points = runs.front().points;
    out.sizes = runs.front().sizes;
  }
  if (has_level) out.level_rmse = level;
  out.wasserstein_grid = divergence_area(out.points, weighting);
  out.mean_abs_divergence = mean_abs_divergence(out.points);
  return out;
}

ExperimentResult run_experiment(const ExperimentConfig& config) {
  const ExperimentConfig cfg = config.resolved();
  std::optional<TrafficDataset> traffic;
  std::optional<std::vector<EpidemicSeries>> epidemic;
  ExperimentResult result;
  if (!cfg.input.empty()) {
    if (cfg.task == Task::traffic) {
      auto load = load_traffic_csv(cfg.input);
      if (load.dropped_missing || load.dropped_invalid) {
        result.warnings.push_back(cfg.input + ": dropped " + std::to_string(load.dropped_missing) +
                                  " rows with missing readings and " +
                                  std::to_string(load.dropped_invalid) + " invalid rows");
      }
      traffic = std::move(load.dataset);
    } else {
      epidemic = load_epidemic_csv(cfg.input, cfg.period_weeks);
      for (const auto& s : *epidemic) {
        if (s.population_defaulted) {
          result.warnings.push_back(s.location_id + ": population defaulted to " +
                                    format_number(s.population));
        }
      }
    }
  }

  const std::size_t workers =
      cfg.threads ? cfg.threads : std::max(1u, std::thread::hardware_concurrency());
  std::vector<SeedOutcome> outcomes(cfg.n_seeds);
  for (std::size_t first = 0; first < cfg.n_seeds; first += workers) {
    std::vector<std::future<SeedOutcome>> batch;
    for (std::size_t s = first; s < std::min(cfg.n_seeds, first + workers); ++s) {
      batch.push_back(std::async(std::launch::async, run_seed, std::cref(cfg), cfg.seed + s,
                                 traffic ? &*traffic : nullptr, epidemic ? &*epidemic : nullptr));
    }
    for (std::size_t k = 0; k < batch.size(); ++k) outcomes[first + k] = batch[k].get();
  }

  std::map<std::pair<std::string, std::string>, std::vector<DivergenceReport>> grouped;
  for (auto& o : outcomes) {
    result.warnings.insert(result.warnings.end(), o.warnings.begin(), o.warnings.end());
    result.failures.insert(result.failures.end(), o.failures.begin(), o.failures.end());
    for (auto& r : o.reports) {
      auto key = std::make_pair(r.model_id, r.test_domain_id);
      grouped[key].push_back(std::move(r));
    }
  }
  for (const auto& [key, runs] : grouped) {
    result.reports.push_back(aggregate_reports(runs, cfg.area_weighting));
  }
  return result;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

Json number_or_inf(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

double read_number(const Json& j) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf") return kInfinity;
    if (s == "-inf") return -kInfinity;
    throw InvalidInput("expected a number, got '" + s + "'");
  }
  return j.get<double>();
}

std::string file_safe(const std::string& s) {
  std::string out;
  for (char c : s) {
    out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_') ? c : '_';
  }
  return out;
}

std::ofstream open_for_write(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

}  // namespace

std::string report_to_json(const DivergenceReport& r) {
  Json j;
  j["model_id"] = r.model_id;
  j["test_domain_id"] = r.test_domain_id;
  Json points = Json::array();
  for (const auto& p : r.points) {
    points.push_back({{"alpha", p.alpha},
                      {"v_q", number_or_inf(p.v_q)},
                      {"expected_cov", p.expected_cov},
                      {"exact_cov", p.exact_cov},
                      {"divergence", p.divergence},
                      {"abs_divergence", p.abs_divergence}});
  }
  j["points"] = std::move(points);
  j["wasserstein_grid"] = r.wasserstein_grid;
  j["wasserstein_exact"] = r.wasserstein_exact;
  j["mean_abs_divergence"] = r.mean_abs_divergence;
  Json sizes = Json::array();
  for (const auto& s : r.sizes) sizes.push_back({{"alpha", s.alpha}, {"size", number_or_inf(s.size)}});
  j["sizes"] = std::move(sizes);
  j["rmse"] = r.rmse;
  j["mae"] = r.mae;
  if (r.level_rmse) j["level_rmse"] = *r.level_rmse;
  return j.dump(2) + "\n";
}

DivergenceReport report_from_json(const std::string& text) {
  const auto j = Json::parse(text);
  DivergenceReport r;
  r.model_id = j.at("model_id").get<std::string>();
  r.test_domain_id = j.at("test_domain_id").get<std::string>();
  for (const auto& p : j.at("points")) {
    r.points.push_back({p.at("alpha").get<double>(), read_number(p.at("v_q")),
                        p.at("expected_cov").get<double>(), p.at("exact_cov").get<double>(),
                        p.at("divergence").get<double>(), p.at("abs_divergence").get<double>()});
  }
  r.wasserstein_grid = j.at("wasserstein_grid").get<double>();
  r.wasserstein_exact = j.at("wasserstein_exact").get<double>();
  r.mean_abs_divergence = j.at("mean_abs_divergence").get<double>();
  for (const auto& s : j.at("sizes")) {
    r.sizes.push_back({s.at("alpha").get<double>(), read_number(s.at("size"))});
  }
  r.rmse = j.at("rmse").get<double>();
  r.mae = j.at("mae").get<double>();
  if (j.contains("level_rmse")) r.level_rmse = j.at("level_rmse").get<double>();
  return r;
}

namespace {

constexpr const char* kCurveHeader =
    "model,domain,alpha,abs_divergence,size,v_q,expected_cov,exact_cov,divergence";
constexpr const char* kSummaryHeader = "model,domain,mean_abs_divergence,W_grid,W_exact,rmse,mae";

std::vector<std::vector<std::string>> read_table(const std::string& path, const char* header,
                                                 std::size_t width) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line != header) {
    throw ParseError(std::string("expected header '") + header + "'", 1);
  }
  std::vector<std::vector<std::string>> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto f = split_csv_line(line);
    if (f.size() != width) throw ParseError("expected " + std::to_string(width) + " fields", line_no);
    rows.push_back(std::move(f));
  }
  return rows;
}

double field_number(const std::string& s) {
  const auto v = parse_number(s);
  if (!v) throw InvalidInput("not a number: '" + s + "'");
  return *v;
}

}  // namespace

std::vector<CurveRow> read_curve_csv(const std::string& path) {
  std::vector<CurveRow> out;
  for (const auto& f : read_table(path, kCurveHeader, 9)) {
    CurveRow row;
    row.model = f[0];
    row.domain = f[1];
    row.point.alpha = field_number(f[2]);
    row.point.abs_divergence = field_number(f[3]);
    row.size = field_number(f[4]);
    row.point.v_q = field_number(f[5]);
    row.point.expected_cov = field_number(f[6]);
    row.point.exact_cov = field_number(f[7]);
    row.point.divergence = field_number(f[8]);
    out.push_back(row);
  }
  return out;
}

std::vector<SummaryRow> read_summary_csv(const std::string& path) {
  std::vector<SummaryRow> out;
  for (const auto& f : read_table(path, kSummaryHeader, 7)) {
    out.push_back({f[0], f[1], field_number(f[2]), field_number(f[3]), field_number(f[4]),
                   field_number(f[5]), field_number(f[6])});
  }
  return out;
}

void write_summary_csv(const std::vector<SummaryRow>& rows, const std::string& path) {
  auto out = open_for_write(path);
  out << kSummaryHeader << '\n';
  for (const auto& r : rows) {
    out << r.model << ',' << r.domain << ',' << format_number(r.mean_abs_divergence) << ','
        << format_number(r.w_grid) << ',' << format_number(r.w_exact) << ','
        << format_number(r.rmse) << ',' << format_number(r.mae) << '\n';
  }
  if (!out) throw IoError("failed writing " + path);
}

void emit_reports(const ExperimentResult& result, const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory " + dir);

  std::vector<SummaryRow> summary;
  auto curve = open_for_write(fs::path(dir) / "divergence_curve.csv");
  curve << kCurveHeader << '\n';
  for (const auto& r : result.reports) {
    auto json = open_for_write(fs::path(dir) / ("report_" + file_safe(r.model_id) + "_" +
                                                file_safe(r.test_domain_id) + ".json"));
    json << report_to_json(r);
    if (!json) throw IoError("failed writing report for " + r.model_id + "/" + r.test_domain_id);
    for (std::size_t k = 0; k < r.points.size(); ++k) {
      const auto& p = r.points[k];
      curve << r.model_id << ',' << r.test_domain_id << ',' << format_number(p.alpha) << ','
            << format_number(p.abs_divergence) << ',' << format_number(r.sizes[k].size) << ','
            << format_number(p.v_q) << ',' << format_number(p.expected_cov) << ','
            << format_number(p.exact_cov) << ',' << format_number(p.divergence) << '\n';
    }
    summary.push_back({r.model_id, r.test_domain_id, r.mean_abs_divergence, r.wasserstein_grid,
                       r.wasserstein_exact, r.rmse, r.mae});
  }
  if (!curve) throw IoError("failed writing divergence_curve.csv");
  write_summary_csv(summary, (fs::path(dir) / "summary.csv").string());
}

std::vector<SummaryRow> recompute_summary(const std::vector<CurveRow>& curve,
                                          const std::vector<SummaryRow>& existing,
                                          AreaWeighting weighting) {
  std::vector<std::pair<std::string, std::string>> order;
  std::map<std::pair<std::string, std::string>, std::vector<DivergencePoint>> grouped;
  for (const auto& row : curve) {
    auto key = std::make_pair(row.model, row.domain);
    if (!grouped.count(key)) order.push_back(key);
    grouped[key].push_back(row.point);
  }
  std::vector<SummaryRow> out;
  for (const auto& key : order) {
    const auto& points = grouped[key];
    SummaryRow row{key.first, key.second, mean_abs_divergence(points),
                   divergence_area(points, weighting), 0.0, 0.0, 0.0};
    const auto it = std::find_if(existing.begin(), existing.end(), [&](const SummaryRow& s) {
      return s.model == key.first && s.domain == key.second;
    });
    if (it == existing.end()) {
      throw InvalidInput("summary has no row for " + key.first + "/" + key.second);
    }
    row.w_exact = it->w_exact;
    row.rmse = it->rmse;
    row.mae = it->mae;
    out.push_back(row);
  }
  return out;
}

void print_comparison(const std::vector<DivergenceReport>& reports, std::ostream& out) {
  struct Acc {
    double mean_abs = 0.0, w_grid = 0.0, w_exact = 0.0, rmse = 0.0;
    std::size_t n = 0;
  };
  std::vector<std::string> order;
  std::map<std::string, Acc> acc;
  for (const auto& r : reports) {
    if (!acc.count(r.model_id)) order.push_back(r.model_id);
    auto& a = acc[r.model_id];
    a.mean_abs += r.mean_abs_divergence;
    a.w_grid += r.wasserstein_grid;
    a.w_exact += r.wasserstein_exact;
    a.rmse += r.rmse;
    ++a.n;
  }
  char line[160];
  std::snprintf(line, sizeof(line), "%-8s %8s %12s %12s %12s %12s\n", "model", "domains",
                "mean|D|", "W_grid", "W_exact", "rmse");
  out << line;
  for (const auto& m : order) {
    const auto& a = acc[m];
    const double n = static_cast<double>(a.n);
    std::snprintf(line, sizeof(line), "%-8s %8zu %12.6f %12.6f %12.6f %12.6f\n", m.c_str(), a.n,
                  a.mean_abs / n, a.w_grid / n, a.w_exact / n, a.rmse / n);
    out << line;
  }
}

// ---------------------------------------------------------------------------
// Parameter export

namespace {

Json rd_params_json(const RdParams& p) {
  Json j;
  j["variant"] = to_string(p.variant);
  j["bucket"] = p.bucket;
  j["rho_u"] = p.rho_u;
  if (p.variant == RdVariant::UQ) j["rho_q"] = p.rho_q;
  j["sigma_u"] = p.sigma_u;
  if (p.variant == RdVariant::UQ) j["sigma_q"] = p.sigma_q;
  j["d"] = p.d;
  j["r"] = p.r;
  return j;
}

}  // namespace

std::string fit_models_json(const ExperimentConfig& config) {
  const ExperimentConfig cfg = config.resolved();
  Json root = Json::object();
  if (cfg.task == Task::traffic) {
    TrafficDataset ds = cfg.input.empty()
                            ? synth_traffic({cfg.seed, cfg.n_days, *cfg.noise_sd, cfg.shift_amplitude}).dataset
                            : load_traffic_csv(cfg.input).dataset;
    const auto ranges = chronological_split(ds.n_steps, *cfg.split);
    RdSensorFitOptions options;
    options.optimizer = cfg.optimizer;
    options.density_buckets = cfg.density_buckets;
    options.thresholds = cfg.density_thresholds;
    for (const auto& node : filter_degree2(ds.graph).nodes) {
      std::vector<RdSample> train;
      for (const auto& s : traffic_samples(ds, node.id)) {
        if (inside(ranges.train, s.time_index)) train.push_back(s);
      }
      if (train.empty()) continue;
      for (const auto& model_id : cfg.models) {
        const auto model = fit_sensor_model(node.id, rd_variant_from_string(model_id), train, options);
        Json m;
        if (model.thresholds) {
          m["thresholds"] = {{"k1", model.thresholds->k1}, {"k2", model.thresholds->k2}};
        } else {
          m["thresholds"] = nullptr;
        }
        m["global"] = rd_params_json(model.global);
        Json buckets = Json::array();
        for (const auto& b : model.bucketed) buckets.push_back(rd_params_json(b));
        m["buckets"] = std::move(buckets);
        root[node.id][model_id] = std::move(m);
      }
    }
  } else {
    std::vector<EpidemicSeries> series;
    if (cfg.input.empty()) {
      EpidemicSynthConfig synth;
      synth.seed = cfg.seed;
      synth.n_years = cfg.n_years;
      synth.n_locations = cfg.n_locations;
      synth.noise_sd = *cfg.noise_sd;
      series = synth_epidemic(synth).series;
    } else {
      series = load_epidemic_csv(cfg.input, cfg.period_weeks);
    }
    const auto betas = uniform_grid(0.0, cfg.beta_max, cfg.beta_points);
    const auto gammas = uniform_grid(0.0, cfg.gamma_max, cfg.gamma_points);
    for (const auto& s : series) {
      const auto ranges = chronological_split(s.size(), *cfg.split);
      root[s.location_id]["population"] = s.population;
      for (const auto& model_id : cfg.models) {
        const auto p = fit_epidemic(epi_variant_from_string(model_id), s, betas, gammas,
                                    ranges.train.begin, ranges.train.end);
        root[s.location_id][model_id] = {{"beta", p.beta}, {"gamma", p.gamma}};
      }
    }
  }
  return root.dump(2) + "\n";
}

}  // namespace shiftcp
