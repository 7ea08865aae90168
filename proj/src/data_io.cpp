#include "shiftcp/data_io.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <numbers>
#include <random>
#include <sstream>

#include "shiftcp/errors.hpp"

namespace shiftcp {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, sep)) out.push_back(field);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

std::string strip_cr(std::string s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
  return s;
}

std::vector<std::string> parse_id_list(const std::string& field) {
  std::vector<std::string> ids;
  if (field.empty()) return ids;
  for (auto& id : split(field, ';')) {
    if (!id.empty()) ids.push_back(id);
  }
  return ids;
}

std::string join_ids(const std::vector<std::string>& ids) {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ';';
    out += ids[i];
  }
  return out;
}

void merge_ids(std::vector<std::string>& into, const std::vector<std::string>& from) {
  for (const auto& id : from) {
    if (std::find(into.begin(), into.end(), id) == into.end()) into.push_back(id);
  }
}

std::ifstream open_input(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  return in;
}

std::ofstream open_output(const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  return out;
}

}  // namespace

std::string format_number(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

std::optional<double> parse_number(const std::string& text) {
  double v = 0.0;
  const char* first = text.data();
  const char* last = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || text.empty()) return std::nullopt;
  return v;
}

std::vector<std::string> split_csv_line(const std::string& line) { return split(line, ','); }

// ---------------------------------------------------------------------------
// Timestamps

std::int64_t parse_timestamp(const std::string& text) {
  int y = 0;
  unsigned mo = 0;
  unsigned d = 0;
  int h = 0;
  int mi = 0;
  int s = 0;
  char sep = 'T';
  int consumed = 0;
  const int fields =
      std::sscanf(text.c_str(), "%4d-%2u-%2u%c%2d:%2d:%2d%n", &y, &mo, &d, &sep, &h, &mi, &s, &consumed);
  std::size_t used = static_cast<std::size_t>(consumed);
  if (fields == 3) {
    // Date only.
    h = mi = s = 0;
    std::sscanf(text.c_str(), "%*4d-%*2u-%*2u%n", &consumed);
    used = static_cast<std::size_t>(consumed);
  } else if (fields != 7 || (sep != 'T' && sep != ' ')) {
    throw InvalidInput("bad timestamp '" + text + "'");
  }
  if (used < text.size() && !(used + 1 == text.size() && text.back() == 'Z')) {
    throw InvalidInput("bad timestamp '" + text + "'");
  }
  const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{mo},
                                        std::chrono::day{d}};
  if (!ymd.ok() || h < 0 || h > 23 || mi < 0 || mi > 59 || s < 0 || s > 59) {
    throw InvalidInput("bad timestamp '" + text + "'");
  }
  const auto days = std::chrono::sys_days(ymd).time_since_epoch().count();
  return static_cast<std::int64_t>(days) * 86400 + h * 3600 + mi * 60 + s;
}

std::string format_timestamp(std::int64_t seconds) {
  const auto days = static_cast<int>(std::floor(static_cast<double>(seconds) / 86400.0));
  const std::int64_t rem = seconds - static_cast<std::int64_t>(days) * 86400;
  const std::chrono::year_month_day ymd{std::chrono::sys_days{std::chrono::days{days}}};
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%04d-%02u-%02uT%02d:%02d:%02d", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                static_cast<int>(rem / 3600), static_cast<int>((rem % 3600) / 60),
                static_cast<int>(rem % 60));
  return buf;
}

int hour_of_day(std::int64_t seconds) {
  std::int64_t rem = seconds % 86400;
  if (rem < 0) rem += 86400;
  return static_cast<int>(rem / 3600);
}

// ---------------------------------------------------------------------------
// Traffic

std::size_t TrafficDataset::node_index(const std::string& id) const {
  for (std::size_t i = 0; i < graph.nodes.size(); ++i) {
    if (graph.nodes[i].id == id) return i;
  }
  throw InvalidInput("unknown sensor '" + id + "'");
}

TrafficLoad load_traffic_csv(const std::string& path) {
  auto in = open_input(path);
  std::string line;
  if (!std::getline(in, line) || strip_cr(line) != kTrafficHeader) {
    throw ParseError(std::string("expected header '") + kTrafficHeader + "'", 1);
  }

  struct Reading {
    std::int64_t time;
    std::size_t node;
    double speed;
    double volume;
  };
  TrafficLoad result;
  std::vector<Reading> readings;
  std::vector<std::int64_t> times;
  std::map<std::pair<std::int64_t, std::size_t>, std::size_t> seen;
  std::map<std::string, std::size_t> node_ids;
  auto& nodes = result.dataset.graph.nodes;

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    line = strip_cr(line);
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 6) {
      throw ParseError("expected 6 fields, got " + std::to_string(f.size()), line_no);
    }
    std::int64_t t = 0;
    try {
      t = parse_timestamp(f[0]);
    } catch (const InvalidInput& e) {
      throw ParseError(e.what(), line_no);
    }
    if (f[1].empty()) throw ParseError("empty node_id", line_no);

    auto [it, inserted] = node_ids.emplace(f[1], nodes.size());
    if (inserted) nodes.push_back({f[1], {}, {}});
    auto& node = nodes[it->second];
    merge_ids(node.upstream, parse_id_list(f[2]));
    merge_ids(node.downstream, parse_id_list(f[3]));
    times.push_back(t);

    if (!seen.emplace(std::make_pair(t, it->second), line_no).second) {
      throw ParseError("duplicate row for node " + f[1] + " at " + f[0], line_no);
    }
    if (f[4].empty() || f[5].empty()) {
      ++result.dropped_missing;
      continue;
    }
    const auto speed = parse_number(f[4]);
    const auto volume = parse_number(f[5]);
    if (!speed || !volume) throw ParseError("speed and volume must be numeric", line_no);
    if (!std::isfinite(*speed) || !std::isfinite(*volume) || *speed < 0.0 || *volume < 0.0) {
      ++result.dropped_invalid;
      continue;
    }
    readings.push_back({t, it->second, *speed, *volume});
  }
  if (nodes.empty()) throw ParseError("no data rows", line_no);

  std::sort(times.begin(), times.end());
  times.erase(std::unique(times.begin(), times.end()), times.end());
  auto& ds = result.dataset;
  ds.start_time = times.front();
  ds.step_seconds = 300;
  if (times.size() > 1) {
    std::int64_t step = std::numeric_limits<std::int64_t>::max();
    for (std::size_t i = 1; i < times.size(); ++i) step = std::min(step, times[i] - times[i - 1]);
    ds.step_seconds = step;
    for (auto t : times) {
      if ((t - ds.start_time) % step != 0) {
        throw InvalidInput("timestamps are not on a uniform grid (" + format_timestamp(t) + ")");
      }
    }
  }
  ds.n_steps = static_cast<std::size_t>((times.back() - ds.start_time) / ds.step_seconds) + 1;
  ds.speed.assign(nodes.size(), std::vector<double>(ds.n_steps, kNaN));
  ds.volume.assign(nodes.size(), std::vector<double>(ds.n_steps, kNaN));
  for (const auto& r : readings) {
    const auto step = static_cast<std::size_t>((r.time - ds.start_time) / ds.step_seconds);
    ds.speed[r.node][step] = r.speed;
    ds.volume[r.node][step] = r.volume;
  }
  return result;
}

void write_traffic_csv(const TrafficDataset& dataset, const std::string& path) {
  auto out = open_output(path);
  out << kTrafficHeader << '\n';
  for (std::size_t t = 0; t < dataset.n_steps; ++t) {
    const std::string ts = format_timestamp(dataset.time_at(t));
    for (std::size_t i = 0; i < dataset.graph.nodes.size(); ++i) {
      const double u = dataset.speed[i][t];
      const double q = dataset.volume[i][t];
      if (std::isnan(u) || std::isnan(q)) continue;
      const auto& node = dataset.graph.nodes[i];
      out << ts << ',' << node.id << ',' << join_ids(node.upstream) << ','
          << join_ids(node.downstream) << ',' << format_number(u) << ',' << format_number(q)
          << '\n';
    }
  }
  if (!out) throw IoError("failed writing " + path);
}

std::vector<RdSample> traffic_samples(const TrafficDataset& dataset, const std::string& node_id) {
  const std::size_t i = dataset.node_index(node_id);
  const auto& node = dataset.graph.nodes[i];
  std::vector<std::size_t> up;
  std::vector<std::size_t> down;
  for (const auto& id : node.upstream) up.push_back(dataset.node_index(id));
  for (const auto& id : node.downstream) down.push_back(dataset.node_index(id));

  const auto& u = dataset.speed;
  const auto& q = dataset.volume;
  std::vector<RdSample> out;
  for (std::size_t t = 0; t + 1 < dataset.n_steps; ++t) {
    if (std::isnan(u[i][t]) || std::isnan(u[i][t + 1]) || std::isnan(q[i][t])) continue;
    const bool neighbours_ok =
        std::all_of(up.begin(), up.end(),
                    [&](std::size_t j) { return !std::isnan(u[j][t]) && !std::isnan(q[j][t]); }) &&
        std::all_of(down.begin(), down.end(),
                    [&](std::size_t j) { return !std::isnan(u[j][t]) && !std::isnan(q[j][t]); });
    if (!neighbours_ok) continue;
    RdSample s;
    for (std::size_t j : up) {
      s.input.du_up.push_back(u[j][t] - u[i][t]);
      s.input.dq_up.push_back(q[j][t] - q[i][t]);
    }
    for (std::size_t j : down) {
      s.input.du_down.push_back(u[j][t] - u[i][t]);
      s.input.dq_down.push_back(q[j][t] - q[i][t]);
    }
    s.target = u[i][t + 1] - u[i][t];
    s.density = u[i][t] > 0.0 ? q[i][t] / u[i][t] : std::numeric_limits<double>::infinity();
    s.time_index = t;
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Epidemic

std::vector<EpidemicSeries> load_epidemic_csv(const std::string& path, std::size_t period_weeks) {
  auto in = open_input(path);
  std::string line;
  if (!std::getline(in, line) || strip_cr(line) != kEpidemicHeader) {
    throw ParseError(std::string("expected header '") + kEpidemicHeader + "'", 1);
  }
  struct Row {
    std::string week;
    double count;
    std::size_t line;
  };
  std::vector<std::string> order;
  std::map<std::string, std::vector<Row>> rows;
  std::map<std::string, std::pair<double, std::size_t>> population;

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    line = strip_cr(line);
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 4) throw ParseError("expected 4 fields, got " + std::to_string(f.size()), line_no);
    try {
      parse_timestamp(f[0]);
    } catch (const InvalidInput& e) {
      throw ParseError(e.what(), line_no);
    }
    if (f[1].empty()) throw ParseError("empty location_id", line_no);
    const auto count = parse_number(f[2]);
    if (!count || !std::isfinite(*count) || *count < 0.0) {
      throw ParseError("infected_count must be a nonnegative number", line_no);
    }
    if (!rows.count(f[1])) order.push_back(f[1]);
    rows[f[1]].push_back({f[0], *count, line_no});
    if (!f[3].empty()) {
      const auto pop = parse_number(f[3]);
      if (!pop || !(*pop > 0.0)) throw ParseError("population must be a positive number", line_no);
      auto [it, inserted] = population.emplace(f[1], std::make_pair(*pop, line_no));
      if (!inserted && it->second.first != *pop) {
        throw ParseError("population of " + f[1] + " changes between rows", line_no);
      }
    }
  }

  std::vector<EpidemicSeries> out;
  for (const auto& loc : order) {
    auto& r = rows[loc];
    std::stable_sort(r.begin(), r.end(), [](const Row& a, const Row& b) { return a.week < b.week; });
    EpidemicSeries s;
    s.location_id = loc;
    for (std::size_t k = 0; k < r.size(); ++k) {
      if (k && r[k].week == r[k - 1].week) {
        throw ParseError("duplicate week " + r[k].week + " for " + loc, r[k].line);
      }
      s.week_start.push_back(r[k].week);
      s.infected.push_back(r[k].count);
    }
    s.period_starts = yearly_periods(s.size(), period_weeks);
    if (auto it = population.find(loc); it != population.end()) {
      s.population = it->second.first;
      for (const auto& row : r) {
        if (row.count > s.population) {
          throw ParseError("infected_count exceeds population for " + loc, row.line);
        }
      }
    } else {
      s.population = default_population(s.infected, s.period_starts);
      s.population_defaulted = true;
    }
    validate(s);
    out.push_back(std::move(s));
  }
  if (out.empty()) throw ParseError("no data rows", line_no);
  return out;
}

void write_epidemic_csv(std::span<const EpidemicSeries> series, const std::string& path) {
  auto out = open_output(path);
  out << kEpidemicHeader << '\n';
  for (const auto& s : series) {
    for (std::size_t t = 0; t < s.size(); ++t) {
      out << s.week_start[t] << ',' << s.location_id << ',' << format_number(s.infected[t]) << ','
          << (s.population_defaulted ? std::string() : format_number(s.population)) << '\n';
    }
  }
  if (!out) throw IoError("failed writing " + path);
}

// ---------------------------------------------------------------------------
// Splits and domains

void SplitSpec::validate() const {
  if (!(train_frac > 0.0 && cal_frac > 0.0 && test_frac > 0.0)) {
    throw InvalidInput("split fractions must be positive");
  }
  if (std::abs(train_frac + cal_frac + test_frac - 1.0) > 1e-9) {
    throw InvalidInput("split fractions must sum to 1");
  }
}

SplitRanges chronological_split(std::size_t n_rows, const SplitSpec& spec) {
  spec.validate();
  const double n = static_cast<double>(n_rows);
  // The small slack keeps products like 100 * 0.35 from flooring to 34.
  const auto n_train = static_cast<std::size_t>(std::floor(n * spec.train_frac + 1e-9));
  const auto n_cal = static_cast<std::size_t>(std::floor(n * spec.cal_frac + 1e-9));
  if (n_train == 0 || n_cal == 0 || n_train + n_cal >= n_rows) {
    throw InvalidInput("too few rows (" + std::to_string(n_rows) + ") for the requested split");
  }
  return {{0, n_train}, {n_train, n_train + n_cal}, {n_train + n_cal, n_rows}};
}

std::string to_string(DomainMode mode) {
  switch (mode) {
    case DomainMode::hour_of_day:
      return "hour_of_day";
    case DomainMode::pandemic_interval:
      return "pandemic_interval";
    case DomainMode::whole:
      return "whole";
  }
  return "whole";
}

DomainMode domain_mode_from_string(const std::string& s) {
  if (s == "hour_of_day") return DomainMode::hour_of_day;
  if (s == "pandemic_interval") return DomainMode::pandemic_interval;
  if (s == "whole") return DomainMode::whole;
  throw InvalidInput("unknown domain mode '" + s + "'");
}

std::vector<TestDomain> partition_test_domains(std::span<const DomainKey> keys,
                                               const TestDomainSpec& spec) {
  std::vector<TestDomain> out;
  switch (spec.mode) {
    case DomainMode::whole: {
      TestDomain all{"all", {}};
      for (std::size_t i = 0; i < keys.size(); ++i) all.members.push_back(i);
      out.push_back(std::move(all));
      break;
    }
    case DomainMode::hour_of_day: {
      for (int h = 0; h < 24; ++h) {
        char id[8];
        std::snprintf(id, sizeof(id), "h%02d", h);
        out.push_back({id, {}});
      }
      for (std::size_t i = 0; i < keys.size(); ++i) {
        if (!keys[i].hour || *keys[i].hour < 0 || *keys[i].hour > 23) {
          throw InvalidInput("test item " + std::to_string(i) + " has no hour of day");
        }
        out[static_cast<std::size_t>(*keys[i].hour)].members.push_back(i);
      }
      break;
    }
    case DomainMode::pandemic_interval: {
      for (const char* name : kPandemicIntervalNames) out.push_back({name, {}});
      for (std::size_t i = 0; i < keys.size(); ++i) {
        if (!keys[i].interval || *keys[i].interval < 0 || *keys[i].interval > 3) {
          throw InvalidInput("test item " + std::to_string(i) + " has no pandemic interval");
        }
        out[static_cast<std::size_t>(*keys[i].interval)].members.push_back(i);
      }
      break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic traffic

TrafficWorld synth_traffic(const TrafficSynthConfig& config) {
  constexpr std::size_t kStepsPerDay = 288;
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> z(0.0, 1.0);

  TrafficWorld world;
  world.sensor_id = "S1";
  world.truth = RdParams::zeros(RdVariant::UQ, 1, 1);
  world.truth.rho_u = {0.5};
  world.truth.rho_q = {0.02};
  world.truth.sigma_u = {0.3};
  world.truth.sigma_q = {0.01};
  world.truth.d = 0.0;
  world.truth.r = 0.2;

  auto& ds = world.dataset;
  ds.start_time = parse_timestamp("2024-01-01T00:00:00");
  ds.step_seconds = 300;
  ds.n_steps = config.n_days * kStepsPerDay;
  ds.graph.nodes = {{"S0", {}, {"S1"}}, {"S1", {"S0"}, {"S2"}}, {"S2", {"S1"}, {}}};
  ds.speed.assign(3, std::vector<double>(ds.n_steps));
  ds.volume.assign(3, std::vector<double>(ds.n_steps));

  double ar_up = 0.0;
  double ar_down = 0.0;
  double u1 = 55.0;
  for (std::size_t t = 0; t < ds.n_steps; ++t) {
    const double phase = kTwoPi * static_cast<double>(t % kStepsPerDay) / kStepsPerDay;
    const double demand = 0.5 - 0.5 * std::cos(phase);
    // Volume gradients swing with time of day; S1's own volume follows the
    // demand cycle.
    const double q1 = 400.0 + 300.0 * demand + 20.0 * z(rng);
    const double grad_up = 60.0 * config.shift_amplitude * std::sin(phase) + 30.0 * z(rng);
    const double grad_down = 60.0 * config.shift_amplitude * std::cos(phase) + 30.0 * z(rng);
    ar_up = 0.9 * ar_up + 1.5 * z(rng);
    ar_down = 0.9 * ar_down + 1.5 * z(rng);
    const double u0 = std::max(0.0, 60.0 - 15.0 * demand + ar_up);
    const double u2 = std::max(0.0, 60.0 - 15.0 * demand + ar_down);

    ds.speed[0][t] = u0;
    ds.speed[1][t] = u1;
    ds.speed[2][t] = u2;
    ds.volume[0][t] = std::max(0.0, q1 + grad_up);
    ds.volume[1][t] = std::max(0.0, q1);
    ds.volume[2][t] = std::max(0.0, q1 + grad_down);

    RdInput in;
    in.du_up = {u0 - u1};
    in.dq_up = {ds.volume[0][t] - ds.volume[1][t]};
    in.du_down = {u2 - u1};
    in.dq_down = {ds.volume[2][t] - ds.volume[1][t]};
    u1 = std::max(0.0, u1 + rd_uq_predict(world.truth, in) + config.noise_sd * z(rng));
  }
  return world;
}

// ---------------------------------------------------------------------------
// Synthetic epidemics

EpidemicWorld synth_epidemic(const EpidemicSynthConfig& config) {
  constexpr std::size_t kWeeks = 52;
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> z(0.0, 1.0);
  std::uniform_real_distribution<double> imports(2e-5, 1e-4);

  EpidemicWorld world;
  world.truth = config.truth;
  const std::size_t n = config.n_years * kWeeks;
  const auto starts = yearly_periods(n, kWeeks);
  const double N = config.population;
  const std::int64_t first_week = parse_timestamp("2000-01-03");

  for (std::size_t loc = 0; loc < config.n_locations; ++loc) {
    EpidemicSeries s;
    s.location_id = "L" + std::to_string(loc);
    s.population = N;
    s.period_starts = starts;
    double infected = 0.0;
    double cumulative = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
      if (t % kWeeks == 0) {
        cumulative = 0.0;
        infected = std::min(N, infected + imports(rng) * N);
      }
      const double observed =
          std::min(N, infected * std::exp(config.noise_sd * z(rng)));
      s.week_start.push_back(format_timestamp(first_week + static_cast<std::int64_t>(t) * 7 * 86400)
                                 .substr(0, 10));
      s.infected.push_back(observed);
      cumulative += infected;
      const double delta = epi_delta_I(config.truth, infected, cumulative, N);
      const double recovered =
          config.truth.variant == EpiVariant::SIR ? std::min(N, config.truth.gamma * cumulative) : 0.0;
      infected = std::clamp(infected + delta, 0.0, N - recovered);
    }
    world.series.push_back(std::move(s));
  }
  return world;
}

}  // namespace shiftcp
