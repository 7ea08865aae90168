#pragma once

// Dataset ingestion, chronological splitting, test-domain partitioning and
// synthetic ground-truth generators.
//
// Traffic CSV header:  timestamp,node_id,upstream_id,downstream_id,speed,volume
// Epidemic CSV header: week_start,location_id,infected_count,population
//
// Neighbour fields may list several ids separated by ';' or be empty.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "shiftcp/epidemic.hpp"
#include "shiftcp/traffic.hpp"

namespace shiftcp {

inline constexpr const char* kTrafficHeader =
    "timestamp,node_id,upstream_id,downstream_id,speed,volume";
inline constexpr const char* kEpidemicHeader = "week_start,location_id,infected_count,population";

// "YYYY-MM-DDTHH:MM:SS" (a space separator or trailing 'Z' also parse) to
// seconds since 1970-01-01, no time-zone conversion.
std::int64_t parse_timestamp(const std::string& text);
std::string format_timestamp(std::int64_t seconds);
int hour_of_day(std::int64_t seconds);

// Shortest decimal text that round-trips to the same double ("inf" for
// infinity).
std::string format_number(double v);
// Whole-field decimal parse; nullopt on any trailing garbage.
std::optional<double> parse_number(const std::string& text);
// Comma split without quoting; a trailing comma yields an empty last field.
std::vector<std::string> split_csv_line(const std::string& line);

// Speeds and volumes on a uniform time grid; missing readings are NaN.
struct TrafficDataset {
  std::int64_t start_time = 0;
  std::int64_t step_seconds = 300;
  std::size_t n_steps = 0;
  SensorGraph graph;
  std::vector<std::vector<double>> speed;   // [node][step]
  std::vector<std::vector<double>> volume;  // [node][step]

  std::int64_t time_at(std::size_t step) const {
    return start_time + static_cast<std::int64_t>(step) * step_seconds;
  }
  std::size_t node_index(const std::string& id) const;
};

struct TrafficLoad {
  TrafficDataset dataset;
  std::size_t dropped_missing = 0;  // rows without speed or volume
  std::size_t dropped_invalid = 0;  // rows with negative speed or volume
};

// Throws ParseError (with line number) on a malformed header or row.
TrafficLoad load_traffic_csv(const std::string& path);
void write_traffic_csv(const TrafficDataset& dataset, const std::string& path);

// Regression samples for one sensor at every step t where the sensor and
// all neighbours have readings at t and the sensor has a reading at t + 1.
std::vector<RdSample> traffic_samples(const TrafficDataset& dataset, const std::string& node_id);

// Series per location, in order of first appearance. Missing populations
// fall back to default_population(). Throws ParseError naming the row when a
// count exceeds the population.
std::vector<EpidemicSeries> load_epidemic_csv(const std::string& path,
                                              std::size_t period_weeks = 52);
void write_epidemic_csv(std::span<const EpidemicSeries> series, const std::string& path);

struct SplitSpec {
  double train_frac = 0.35;
  double cal_frac = 0.15;
  double test_frac = 0.50;

  void validate() const;
};

struct IndexRange {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const noexcept { return end - begin; }
  bool contains(std::size_t i) const noexcept { return i >= begin && i < end; }
};

struct SplitRanges {
  IndexRange train;
  IndexRange cal;
  IndexRange test;
};

// Contiguous train -> cal -> test blocks of floor(n * frac) rows, remainder to
// test. Throws InvalidInput if any block would be empty.
SplitRanges chronological_split(std::size_t n_rows, const SplitSpec& spec);

enum class DomainMode { hour_of_day, pandemic_interval, whole };

std::string to_string(DomainMode mode);
DomainMode domain_mode_from_string(const std::string& s);

struct TestDomainSpec {
  DomainMode mode = DomainMode::whole;
};

// What each test item knows about where it sits in time.
struct DomainKey {
  std::optional<int> hour;      // 0..23
  std::optional<int> interval;  // 0..3 pandemic interval
};

struct TestDomain {
  std::string id;
  std::vector<std::size_t> members;  // indices into the test item list
};

// Hour mode yields 24 domains h00..h23, pandemic mode the 4 intervals,
// whole mode one domain "all". Domains may be empty. Throws InvalidInput when
// an item lacks the key the mode needs.
std::vector<TestDomain> partition_test_domains(std::span<const DomainKey> keys,
                                               const TestDomainSpec& spec);

// ---------------------------------------------------------------------------
// Synthetic worlds

struct TrafficSynthConfig {
  std::uint64_t seed = 1;
  std::size_t n_days = 40;
  double noise_sd = 0.3;
  // Amplitude of the time-of-day swing in the upstream/downstream volume
  // gradient. Zero gives a world without hour-dependent shift.
  double shift_amplitude = 1.0;
};

struct TrafficWorld {
  TrafficDataset dataset;
  std::string sensor_id;  // the chain's interior (degree-2) node
  RdParams truth;         // RD-UQ parameters driving that sensor
};

// Three-sensor chain S0 -> S1 -> S2. A daily demand cycle drives volumes;
// S1's speed follows the RD-UQ equation with Gaussian noise.
TrafficWorld synth_traffic(const TrafficSynthConfig& config);

struct EpidemicSynthConfig {
  std::uint64_t seed = 1;
  std::size_t n_years = 20;
  std::size_t n_locations = 4;
  double noise_sd = 0.05;  // log-scale multiplicative observation noise
  double population = 1e6;
  EpiParams truth{EpiVariant::SIR, 0.9, 0.4};
};

struct EpidemicWorld {
  std::vector<EpidemicSeries> series;
  EpiParams truth;
};

// Yearly SIR epidemics (R reset every 52 weeks) seeded by a few imported
// cases at each year start, observed with log-normal noise.
EpidemicWorld synth_epidemic(const EpidemicSynthConfig& config);

}  // namespace shiftcp
