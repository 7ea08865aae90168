#pragma once

// Reaction-diffusion traffic-speed predictors fitted per sensor.
//
//   RD-U : du_i = sum_{j in N^d} rho_ij du_ij + d_i
//                 + tanh(sum_{j in N^r} sigma_ij du_ij + r_i)
//   RD-UQ: the same with volume deltas dq_ij entering both sums through
//          their own coefficients.
//
// du_i(t) = u_i(t + dt) - u_i(t) and du_ij(t) = u_j(t) - u_i(t), likewise
// for volumes. N^d holds upstream (diffusion) neighbours, N^r downstream
// (reaction) neighbours.

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace shiftcp {

enum class RdVariant { U, UQ };

std::string to_string(RdVariant v);
RdVariant rd_variant_from_string(const std::string& s);

struct SensorNode {
  std::string id;
  std::vector<std::string> upstream;    // N^d
  std::vector<std::string> downstream;  // N^r
};

struct SensorGraph {
  std::vector<SensorNode> nodes;

  const SensorNode* find(const std::string& id) const;
};

// Nodes with exactly one upstream and one downstream neighbour.
SensorGraph filter_degree2(const SensorGraph& graph);

// Neighbour deltas for one sensor at one time step, one entry per neighbour
// in graph order. Volume deltas are ignored by RD-U.
struct RdInput {
  std::vector<double> du_up;
  std::vector<double> dq_up;
  std::vector<double> du_down;
  std::vector<double> dq_down;
};

struct RdParams {
  RdVariant variant = RdVariant::U;
  std::vector<double> rho_u;
  std::vector<double> rho_q;  // empty for RD-U
  std::vector<double> sigma_u;
  std::vector<double> sigma_q;  // empty for RD-U
  double d = 0.0;
  double r = 0.0;
  int bucket = -1;  // density bucket (0 low, 1 medium, 2 high); -1 unbucketed

  static RdParams zeros(RdVariant variant, std::size_t n_up, std::size_t n_down);

  std::size_t n_up() const noexcept { return rho_u.size(); }
  std::size_t n_down() const noexcept { return sigma_u.size(); }
  std::size_t parameter_count() const noexcept;

  // Layout: rho_u, rho_q, sigma_u, sigma_q, d, r.
  std::vector<double> flatten() const;
  void assign(std::span<const double> flat);
};

// Both throw InvalidInput when a neighbour delta is missing or the variant
// does not match.
double rd_u_predict(const RdParams& params, const RdInput& input);
double rd_uq_predict(const RdParams& params, const RdInput& input);
double rd_predict(const RdParams& params, const RdInput& input);

// Regressor vector used for density-ratio estimation: speed deltas (and
// volume deltas for RD-UQ), upstream first.
std::vector<double> rd_features(RdVariant variant, const RdInput& input);

struct RdSample {
  RdInput input;
  double target = 0.0;   // observed du_i(t)
  double density = 0.0;  // k_i(t) = q_i(t) / u_i(t); +inf when u_i(t) == 0
  std::size_t time_index = 0;
};

struct DensityBuckets {
  double k1 = 0.0;
  double k2 = 0.0;

  // Throws InvalidInput unless 0 < k1 < k2.
  DensityBuckets(double k1, double k2);

  // 0: [0, k1), 1: [k1, k2], 2: (k2, inf).
  int bucket_of(double k) const noexcept;
};

// Empirical tertiles of the sample densities. Throws InvalidInput when they
// do not form valid thresholds (e.g. all densities equal).
DensityBuckets tertile_thresholds(std::span<const RdSample> samples);

struct DensitySplit {
  std::array<std::vector<RdSample>, 3> buckets;
  std::size_t stopped = 0;  // samples with u = 0, routed to the high bucket
};

DensitySplit density_split(std::span<const RdSample> samples, const DensityBuckets& thresholds);

double rd_loss(const RdParams& params, std::span<const RdSample> samples);
// Gradient of rd_loss in RdParams::flatten() layout.
std::vector<double> rd_loss_gradient(const RdParams& params, std::span<const RdSample> samples);

struct RdFitOptions {
  double step_size = 1e-2;
  std::size_t max_iters = 10000;
  double tolerance = 1e-9;
};

struct RdFitResult {
  RdParams params;
  double loss = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
  std::vector<std::string> warnings;
};

// Full-batch gradient descent on the mean squared error from zero
// initialization. Features are rescaled to unit RMS internally; the returned
// parameters are in data units. Throws FitFailure if the loss diverges.
RdFitResult fit_rd(RdVariant variant, std::span<const RdSample> samples,
                   const RdFitOptions& options = {});

// Fitted model for one sensor: RD-U has one parameter set; RD-UQ has one per
// density bucket plus an unbucketed fallback for empty buckets.
struct RdSensorModel {
  std::string node_id;
  RdVariant variant = RdVariant::U;
  std::optional<DensityBuckets> thresholds;
  RdParams global;
  std::vector<RdParams> bucketed;  // indexed by bucket, empty if unbucketed
  std::vector<std::string> warnings;

  double predict(const RdSample& sample) const;
};

struct RdSensorFitOptions {
  RdFitOptions optimizer;
  bool density_buckets = true;                  // RD-UQ only
  std::optional<DensityBuckets> thresholds;     // default: training tertiles
  std::size_t min_bucket_samples = 20;
};

RdSensorModel fit_sensor_model(const std::string& node_id, RdVariant variant,
                               std::span<const RdSample> train,
                               const RdSensorFitOptions& options = {});

}  // namespace shiftcp
