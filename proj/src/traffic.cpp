#include "shiftcp/traffic.hpp"

#include <algorithm>
#include <cmath>

#include "shiftcp/errors.hpp"

namespace shiftcp {

std::string to_string(RdVariant v) { return v == RdVariant::U ? "RD-U" : "RD-UQ"; }

RdVariant rd_variant_from_string(const std::string& s) {
  if (s == "RD-U") return RdVariant::U;
  if (s == "RD-UQ") return RdVariant::UQ;
  throw InvalidInput("unknown traffic model '" + s + "' (expected RD-U or RD-UQ)");
}

const SensorNode* SensorGraph::find(const std::string& id) const {
  for (const auto& n : nodes) {
    if (n.id == id) return &n;
  }
  return nullptr;
}

SensorGraph filter_degree2(const SensorGraph& graph) {
  SensorGraph out;
  for (const auto& n : graph.nodes) {
    if (n.upstream.size() == 1 && n.downstream.size() == 1) out.nodes.push_back(n);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Parameters

RdParams RdParams::zeros(RdVariant variant, std::size_t n_up, std::size_t n_down) {
  RdParams p;
  p.variant = variant;
  p.rho_u.assign(n_up, 0.0);
  p.sigma_u.assign(n_down, 0.0);
  if (variant == RdVariant::UQ) {
    p.rho_q.assign(n_up, 0.0);
    p.sigma_q.assign(n_down, 0.0);
  }
  return p;
}

std::size_t RdParams::parameter_count() const noexcept {
  return rho_u.size() + rho_q.size() + sigma_u.size() + sigma_q.size() + 2;
}

std::vector<double> RdParams::flatten() const {
  std::vector<double> flat;
  flat.reserve(parameter_count());
  flat.insert(flat.end(), rho_u.begin(), rho_u.end());
  flat.insert(flat.end(), rho_q.begin(), rho_q.end());
  flat.insert(flat.end(), sigma_u.begin(), sigma_u.end());
  flat.insert(flat.end(), sigma_q.begin(), sigma_q.end());
  flat.push_back(d);
  flat.push_back(r);
  return flat;
}

void RdParams::assign(std::span<const double> flat) {
  if (flat.size() != parameter_count()) throw InvalidInput("parameter vector has the wrong size");
  auto it = flat.begin();
  for (auto* block : {&rho_u, &rho_q, &sigma_u, &sigma_q}) {
    for (auto& v : *block) v = *it++;
  }
  d = *it++;
  r = *it;
}

// ---------------------------------------------------------------------------
// Prediction

namespace {

void check_input(const RdParams& p, const RdInput& in) {
  if (in.du_up.size() != p.n_up() || in.du_down.size() != p.n_down()) {
    throw InvalidInput("speed deltas missing for some neighbours");
  }
  if (p.variant == RdVariant::UQ &&
      (in.dq_up.size() != p.n_up() || in.dq_down.size() != p.n_down())) {
    throw InvalidInput("volume deltas missing for some neighbours");
  }
}

struct Terms {
  double diffusion;  // linear part including d
  double reaction;   // tanh argument including r
};

Terms evaluate_terms(const RdParams& p, const RdInput& in) {
  Terms t{p.d, p.r};
  for (std::size_t j = 0; j < p.n_up(); ++j) t.diffusion += p.rho_u[j] * in.du_up[j];
  for (std::size_t j = 0; j < p.n_down(); ++j) t.reaction += p.sigma_u[j] * in.du_down[j];
  if (p.variant == RdVariant::UQ) {
    for (std::size_t j = 0; j < p.n_up(); ++j) t.diffusion += p.rho_q[j] * in.dq_up[j];
    for (std::size_t j = 0; j < p.n_down(); ++j) t.reaction += p.sigma_q[j] * in.dq_down[j];
  }
  return t;
}

}  // namespace

double rd_u_predict(const RdParams& params, const RdInput& input) {
  if (params.variant != RdVariant::U) throw InvalidInput("rd_u_predict needs RD-U parameters");
  check_input(params, input);
  const auto t = evaluate_terms(params, input);
  return t.diffusion + std::tanh(t.reaction);
}

double rd_uq_predict(const RdParams& params, const RdInput& input) {
  if (params.variant != RdVariant::UQ) throw InvalidInput("rd_uq_predict needs RD-UQ parameters");
  check_input(params, input);
  const auto t = evaluate_terms(params, input);
  return t.diffusion + std::tanh(t.reaction);
}

double rd_predict(const RdParams& params, const RdInput& input) {
  return params.variant == RdVariant::U ? rd_u_predict(params, input)
                                        : rd_uq_predict(params, input);
}

std::vector<double> rd_features(RdVariant variant, const RdInput& input) {
  std::vector<double> x;
  x.insert(x.end(), input.du_up.begin(), input.du_up.end());
  if (variant == RdVariant::UQ) x.insert(x.end(), input.dq_up.begin(), input.dq_up.end());
  x.insert(x.end(), input.du_down.begin(), input.du_down.end());
  if (variant == RdVariant::UQ) x.insert(x.end(), input.dq_down.begin(), input.dq_down.end());
  return x;
}

// ---------------------------------------------------------------------------
// Density buckets

DensityBuckets::DensityBuckets(double k1_, double k2_) : k1(k1_), k2(k2_) {
  if (!(k1 > 0.0 && k1 < k2 && std::isfinite(k2))) {
    throw InvalidInput("density thresholds need 0 < k1 < k2");
  }
}

int DensityBuckets::bucket_of(double k) const noexcept {
  if (k < k1) return 0;
  if (k <= k2) return 1;
  return 2;
}

DensityBuckets tertile_thresholds(std::span<const RdSample> samples) {
  std::vector<double> k;
  for (const auto& s : samples) {
    if (std::isfinite(s.density)) k.push_back(s.density);
  }
  if (k.size() < 3) throw InvalidInput("too few finite densities for tertile thresholds");
  std::sort(k.begin(), k.end());
  return DensityBuckets(k[k.size() / 3], k[(2 * k.size()) / 3]);
}

DensitySplit density_split(std::span<const RdSample> samples, const DensityBuckets& thresholds) {
  DensitySplit out;
  for (const auto& s : samples) {
    if (!std::isfinite(s.density)) ++out.stopped;
    out.buckets[static_cast<std::size_t>(thresholds.bucket_of(s.density))].push_back(s);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Loss and gradient

double rd_loss(const RdParams& params, std::span<const RdSample> samples) {
  if (samples.empty()) throw InvalidInput("loss needs at least one sample");
  double total = 0.0;
  for (const auto& s : samples) {
    const double e = rd_predict(params, s.input) - s.target;
    total += e * e;
  }
  return total / static_cast<double>(samples.size());
}

std::vector<double> rd_loss_gradient(const RdParams& params, std::span<const RdSample> samples) {
  if (samples.empty()) throw InvalidInput("gradient needs at least one sample");
  RdParams g = RdParams::zeros(params.variant, params.n_up(), params.n_down());
  const bool uq = params.variant == RdVariant::UQ;
  const double scale = 2.0 / static_cast<double>(samples.size());
  for (const auto& s : samples) {
    check_input(params, s.input);
    const auto t = evaluate_terms(params, s.input);
    const double th = std::tanh(t.reaction);
    const double e = scale * (t.diffusion + th - s.target);
    const double er = e * (1.0 - th * th);
    for (std::size_t j = 0; j < params.n_up(); ++j) {
      g.rho_u[j] += e * s.input.du_up[j];
      if (uq) g.rho_q[j] += e * s.input.dq_up[j];
    }
    for (std::size_t j = 0; j < params.n_down(); ++j) {
      g.sigma_u[j] += er * s.input.du_down[j];
      if (uq) g.sigma_q[j] += er * s.input.dq_down[j];
    }
    g.d += e;
    g.r += er;
  }
  return g.flatten();
}

// ---------------------------------------------------------------------------
// Fitting

namespace {

double rms(std::span<const RdSample> samples, auto field, std::size_t j) {
  double acc = 0.0;
  for (const auto& s : samples) {
    const double v = (s.input.*field)[j];
    acc += v * v;
  }
  const double out = std::sqrt(acc / static_cast<double>(samples.size()));
  return out > 0.0 ? out : 1.0;
}

}  // namespace

RdFitResult fit_rd(RdVariant variant, std::span<const RdSample> samples,
                   const RdFitOptions& options) {
  if (samples.empty()) throw InvalidInput("cannot fit on an empty training set");
  if (!(options.step_size > 0.0)) throw InvalidInput("step size must be positive");
  const std::size_t n_up = samples.front().input.du_up.size();
  const std::size_t n_down = samples.front().input.du_down.size();
  RdParams probe = RdParams::zeros(variant, n_up, n_down);
  for (const auto& s : samples) check_input(probe, s.input);

  RdFitResult result;
  if (samples.size() < 10 * probe.parameter_count()) {
    result.warnings.push_back("only " + std::to_string(samples.size()) + " samples for " +
                              std::to_string(probe.parameter_count()) + " parameters");
  }

  // Rescale each regressor to unit RMS; a coefficient c' in scaled units
  // corresponds to c'/scale in data units.
  RdParams scales = RdParams::zeros(variant, n_up, n_down);
  for (std::size_t j = 0; j < n_up; ++j) {
    scales.rho_u[j] = rms(samples, &RdInput::du_up, j);
    if (variant == RdVariant::UQ) scales.rho_q[j] = rms(samples, &RdInput::dq_up, j);
  }
  for (std::size_t j = 0; j < n_down; ++j) {
    scales.sigma_u[j] = rms(samples, &RdInput::du_down, j);
    if (variant == RdVariant::UQ) scales.sigma_q[j] = rms(samples, &RdInput::dq_down, j);
  }
  // Flat design rows: diffusion regressors then reaction regressors, matching
  // the flatten() layout.
  const bool uq = variant == RdVariant::UQ;
  const std::size_t pd = uq ? 2 * n_up : n_up;
  const std::size_t pr = uq ? 2 * n_down : n_down;
  const std::size_t width = pd + pr;
  const std::size_t n = samples.size();
  const auto scale_flat = scales.flatten();
  std::vector<double> design(n * width);
  std::vector<double> target(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto x = rd_features(variant, samples[i].input);
    for (std::size_t k = 0; k < width; ++k) design[i * width + k] = x[k] / scale_flat[k];
    target[i] = samples[i].target;
  }

  std::vector<double> theta(width + 2, 0.0);
  std::vector<double> grad(width + 2);
  const auto evaluate = [&] {
    std::fill(grad.begin(), grad.end(), 0.0);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double* row = design.data() + i * width;
      double diffusion = theta[width];
      double reaction = theta[width + 1];
      for (std::size_t k = 0; k < pd; ++k) diffusion += theta[k] * row[k];
      for (std::size_t k = pd; k < width; ++k) reaction += theta[k] * row[k];
      const double th = std::tanh(reaction);
      const double e = diffusion + th - target[i];
      const double er = e * (1.0 - th * th);
      total += e * e;
      for (std::size_t k = 0; k < pd; ++k) grad[k] += e * row[k];
      for (std::size_t k = pd; k < width; ++k) grad[k] += er * row[k];
      grad[width] += e;
      grad[width + 1] += er;
    }
    const double inv = 1.0 / static_cast<double>(n);
    for (auto& g : grad) g *= 2.0 * inv;
    return total * inv;
  };

  double loss = evaluate();
  std::size_t iter = 0;
  for (; iter < options.max_iters; ++iter) {
    for (std::size_t k = 0; k < theta.size(); ++k) theta[k] -= options.step_size * grad[k];
    const double next = evaluate();
    if (!std::isfinite(next)) {
      throw FitFailure("reaction-diffusion fit diverged at iteration " + std::to_string(iter + 1) +
                           " (last finite loss " + std::to_string(loss) + ")",
                       iter + 1, loss);
    }
    const double improvement = loss - next;
    loss = next;
    if (improvement >= 0.0 && improvement < options.tolerance) {
      result.converged = true;
      ++iter;
      break;
    }
  }

  std::vector<double> data_units = theta;
  for (std::size_t k = 0; k + 2 < data_units.size(); ++k) data_units[k] /= scale_flat[k];
  result.params = RdParams::zeros(variant, n_up, n_down);
  result.params.assign(data_units);
  result.loss = loss;
  result.iterations = iter;
  return result;
}

double RdSensorModel::predict(const RdSample& sample) const {
  if (thresholds && !bucketed.empty()) {
    const auto b = static_cast<std::size_t>(thresholds->bucket_of(sample.density));
    return rd_predict(bucketed[b], sample.input);
  }
  return rd_predict(global, sample.input);
}

RdSensorModel fit_sensor_model(const std::string& node_id, RdVariant variant,
                               std::span<const RdSample> train,
                               const RdSensorFitOptions& options) {
  RdSensorModel model;
  model.node_id = node_id;
  model.variant = variant;
  auto global = fit_rd(variant, train, options.optimizer);
  model.global = global.params;
  for (auto& w : global.warnings) model.warnings.push_back(node_id + ": " + w);
  if (!global.converged) {
    model.warnings.push_back(node_id + ": optimizer stopped at the iteration limit");
  }
  if (variant != RdVariant::UQ || !options.density_buckets) return model;

  try {
    model.thresholds = options.thresholds ? *options.thresholds : tertile_thresholds(train);
  } catch (const InvalidInput& e) {
    model.warnings.push_back(node_id + ": density buckets disabled (" + e.what() + ")");
    return model;
  }
  const auto split = density_split(train, *model.thresholds);
  if (split.stopped > 0) {
    model.warnings.push_back(node_id + ": " + std::to_string(split.stopped) +
                             " stopped-traffic samples routed to the high-density bucket");
  }
  for (std::size_t b = 0; b < 3; ++b) {
    const auto& subset = split.buckets[b];
    if (subset.size() < options.min_bucket_samples) {
      model.warnings.push_back(node_id + ": bucket " + std::to_string(b) +
                               " too small, using the unbucketed fit");
      model.bucketed.push_back(model.global);
    } else {
      auto fit = fit_rd(variant, subset, options.optimizer);
      model.bucketed.push_back(fit.params);
    }
    model.bucketed.back().bucket = static_cast<int>(b);
  }
  return model;
}

}  // namespace shiftcp
