#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>
#include <vector>

#include "shiftcp/conformal.hpp"
#include "shiftcp/errors.hpp"
#include "shiftcp/traffic.hpp"

using namespace shiftcp;

namespace {

RdInput one_each(double du_up, double du_down, double dq_up = 0.0, double dq_down = 0.0) {
  return {{du_up}, {dq_up}, {du_down}, {dq_down}};
}

RdParams uq_params(double ru, double rq, double su, double sq, double d, double r) {
  RdParams p = RdParams::zeros(RdVariant::UQ, 1, 1);
  p.rho_u = {ru};
  p.rho_q = {rq};
  p.sigma_u = {su};
  p.sigma_q = {sq};
  p.d = d;
  p.r = r;
  return p;
}

// Written out term by term, independent of the library's accumulation order.
double uq_expression(const RdParams& p, const RdInput& x) {
  const double diffusion = p.rho_u[0] * x.du_up[0] + p.rho_q[0] * x.dq_up[0] +
                           p.rho_u[1] * x.du_up[1] + p.rho_q[1] * x.dq_up[1];
  const double reaction = p.sigma_u[0] * x.du_down[0] + p.sigma_q[0] * x.dq_down[0] + p.r;
  return diffusion + p.d + std::tanh(reaction);
}

std::vector<RdSample> generate(const RdParams& truth, std::size_t n, std::uint64_t seed,
                               double noise = 0.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z;
  std::vector<RdSample> out;
  for (std::size_t t = 0; t < n; ++t) {
    RdSample s;
    s.input = one_each(2.0 * z(rng), 2.0 * z(rng), 30.0 * z(rng), 30.0 * z(rng));
    s.target = rd_predict(truth, s.input) + noise * z(rng);
    s.density = 5.0 + std::abs(z(rng));
    s.time_index = t;
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

TEST_CASE("rd-u prediction") {
  RdParams p = RdParams::zeros(RdVariant::U, 1, 1);
  CHECK(rd_u_predict(p, one_each(3.0, -7.0)) == 0.0);
  p.rho_u = {1.0};
  CHECK(rd_u_predict(p, one_each(2.5, 9.0)) == 2.5);
  p.rho_u = {0.0};
  p.sigma_u = {10.0};
  CHECK(rd_u_predict(p, one_each(0.0, 1.0)) == doctest::Approx(std::tanh(10.0)).epsilon(1e-15));
  CHECK(rd_u_predict(p, one_each(0.0, 1.0)) > 0.99999);
  CHECK_THROWS_AS(rd_u_predict(p, RdInput{{1.0}, {}, {}, {}}), InvalidInput);
  CHECK_THROWS_AS(rd_uq_predict(p, one_each(0, 0)), InvalidInput);
}

TEST_CASE("rd-uq prediction") {
  CHECK(rd_uq_predict(uq_params(0, 1, 0, 0, 0, 0), one_each(5.0, 5.0, -3.0, 8.0)) == -3.0);
  CHECK_THROWS_AS(rd_uq_predict(uq_params(0, 1, 0, 0, 0, 0), RdInput{{1}, {}, {1}, {}}),
                  InvalidInput);

  std::mt19937_64 rng(47);
  std::normal_distribution<double> z;
  for (int t = 0; t < 200; ++t) {
    RdParams p = RdParams::zeros(RdVariant::UQ, 2, 1);
    for (auto* block : {&p.rho_u, &p.rho_q, &p.sigma_u, &p.sigma_q}) {
      for (auto& v : *block) v = z(rng);
    }
    p.d = z(rng);
    p.r = z(rng);
    const RdInput x{{z(rng), z(rng)}, {z(rng), z(rng)}, {z(rng)}, {z(rng)}};
    CHECK(rd_uq_predict(p, x) == doctest::Approx(uq_expression(p, x)).epsilon(1e-12));

    // Volume coefficients zeroed: identical to RD-U on the speed part.
    RdParams u = RdParams::zeros(RdVariant::U, 2, 1);
    u.rho_u = p.rho_u;
    u.sigma_u = p.sigma_u;
    u.d = p.d;
    u.r = p.r;
    RdParams nested = p;
    std::fill(nested.rho_q.begin(), nested.rho_q.end(), 0.0);
    std::fill(nested.sigma_q.begin(), nested.sigma_q.end(), 0.0);
    CHECK(rd_uq_predict(nested, x) == rd_u_predict(u, x));

    double diffusion = p.d;
    for (std::size_t j = 0; j < 2; ++j) diffusion += p.rho_u[j] * x.du_up[j] + p.rho_q[j] * x.dq_up[j];
    CHECK(std::abs(rd_uq_predict(p, x) - diffusion) <= 1.0 + 1e-12);
  }
}

TEST_CASE("parameter flattening round-trips") {
  RdParams p = uq_params(1, 2, 3, 4, 5, 6);
  const auto flat = p.flatten();
  CHECK(flat == std::vector<double>{1, 2, 3, 4, 5, 6});
  RdParams q = RdParams::zeros(RdVariant::UQ, 1, 1);
  q.assign(flat);
  CHECK(q.flatten() == flat);
  CHECK_THROWS_AS(q.assign(std::vector<double>{1, 2}), InvalidInput);
  CHECK(RdParams::zeros(RdVariant::U, 1, 1).parameter_count() == 4);
}

TEST_CASE("degree-2 filter") {
  SensorGraph chain{{{"a", {}, {"b"}}, {"b", {"a"}, {"c"}}, {"c", {"b"}, {}}}};
  const auto kept = filter_degree2(chain);
  REQUIRE(kept.nodes.size() == 1);
  CHECK(kept.nodes[0].id == "b");
  CHECK(filter_degree2(SensorGraph{}).nodes.empty());
  SensorGraph star{{{"hub", {"a", "b"}, {"c", "d"}}, {"a", {}, {"hub"}}, {"c", {"hub"}, {}}}};
  CHECK(filter_degree2(star).nodes.empty());
}

TEST_CASE("density buckets") {
  std::vector<RdSample> samples(300);
  std::mt19937_64 rng(53);
  std::exponential_distribution<double> e(0.1);
  for (auto& s : samples) s.density = e(rng);
  const auto th = tertile_thresholds(samples);
  const auto split = density_split(samples, th);
  std::size_t total = 0;
  for (const auto& b : split.buckets) {
    CHECK(std::abs(static_cast<double>(b.size()) - 100.0) <= 1.0);
    total += b.size();
  }
  CHECK(total == samples.size());

  // Zero volume everywhere: every density is 0, below any valid threshold.
  std::vector<RdSample> empty_road(10);
  const auto low = density_split(empty_road, DensityBuckets(1.0, 2.0));
  CHECK(low.buckets[0].size() == 10);
  CHECK_THROWS_AS(tertile_thresholds(empty_road), InvalidInput);

  std::vector<RdSample> stopped(2);
  stopped[0].density = kInfinity;
  stopped[1].density = 1.5;
  const auto s = density_split(stopped, DensityBuckets(1.0, 2.0));
  CHECK(s.stopped == 1);
  CHECK(s.buckets[2].size() == 1);
  CHECK(s.buckets[1].size() == 1);
  CHECK_THROWS_AS(DensityBuckets(2.0, 1.0), InvalidInput);
  CHECK_THROWS_AS(DensityBuckets(0.0, 1.0), InvalidInput);
}

TEST_CASE("loss gradient matches central differences") {
  std::mt19937_64 rng(59);
  std::normal_distribution<double> z;
  const auto data = generate(uq_params(0.5, 0.01, 0.3, -0.02, 0.1, 0.2), 50, 61, 0.5);
  std::size_t bad = 0;
  for (int t = 0; t < 100; ++t) {
    for (RdVariant v : {RdVariant::U, RdVariant::UQ}) {
      RdParams p = RdParams::zeros(v, 1, 1);
      auto theta = p.flatten();
      for (auto& x : theta) x = 0.5 * z(rng);
      if (v == RdVariant::UQ) {
        theta[1] *= 0.05;
        theta[3] *= 0.05;
      }
      p.assign(theta);
      std::vector<RdSample> samples = data;
      if (v == RdVariant::U) {
        for (auto& s : samples) s.input.dq_up.clear(), s.input.dq_down.clear();
      }
      const auto g = rd_loss_gradient(p, samples);
      for (std::size_t k = 0; k < theta.size(); ++k) {
        const double h = 1e-6 * std::max(1.0, std::abs(theta[k]));
        auto up = theta, down = theta;
        up[k] += h;
        down[k] -= h;
        RdParams pu = p, pd = p;
        pu.assign(up);
        pd.assign(down);
        const double fd = (rd_loss(pu, samples) - rd_loss(pd, samples)) / (2.0 * h);
        const double rel = std::abs(fd - g[k]) / std::max(std::abs(g[k]), 1e-8);
        if (rel >= 1e-4) ++bad;
      }
    }
  }
  CHECK(bad == 0);
}

TEST_CASE("zero-noise recovery") {
  const RdParams truth = uq_params(0.5, 0.02, 0.3, -0.01, 0.1, 0.2);
  const auto data = generate(truth, 2000, 67);
  // Loss-change stop tightened: the default stops while d and tanh(r) still trade off.
  const RdFitOptions tight{1e-2, 10000, 1e-12};
  const auto fit = fit_rd(RdVariant::UQ, data, tight);
  const auto want = truth.flatten();
  const auto got = fit.params.flatten();
  for (std::size_t k = 0; k < want.size(); ++k) {
    CHECK(std::abs(got[k] - want[k]) <= 1e-2 * std::abs(want[k]));
  }
  CHECK(fit.loss < 1e-6);
  const auto again = fit_rd(RdVariant::UQ, data, tight);
  CHECK(again.params.flatten() == got);
  CHECK(again.iterations == fit.iterations);
}

TEST_CASE("constant zero target stays at zero") {
  auto data = generate(uq_params(0, 0, 0, 0, 0, 0), 100, 71);
  const auto fit = fit_rd(RdVariant::UQ, data);
  for (double v : fit.params.flatten()) CHECK(std::abs(v) < 1e-12);
  CHECK(std::abs(fit.params.d + std::tanh(fit.params.r)) < 1e-12);
  CHECK(fit.converged);
}

TEST_CASE("fit diagnostics") {
  const auto small = generate(uq_params(0.5, 0.02, 0.3, -0.01, 0.1, 0.2), 20, 73, 0.1);
  const auto fit = fit_rd(RdVariant::UQ, small, {1e-2, 100, 1e-9});
  CHECK_FALSE(fit.warnings.empty());
  CHECK(fit.iterations == 100);
  CHECK_FALSE(fit.converged);
  CHECK_THROWS_AS(fit_rd(RdVariant::UQ, small, {50.0, 1000, 1e-9}), FitFailure);
  CHECK_THROWS_AS(fit_rd(RdVariant::U, std::vector<RdSample>{}), InvalidInput);
}

TEST_CASE("sensor model routes by density bucket") {
  auto data = generate(uq_params(0.5, 0.02, 0.3, -0.01, 0.1, 0.2), 600, 79, 0.1);
  for (std::size_t i = 0; i < data.size(); ++i) data[i].density = static_cast<double>(i % 30);
  const auto model = fit_sensor_model("b", RdVariant::UQ, data);
  REQUIRE(model.thresholds);
  REQUIRE(model.bucketed.size() == 3);
  for (std::size_t b = 0; b < 3; ++b) CHECK(model.bucketed[b].bucket == static_cast<int>(b));
  RdSample s = data[0];
  s.density = 0.5 * (model.thresholds->k1 + model.thresholds->k2);
  CHECK(model.predict(s) == rd_predict(model.bucketed[1], s.input));
  s.density = kInfinity;
  CHECK(model.predict(s) == rd_predict(model.bucketed[2], s.input));

  const auto u = fit_sensor_model("b", RdVariant::U, [&] {
    auto copy = data;
    for (auto& x : copy) x.input.dq_up.clear(), x.input.dq_down.clear();
    return copy;
  }());
  CHECK(u.bucketed.empty());
  CHECK_FALSE(u.thresholds);

  RdSensorFitOptions opts;
  opts.min_bucket_samples = 1000;
  const auto fallback = fit_sensor_model("b", RdVariant::UQ, data, opts);
  CHECK(fallback.bucketed[0].flatten() == fallback.global.flatten());
}
