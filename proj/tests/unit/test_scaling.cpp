#include <doctest.h>

#include <cmath>

#include "softquant/coupling.hpp"
#include "softquant/errors.hpp"
#include "softquant/scaling.hpp"
#include "support.hpp"

using namespace softquant;
using namespace softquant::scaling;

namespace {

std::vector<std::pair<double, double>> planted(double exponent, double prefactor,
                                               const std::vector<double>& sizes, double noise,
                                               Rng& rng) {
  std::vector<std::pair<double, double>> pts;
  for (double n : sizes)
    pts.emplace_back(n, -prefactor * std::pow(n, exponent) * (1.0 + noise * rng.normal()));
  return pts;
}

// Normal equations solved by Cramer's rule on raw sums.
std::pair<double, double> cramer_fit(const std::vector<std::pair<double, double>>& pts) {
  double s1 = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (const auto& [n, e] : pts) {
    const double x = std::log10(n), y = std::log10(std::abs(e));
    s1 += 1, sx += x, sy += y, sxx += x * x, sxy += x * y;
  }
  const double det = s1 * sxx - sx * sx;
  return {(s1 * sxy - sx * sy) / det, (sxx * sy - sx * sxy) / det};
}

const std::vector<double> kSizes{100, 300, 1000, 3000, 10000, 30000, 100000};

}  // namespace

TEST_CASE("layer stats use the population standard deviation") {
  const double x[] = {1, 2, 3, 4};
  const auto s = layer_stats(x, "fc");
  CHECK(s.name == "fc");
  CHECK(s.n == 4);
  CHECK(s.sigma == doctest::Approx(1.118033988749895).epsilon(1e-15));
  const double one[] = {1.0};
  CHECK_THROWS_AS(layer_stats(one), InputError);
}

TEST_CASE("per-layer strength and range follow the size and spread laws") {
  const auto p = derive_params({{"big", 10000, 0.2}, {"small", 100, 0.05}}, 0.01, 0.5);
  REQUIRE(p.per_layer.size() == 2);
  CHECK(p.per_layer[0].h == doctest::Approx(2.290867652767775e-05).epsilon(1e-12));
  CHECK(p.per_layer[0].w == doctest::Approx(0.1));
  CHECK(p.per_layer[1].h == doctest::Approx(0.01 * std::pow(100.0, -0.66)).epsilon(1e-14));
  CHECK(p.per_layer[1].w == doctest::Approx(0.025));
  CHECK(p.find("small") == &p.per_layer[1]);
  CHECK(p.find("none") == nullptr);
  CHECK(p.warnings.empty());
}

TEST_CASE("zero-spread layers are excluded with a warning") {
  const auto p = derive_params({{"flat", 50, 0.0}, {"ok", 50, 1.0}}, 1.0, 0.5);
  CHECK_FALSE(p.per_layer[0].coupled);
  CHECK(p.per_layer[1].coupled);
  CHECK(p.warnings.size() == 1);
  CHECK_THROWS_AS(derive_params({}, -1.0, 0.5), ConfigError);
  CHECK_THROWS_AS(derive_params({}, 1.0, 0.0), ConfigError);
}

TEST_CASE("h_l N_l^alpha is invariant across layer sizes") {
  Rng rng(3);
  std::vector<LayerStats> stats;
  for (int i = 0; i < 30; ++i)
    stats.push_back({"l" + std::to_string(i), 2 + rng.below(1000000), rng.uniform(0.01, 1.0)});
  const double alpha = rng.uniform(0.1, 1.5);
  const auto p = derive_params(stats, 0.7, 0.3, alpha);
  for (const auto& lp : p.per_layer)
    CHECK(lp.h * std::pow(static_cast<double>(lp.n), alpha) == doctest::Approx(0.7).epsilon(1e-12));
}

TEST_CASE("noiseless power laws are recovered exactly") {
  Rng rng(1);
  for (double k : {1.0, 1.66, 2.0}) {
    const auto fit = fit_power_law(planted(k, 3.5, kSizes, 0.0, rng));
    CHECK(fit.exponent == doctest::Approx(k).epsilon(1e-12));
    CHECK(fit.intercept == doctest::Approx(std::log10(3.5)).epsilon(1e-10));
    CHECK(fit.mse < 1e-24);
  }
}

TEST_CASE("power-law fit agrees with the normal-equation solution") {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const auto pts = planted(rng.uniform(0.5, 2.5), rng.uniform(0.1, 10), kSizes, 0.2, rng);
    const auto fit = fit_power_law(pts);
    const auto [slope, icept] = cramer_fit(pts);
    CHECK(fit.exponent == doctest::Approx(slope).epsilon(1e-10));
    CHECK(fit.intercept == doctest::Approx(icept).epsilon(1e-9).scale(1.0));
  }
}

TEST_CASE("one percent multiplicative noise stays within 0.02 of the exponent") {
  Rng rng(7);
  for (int trial = 0; trial < 100; ++trial)
    for (double k : {1.0, 1.66, 2.0})
      CHECK(std::abs(fit_power_law(planted(k, 2.0, kSizes, 0.01, rng)).exponent - k) <= 0.02);
}

TEST_CASE("nonpositive points are dropped with warnings") {
  std::vector<std::pair<double, double>> pts{{10, -10}, {100, -100}, {1000, -1000}, {50, 0.0}};
  const auto fit = fit_power_law(pts);
  CHECK(fit.points.size() == 3);
  CHECK(fit.warnings.size() == 1);
  CHECK(fit.exponent == doctest::Approx(1.0));
  pts.resize(2);
  CHECK_THROWS_AS(fit_power_law(pts), InputError);
  std::vector<std::pair<double, double>> same{{10, -1}, {10, -2}, {10, -3}};
  CHECK_THROWS_AS(fit_power_law(same), InputError);
}

TEST_CASE("extensive potential agrees between pairwise and histogram routes") {
  auto m = nn::make_model({nn::dense("a", 20, 30), nn::dense("b", 30, 40), nn::dense("c", 40, 5)},
                          9);
  const auto params = derive_params(model_stats(m), 1.0, 0.5);
  const auto exact = extensive_potential(m, params);
  const auto binned = extensive_potential(m, params, 0);
  REQUIRE(exact.size() == 3);
  for (std::size_t i = 0; i < exact.size(); ++i) {
    CHECK(exact[i].n == m.layers[i].weights.size());
    CHECK(exact[i].energy < 0.0);
    CHECK(testing::rel_err(binned[i].energy, exact[i].energy) < 1e-2);
  }
  m.layers[1].spec.couple = false;
  m.layers[2].spec.couple = false;
  CHECK_THROWS_AS(extensive_potential(m, derive_params(model_stats(m), 1.0, 0.5)), InputError);
}

TEST_CASE("uniform weights give roughly N^2 energy with range tied to spread") {
  // For i.i.d. weights with w_l = w sigma_l the pair energy grows as N^2,
  // so the fitted exponent on independent layers is near 2.
  Rng rng(5);
  std::vector<std::pair<double, double>> pts;
  for (std::size_t n : {200u, 400u, 800u, 1600u}) {
    const auto x = testing::normal_vector(n, 1.0, rng);
    const auto s = layer_stats(x);
    pts.emplace_back(static_cast<double>(n),
                     coupling::pairwise_coupling_energy(x, coupling::TriangularWell(0.5 * s.sigma)));
  }
  CHECK(fit_power_law(pts).exponent == doctest::Approx(2.0).epsilon(0.02));
}
