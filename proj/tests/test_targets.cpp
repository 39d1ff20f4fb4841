#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <vector>

#include <doctest.h>

#include "adaann/errors.hpp"
#include "adaann/targets.hpp"

using namespace adaann;

namespace {

const std::vector<double> kLorenzTruth = {10.0, 8.0 / 3.0, 28.0};
const std::vector<double> kHivTruth = {1.2, 0.8, 1.5};

double lp(const TargetDensity& t, std::vector<double> z) { return t.log_p(z); }

void check_gradient(const TargetDensity& target, std::vector<double> z, double h, double tol) {
  std::vector<double> g(z.size());
  target.log_p_grad(z, g);
  for (std::size_t j = 0; j < z.size(); ++j) {
    std::vector<double> up = z, down = z;
    up[j] += h;
    down[j] -= h;
    const double fd = (target.log_p(up) - target.log_p(down)) / (2.0 * h);
    CAPTURE(j);
    CHECK(std::abs(g[j] - fd) / (std::abs(g[j]) + h) < tol);
  }
}

// Trapezoid rule over a box.
double mass_1d(const TargetDensity& t, double lo, double hi, std::size_t n) {
  const double h = (hi - lo) / static_cast<double>(n);
  double s = 0.0;
  for (std::size_t i = 0; i <= n; ++i) {
    const double w = (i == 0 || i == n) ? 0.5 : 1.0;
    s += w * std::exp(lp(t, {lo + h * static_cast<double>(i)}));
  }
  return s * h;
}

}  // namespace

TEST_CASE("bimodal target values") {
  const BimodalTarget t;
  const double peak = std::log(0.954);
  CHECK(lp(t, {-2.0 + std::sqrt(3.0)}) == doctest::Approx(peak).epsilon(1e-14));
  CHECK(lp(t, {-2.0 - std::sqrt(3.0)}) == doctest::Approx(peak).epsilon(1e-14));
  CHECK(peak == doctest::Approx(-0.04709).epsilon(1e-4));
  CHECK(lp(t, {-2.0}) == doctest::Approx(peak - 9.0).epsilon(1e-15));
  check_gradient(t, {0.3}, 1e-6, 1e-7);
  REQUIRE(t.modes().size() == 2);
}

TEST_CASE("one-dimensional Gaussian mixture") {
  const GaussianMixture1d single(0.0, 0.0);
  CHECK(lp(single, {0.0}) == doctest::Approx(std::log(1.0 / std::sqrt(std::numbers::pi / 8.0))).epsilon(1e-14));

  const auto sym = GaussianMixture1d::with_separation(3.0, ModePlacement::kSymmetric);
  std::mt19937_64 gen(1);
  std::uniform_real_distribution<double> unif(-6.0, 6.0);
  for (int i = 0; i < 50; ++i) {
    const double z = unif(gen);
    CHECK(lp(sym, {z}) == lp(sym, {-z}));
  }

  // Grid argmax for mu = 4 sits at +-2.
  const auto wide = GaussianMixture1d::with_separation(4.0, ModePlacement::kSymmetric);
  double best_pos = 0.0, best_neg = 0.0, v_pos = -1e300, v_neg = -1e300;
  for (double z = -5.0; z <= 5.0; z += 1e-4) {
    const double v = lp(wide, {z});
    if (z > 0 && v > v_pos) { v_pos = v; best_pos = z; }
    if (z < 0 && v > v_neg) { v_neg = v; best_neg = z; }
  }
  CHECK(best_pos == doctest::Approx(2.0).epsilon(1e-3));
  CHECK(best_neg == doctest::Approx(-2.0).epsilon(1e-3));

  const auto asym = GaussianMixture1d::with_separation(4.0, ModePlacement::kAsymmetric);
  const auto modes = asym.modes();
  REQUIRE(modes.size() == 2);
  CHECK(std::abs(modes[0][0]) + std::abs(modes[1][0]) == doctest::Approx(4.0));
  CHECK(std::min(std::abs(modes[0][0]), std::abs(modes[1][0])) == 0.0);
  check_gradient(asym, {-1.7}, 1e-6, 1e-7);
}

TEST_CASE("two-dimensional Gaussian mixture") {
  const GaussianMixture2d m0(0.0);
  const auto modes = m0.modes();
  REQUIRE(modes.size() == 2);
  CHECK(std::abs(modes[0][0]) == 1.0);
  CHECK(modes[0][1] == 0.0);

  const GaussianMixture2d m1(1.0);
  std::mt19937_64 gen(2);
  std::uniform_real_distribution<double> unif(-4.0, 4.0);
  for (int i = 0; i < 50; ++i) {
    const double a = unif(gen), b = unif(gen);
    CHECK(lp(m1, {a, b}) == lp(m1, {-a, b}));
  }
  const double expected = std::log(8.0 / std::numbers::pi + 8.0 / std::numbers::pi * std::exp(-64.0 * 4.0));
  CHECK(lp(m1, {2.0, 1.0}) == doctest::Approx(expected).epsilon(1e-14));
  CHECK(lp(m1, {2.0, 1.0}) == doctest::Approx(std::log(8.0 / std::numbers::pi)).epsilon(1e-14));
  check_gradient(m1, {0.4, 0.9}, 1e-6, 1e-7);
  // Far from both modes the log-sum-exp must not underflow to -inf.
  CHECK(std::isfinite(lp(m1, {40.0, -40.0})));
}

TEST_CASE("analytic targets have finite positive mass") {
  CHECK(mass_1d(BimodalTarget(), -8.0, 4.0, 20000) > 0.0);
  CHECK(std::isfinite(mass_1d(BimodalTarget(), -8.0, 4.0, 20000)));
  const auto g = GaussianMixture1d::with_separation(2.0, ModePlacement::kSymmetric);
  const auto [lo, hi] = *g.quadrature_interval();
  CHECK(mass_1d(g, lo, hi, 20000) == doctest::Approx(1.0).epsilon(1e-8));
  const GaussianTarget std1 = GaussianTarget::standard(1);
  CHECK(mass_1d(std1, -12.0, 12.0, 20000) == doctest::Approx(std::sqrt(2.0 * std::numbers::pi)).epsilon(1e-8));
  // Each 2-D component carries mass 1/2.
  const GaussianMixture2d m(0.5);
  const double h = 0.01;
  double s = 0.0;
  for (double a = -4.0; a <= 4.0; a += h)
    for (double b = -3.0; b <= 4.0; b += h) s += std::exp(lp(m, {a, b}));
  CHECK(s * h * h == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("Lorenz posterior on noise-free data") {
  Rng rng = make_rng(0);
  const Dataset data = lorenz_dataset(kLorenzTruth, 0.0, rng);
  CHECK(data.size() == 30);
  CHECK(data.components() == 3);
  const LorenzPosterior post(data, 0.001);
  CHECK(post.log_p(kLorenzTruth) == 0.0);
  CHECK(post.log_p(kLorenzTruth) > lp(post, {11.0, 8.0 / 3.0, 28.0}));
  for (std::size_t j = 0; j < 3; ++j) {
    for (double sgn : {-1.0, 1.0}) {
      std::vector<double> th = kLorenzTruth;
      th[j] += sgn * 1e-3;
      CHECK(post.log_p(th) < 0.0);
    }
  }
  check_gradient(post, {10.1, 2.6, 27.9}, 1e-6, 1e-5);
  std::vector<double> g(3);
  post.log_p_grad(kLorenzTruth, g);
  for (double v : g) CHECK(v == 0.0);
}

TEST_CASE("Lorenz blow-up maps to -inf") {
  Rng rng = make_rng(0);
  const LorenzPosterior post(lorenz_dataset(kLorenzTruth, 0.0, rng), 0.001);
  const std::vector<double> wild = {-500.0, 1.0, 3000.0};
  std::vector<double> g(3, 1.0);
  const double v = post.log_p_grad(wild, g);
  CHECK(v == -std::numeric_limits<double>::infinity());
  CHECK(post.log_p(wild) == v);
  for (double x : g) CHECK(x == 0.0);
}

TEST_CASE("HIV posterior and its sign-flip twin") {
  Rng rng = make_rng(0);
  const Dataset data = hiv_dataset(kHivTruth, 0.0, rng);
  CHECK(data.size() == 40);
  CHECK(data.times.front() == doctest::Approx(0.05));
  CHECK(data.times.back() == doctest::Approx(2.0));
  const HivPosterior post(data, 0.0005, 0.05, {}, kHivTruth);
  CHECK(post.log_p(kHivTruth) == 0.0);
  for (std::size_t j = 0; j < 3; ++j) {
    for (double sgn : {-1.0, 1.0}) {
      std::vector<double> th = kHivTruth;
      th[j] += sgn * 1e-3;
      CHECK(post.log_p(th) < 0.0);
    }
  }
  std::mt19937_64 gen(6);
  std::uniform_real_distribution<double> unif(0.2, 2.0);
  for (int i = 0; i < 20; ++i) {
    const std::vector<double> th = {unif(gen), unif(gen), unif(gen)};
    CHECK(post.log_p(th) == post.log_p(std::vector<double>{-th[0], th[1], -th[2]}));
  }
  check_gradient(post, {1.1, 0.9, 1.4}, 1e-6, 1e-5);
  REQUIRE(post.modes().size() == 2);
  CHECK(post.modes()[1] == std::vector<double>{-1.2, 0.8, -1.5});
}

TEST_CASE("targets reject bad noise variance") {
  Rng rng = make_rng(0);
  CHECK_THROWS_AS(HivPosterior(hiv_dataset(kHivTruth, 0.0, rng), 0.0), ConfigError);
  CHECK_THROWS_AS(LorenzPosterior(lorenz_dataset(kLorenzTruth, 0.0, rng), -1.0), ConfigError);
}
