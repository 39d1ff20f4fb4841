#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <doctest.h>

#include "adaann/errors.hpp"
#include "adaann/optimizer.hpp"

using namespace adaann;

TEST_CASE("zero gradient leaves parameters unchanged") {
  Adam adam(3, AdamConfig{0.001});
  std::vector<double> p = {1.0, -2.0, 0.5};
  const std::vector<double> before = p;
  adam.step(p, std::vector<double>{0.0, 0.0, 0.0});
  CHECK(p == before);
  CHECK(adam.steps() == 1);
}

TEST_CASE("first step has magnitude lr") {
  Adam adam(1, AdamConfig{0.001});
  std::vector<double> p = {0.0};
  adam.step(p, std::vector<double>{1.0});
  CHECK(p[0] == doctest::Approx(-0.001).epsilon(1e-7));

  Adam neg(1, AdamConfig{0.001});
  std::vector<double> q = {0.0};
  neg.step(q, std::vector<double>{-250.0});
  CHECK(q[0] == doctest::Approx(0.001).epsilon(1e-7));
}

TEST_CASE("doubling the learning rate doubles the first step") {
  const std::vector<double> g = {0.3, -1.7};
  Adam a(2, AdamConfig{0.01});
  Adam b(2, AdamConfig{0.02});
  std::vector<double> pa = {0.0, 0.0}, pb = {0.0, 0.0};
  a.step(pa, g);
  b.step(pb, g);
  CHECK(pb[0] == 2.0 * pa[0]);
  CHECK(pb[1] == 2.0 * pa[1]);
}

TEST_CASE("Adam converges on a quadratic bowl") {
  // f = (x - 1)^2 + 10 (y + 2)^2
  Adam adam(2, AdamConfig{0.01});
  std::vector<double> p = {-3.0, 4.0};
  for (int i = 0; i < 5000; ++i) {
    const std::vector<double> g = {2.0 * (p[0] - 1.0), 20.0 * (p[1] + 2.0)};
    adam.step(p, g);
  }
  CHECK(std::abs(p[0] - 1.0) < 1e-4);
  CHECK(std::abs(p[1] + 2.0) < 1e-4);
  for (double v : adam.second_moment()) CHECK(v >= 0.0);
}

TEST_CASE("non-finite gradient is rejected without touching state") {
  Adam adam(3, AdamConfig{0.01});
  std::vector<double> p = {1.0, 2.0, 3.0};
  const std::vector<double> before = p;
  try {
    adam.step(p, std::vector<double>{0.1, std::numeric_limits<double>::quiet_NaN(), 0.2});
    FAIL("expected NumericOverflow");
  } catch (const NumericOverflow& e) {
    CHECK(std::string(e.what()).find('1') != std::string::npos);
  }
  CHECK(p == before);
  CHECK(adam.steps() == 0);
  for (double m : adam.first_moment()) CHECK(m == 0.0);
}

TEST_CASE("identical gradients give identical trajectories") {
  auto run = [] {
    Adam adam(2, AdamConfig{0.005});
    std::vector<double> p = {0.3, -0.4};
    for (int i = 0; i < 100; ++i) {
      adam.step(p, std::vector<double>{std::sin(p[0] + i), std::cos(p[1] * i)});
    }
    return p;
  };
  CHECK(run() == run());
}

TEST_CASE("step learning-rate decay") {
  const LrSchedule s{0.0005, 0.75, 500};
  CHECK(lr_at(s, 0) == 0.0005);
  CHECK(lr_at(s, 499) == 0.0005);
  CHECK(lr_at(s, 500) == doctest::Approx(0.000375).epsilon(1e-15));
  CHECK(lr_at(s, 1250) == doctest::Approx(0.00028125).epsilon(1e-15));
  CHECK(lr_at(LrSchedule{0.005, 0.5, 0}, 100000) == 0.005);
}

TEST_CASE("refinement schedule falls back to the base rate") {
  OptimizerSpec spec;
  spec.lr = 0.0005;
  spec.decay_gamma = 0.75;
  spec.decay_interval = 1000;
  CHECK(lr_at(spec.refine_schedule(), 1000) == doctest::Approx(0.000375).epsilon(1e-15));
  spec.refine_lr = 0.001;
  CHECK(lr_at(spec.refine_schedule(), 0) == 0.001);
}
