#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include <doctest.h>

#include "adaann/annealing.hpp"
#include "adaann/errors.hpp"

using namespace adaann;

namespace {

AnnealState start(double t0) {
  AnnealState s;
  s.t = t0;
  s.trace.push_back({0, t0, 0.0, std::numeric_limits<double>::quiet_NaN(), 0});
  return s;
}

// KL(N(0, 1/t) || N(0, 1/(t + eps))).
double gaussian_kl(double t, double eps) { return 0.5 * (eps / t - std::log1p(eps / t)); }

FlowSpec planar_spec(std::size_t layers) {
  FlowSpec spec;
  spec.dim = 1;
  spec.layers = layers;
  spec.base = {{0.0}, {4.0}};
  spec.planar_init = 1.0;
  return spec;
}

}  // namespace

TEST_CASE("linear schedule") {
  AnnealState s = linear_next(start(0.5), 0.5);
  CHECK(s.t == 1.0);
  CHECK(s.k == 1);

  s = start(0.01);
  for (int i = 0; i < 3; ++i) s = linear_next(s, 1e-4);
  CHECK(s.t == doctest::Approx(0.0103).epsilon(1e-12));

  s = start(0.01);
  while (s.t < 1.0) s = linear_next(s, 1e-4);
  CHECK(s.increments() == 9900);
  CHECK(s.trace.back().t == 1.0);
  check_schedule(s);
  CHECK_THROWS_AS(linear_next(s, 1e-4), UsageError);
}

TEST_CASE("sample variance") {
  CHECK(sample_variance(std::vector<double>{1.0, 2.0, 3.0}) == 1.0);
  CHECK(sample_variance(std::vector<double>{4.0, 4.0, 4.0, 4.0}) == 0.0);
  CHECK_THROWS_AS(sample_variance(std::vector<double>{1.0}), UsageError);
}

TEST_CASE("variance of log p drops samples outside the support") {
  const BimodalTarget target;
  const std::vector<double> z = {-2.0, 0.0, 1.0};
  const VarianceEstimate est = variance_logp(target, z);
  CHECK(est.used == 3);
  std::vector<double> lp;
  for (double v : z) lp.push_back(target.log_p(std::span(&v, 1)));
  CHECK(est.s2 == sample_variance(lp));
}

TEST_CASE("AdaAnn increments") {
  AnnealState s = adaann_next(start(0.2), 1.0, 0.01);
  CHECK(s.eps == doctest::Approx(0.01).epsilon(1e-12));
  CHECK(s.t == doctest::Approx(0.21).epsilon(1e-12));
  CHECK(s.trace.front().s2 == 1.0);
  CHECK(s.trace.front().eps == s.eps);

  // tau / sqrt(s2) = 0.02 from t = 0.995 lands exactly on 1.
  s = adaann_next(start(0.995), 0.25, 0.01);
  CHECK(s.t == 1.0);
  CHECK(s.eps == doctest::Approx(0.005).epsilon(1e-9));

  // Zero variance hits the cap.
  s = adaann_next(start(0.3), 0.0, 0.01, 0.1);
  CHECK(s.eps == doctest::Approx(0.1).epsilon(1e-12));
  s = adaann_next(start(0.3), 1e-12, 0.01, 0.1);
  CHECK(s.eps == doctest::Approx(0.1).epsilon(1e-12));

  // Gaussian target: s2 = 1 / (2 t^2) gives eps = tau t sqrt(2).
  for (double t : {0.05, 0.25, 0.6}) {
    const AnnealState g = adaann_next(start(t), 1.0 / (2.0 * t * t), 0.01);
    CHECK(g.eps == doctest::Approx(0.01 * t * std::sqrt(2.0)).epsilon(1e-12));
  }

  // An enormous variance still moves t.
  s = adaann_next(start(5e-5), 1e300, 0.005);
  CHECK(s.t > 5e-5);
  CHECK(s.eps == doctest::Approx(5e-11).epsilon(1e-12));
}

TEST_CASE("variance estimate for exact tempered Gaussian samples") {
  const double t = 0.25;
  const std::size_t m = 100000;
  std::mt19937_64 gen(2024);
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(t));
  std::vector<double> z(m);
  for (double& v : z) v = normal(gen);
  const GaussianTarget target = GaussianTarget::standard(1);
  const VarianceEstimate est = variance_logp(target, z);
  // log p = -Z^2 / 2 with Z^2 ~ chi2_1 / t: Var = 1 / (2 t^2), Var of S2 ~ (mu4 - s^4) / M.
  const double s2 = 1.0 / (2.0 * t * t);
  const double mu4 = 60.0 / (16.0 * std::pow(t, 4));  // chi2_1 has fourth central moment 60
  const double se = std::sqrt((mu4 - s2 * s2) / static_cast<double>(m));
  CHECK(std::abs(est.s2 - s2) < 3.0 * se);
}

TEST_CASE("KL expansion oracle") {
  const GaussianTarget gauss = GaussianTarget::standard(1);
  const std::pair<double, double> wide{-30.0, 30.0};
  const KlExpansion zero = kl_expansion_oracle(gauss, 0.5, 0.0, wide);
  CHECK(zero.exact == 0.0);
  CHECK(zero.predictor == 0.0);

  SUBCASE("Gaussian quadrature matches the closed form") {
    for (double t : {0.2, 0.5, 0.9}) {
      const KlExpansion kl = kl_expansion_oracle(gauss, t, 1e-2, wide, 4000);
      CHECK(kl.exact == doctest::Approx(gaussian_kl(t, 1e-2)).epsilon(1e-6));
      CHECK(kl.predictor == doctest::Approx(0.5e-4 / (2.0 * t * t)).epsilon(1e-6));
    }
  }
  SUBCASE("remainder is cubic") {
    const BimodalTarget bimodal;
    for (double t : {0.2, 0.5, 0.9}) {
      for (int which = 0; which < 2; ++which) {
        const TargetDensity& target = which == 0 ? static_cast<const TargetDensity&>(gauss) : bimodal;
        const auto interval = which == 0 ? wide : *bimodal.quadrature_interval();
        double eps = 1e-2;
        double prev = 0.0;
        for (int i = 0; i <= 3; ++i, eps /= 2.0) {
          const KlExpansion kl = kl_expansion_oracle(target, t, eps, interval);
          const double rem = std::abs(kl.exact - kl.predictor);
          if (i > 0) {
            CAPTURE(t);
            CAPTURE(which);
            CHECK(prev / rem >= 6.0);
            CHECK(prev / rem <= 10.0);
          }
          prev = rem;
        }
      }
    }
  }
  SUBCASE("truncated interval is refused") {
    CHECK_THROWS_AS(kl_expansion_oracle(gauss, 0.05, 1e-2, {-3.0, 3.0}), OracleFailure);
    CHECK_THROWS_AS(kl_expansion_oracle(GaussianMixture2d(0.0), 0.5, 1e-2, {-3.0, 3.0}), OracleFailure);
  }
}

TEST_CASE("schedule validation") {
  AnnealState s = start(0.2);
  CHECK_THROWS_AS(check_schedule(s), UsageError);  // does not end at 1
  s = linear_next(s, 0.8);
  check_schedule(s);
  s.trace[1].t = 0.2;
  CHECK_THROWS_AS(check_schedule(s), UsageError);
}

TEST_CASE("scheduler config validation") {
  SchedulerConfig c;
  c.tau = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = SchedulerConfig{};
  c.M = 1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = SchedulerConfig{};
  c.t0 = 1.5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.kind = SchedulerKind::kNone;
  c.validate();
  CHECK(scheduler_kind_from_string("adaann") == SchedulerKind::kAdaAnn);
  CHECK_THROWS_AS(scheduler_kind_from_string("cosine"), ConfigError);
}

TEST_CASE("plain VI leaves a single t = 1 row") {
  FlowStack stack(planar_spec(4));
  Rng rng = make_rng(1);
  stack.initialize(rng);
  SchedulerConfig c;
  c.kind = SchedulerKind::kNone;
  c.T0 = 30;
  OptimizerSpec opt;
  opt.lr = 0.005;
  const TrainingResult r = run_annealed_training(c, stack, BimodalTarget(), opt, rng);
  REQUIRE(r.schedule.trace.size() == 1);
  CHECK(r.schedule.trace[0].t == 1.0);
  CHECK(r.parameter_updates == 30);
  CHECK(r.losses.size() == 30);
}

TEST_CASE("annealed driver counts updates and ends at t = 1") {
  FlowStack stack(planar_spec(6));
  Rng rng = make_rng(2);
  stack.initialize(rng);
  SchedulerConfig c;
  c.kind = SchedulerKind::kLinear;
  c.t0 = 0.9;
  c.eps = 0.025;
  c.T0 = 10;
  c.T = 2;
  c.T1 = 7;
  c.N1 = 50;
  OptimizerSpec opt;
  opt.lr = 0.005;
  std::size_t calls = 0;
  TrainingHooks hooks;
  hooks.on_update = [&](std::size_t, double, double) { ++calls; };
  const TrainingResult r = run_annealed_training(c, stack, BimodalTarget(), opt, rng, hooks);
  CHECK(r.schedule.increments() == 4);
  CHECK(r.parameter_updates == 10 + 4 * 2 + 7);
  CHECK(calls == r.parameter_updates);
  CHECK(r.schedule.trace.back().t == 1.0);
  CHECK(r.schedule.trace[0].updates == 10);
  CHECK(r.schedule.trace.back().updates == 25);  // cumulative
  CHECK(r.losses.back().t == 1.0);
  check_schedule(r.schedule);
}

TEST_CASE("AdaAnn driver on a Gaussian target takes growing steps") {
  FlowSpec spec = planar_spec(0);  // base N(0, 4), no layers
  FlowStack stack(spec);
  Rng rng = make_rng(3);
  SchedulerConfig c;
  c.kind = SchedulerKind::kAdaAnn;
  c.t0 = 0.25;
  c.tau = 0.05;
  c.M = 5000;
  c.T0 = 0;
  c.T = 0;
  OptimizerSpec opt;
  const TrainingResult r = run_annealed_training(c, stack, GaussianTarget::standard(1), opt, rng);
  // q stays N(0, 4) = p^0.25, so s2 is about 8 throughout.
  const auto& first = r.schedule.trace.front();
  CHECK(first.s2 == doctest::Approx(8.0).epsilon(0.1));
  CHECK(first.eps == doctest::Approx(0.05 / std::sqrt(first.s2)).epsilon(1e-12));
  check_schedule(r.schedule);
}

TEST_CASE("numeric failures carry the step and temperature") {
  class Exploding final : public TargetDensity {
   public:
    std::string name() const override { return "exploding"; }
    std::size_t dim() const override { return 1; }
    double log_p(std::span<const double>) const override { return -std::numeric_limits<double>::infinity(); }
    double log_p_grad(std::span<const double> z, std::span<double> g) const override {
      g[0] = 0.0;
      return log_p(z);
    }
  };
  FlowStack stack(planar_spec(2));
  Rng rng = make_rng(4);
  SchedulerConfig c;
  c.kind = SchedulerKind::kLinear;
  c.t0 = 0.3;
  c.eps = 0.1;
  try {
    run_annealed_training(c, stack, Exploding(), OptimizerSpec{}, rng);
    FAIL("expected TargetUnderflow");
  } catch (const TargetUnderflow& e) {
    REQUIRE(e.step().has_value());
    CHECK(*e.step() == 0);
    CHECK(*e.temperature() == 0.3);
  }
}

TEST_CASE("schedule CSV") {
  AnnealState s = adaann_next(start(0.5), 4.0, 0.1);
  s = linear_next(s, 0.6);
  const auto path = std::filesystem::temp_directory_path() / "adaann_schedule_test.csv";
  write_schedule_csv(s, path);
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  CHECK(line == "k,t,eps,s2,updates");
  std::getline(in, line);
  CHECK(line == "0,0.5,0.050000000000000044,4,0");
  std::getline(in, line);
  CHECK(line.rfind("1,0.55000000000000004,0.44999999999999996,nan,", 0) == 0);
  std::getline(in, line);
  CHECK(line == "2,1,0,nan,0");
  std::filesystem::remove(path);
}
