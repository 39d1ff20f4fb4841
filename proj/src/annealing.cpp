#include "adaann/annealing.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "adaann/errors.hpp"

namespace adaann {

namespace {

constexpr double kSnap = 1e-9;
// u_hat.w sits above -1 analytically; allow for rounding in the dot product.
constexpr double kGuardSlack = 1e-9;
const double kNaN = std::numeric_limits<double>::quiet_NaN();

AnnealState advance(const AnnealState& state, double eps, double s2) {
  if (!(state.t < 1.0)) throw UsageError("annealing: temperature already at 1");
  if (!(eps > 0.0)) throw UsageError("annealing: increment must be positive");
  AnnealState next = state;
  double t = state.t + eps;
  if (t >= 1.0 - kSnap) t = 1.0;
  next.eps = t - state.t;
  next.t = t;
  next.k = state.k + 1;
  const std::size_t updates = next.trace.empty() ? 0 : next.trace.back().updates;
  if (!next.trace.empty()) {
    next.trace.back().eps = next.eps;
    next.trace.back().s2 = s2;
  }
  next.trace.push_back({next.k, t, 0.0, kNaN, updates});
  return next;
}

AnnealState initial_state(double t0) {
  AnnealState state;
  state.t = t0;
  state.trace.push_back({0, t0, 0.0, kNaN, 0});
  return state;
}

}  // namespace

std::string to_string(SchedulerKind kind) {
  switch (kind) {
    case SchedulerKind::kNone: return "none";
    case SchedulerKind::kLinear: return "linear";
    case SchedulerKind::kAdaAnn: return "adaann";
  }
  return "?";
}

SchedulerKind scheduler_kind_from_string(const std::string& name) {
  if (name == "none") return SchedulerKind::kNone;
  if (name == "linear") return SchedulerKind::kLinear;
  if (name == "adaann") return SchedulerKind::kAdaAnn;
  throw ConfigError("scheduler.kind", "expected none, linear or adaann, got '" + name + "'");
}

void SchedulerConfig::validate() const {
  if (kind != SchedulerKind::kNone && !(t0 > 0.0 && t0 <= 1.0)) {
    throw ConfigError("scheduler.t0", "must lie in (0, 1]");
  }
  if (kind == SchedulerKind::kLinear && !(eps > 0.0)) throw ConfigError("scheduler.eps", "must be positive");
  if (kind == SchedulerKind::kAdaAnn) {
    if (!(tau > 0.0)) throw ConfigError("scheduler.tau", "must be positive");
    if (M < 2) throw ConfigError("scheduler.M", "must be at least 2");
  }
  if (!(eps_max > 0.0)) throw ConfigError("scheduler.eps_max", "must be positive");
  if (!(eps_min > 0.0)) throw ConfigError("scheduler.eps_min", "must be positive");
  if (N == 0) throw ConfigError("scheduler.N", "must be positive");
  if (T1 > 0 && N1 == 0) throw ConfigError("scheduler.N1", "must be positive");
}

AnnealState linear_next(const AnnealState& state, double eps) { return advance(state, eps, kNaN); }

// A few extreme log p values can make s2 so large that t + eps rounds back to t.
constexpr double kMinRelativeStep = 1e-6;

AnnealState adaann_next(const AnnealState& state, double s2, double tau, double eps_max) {
  double eps = s2 > 0.0 ? tau / std::sqrt(s2) : eps_max;
  eps = std::clamp(eps, kMinRelativeStep * state.t, eps_max);
  return advance(state, eps, s2);
}

double sample_variance(std::span<const double> values) {
  if (values.size() < 2) throw UsageError("sample variance needs at least 2 values");
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return ss / (n - 1.0);
}

VarianceEstimate variance_logp(const TargetDensity& target, std::span<const double> samples) {
  const std::size_t d = target.dim();
  std::vector<double> values;
  values.reserve(samples.size() / d);
  for (std::size_t i = 0; i + d <= samples.size(); i += d) {
    const double lp = target.log_p(samples.subspan(i, d));
    if (std::isfinite(lp)) values.push_back(lp);
  }
  if (values.size() < 2) return {0.0, values.size()};
  return {sample_variance(values), values.size()};
}

KlExpansion kl_expansion_oracle(const TargetDensity& target, double t, double eps,
                                std::pair<double, double> interval, std::size_t points) {
  if (target.dim() != 1) throw OracleFailure("KL oracle needs a 1-D target");
  if (points < 3 || !(interval.second > interval.first)) throw OracleFailure("KL oracle: bad grid");
  if (!(t > 0.0)) throw OracleFailure("KL oracle: t must be positive");

  std::vector<double> ell(points);
  const double h = (interval.second - interval.first) / static_cast<double>(points - 1);
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < points; ++i) {
    const double z = interval.first + h * static_cast<double>(i);
    ell[i] = target.log_p(std::span(&z, 1));
    top = std::max(top, t * ell[i]);
  }
  if (!std::isfinite(top)) throw OracleFailure("KL oracle: target vanishes on the grid");

  std::vector<double> w(points);
  for (std::size_t i = 0; i < points; ++i) w[i] = std::isfinite(ell[i]) ? std::exp(t * ell[i] - top) : 0.0;
  // Mass must have decayed at both ends, otherwise the interval truncates p^t.
  if (w.front() > 1e-12 || w.back() > 1e-12) {
    throw OracleFailure("KL oracle: tempered density not negligible at the interval ends");
  }
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  double mean = 0.0;
  for (std::size_t i = 0; i < points; ++i) {
    w[i] /= total;
    if (w[i] > 0.0) mean += w[i] * ell[i];
  }
  double var = 0.0;
  double mgf = 0.0;  // E[exp(eps * delta)] - 1
  for (std::size_t i = 0; i < points; ++i) {
    if (w[i] == 0.0) continue;
    const double delta = ell[i] - mean;
    var += w[i] * delta * delta;
    mgf += w[i] * std::expm1(eps * delta);
  }
  KlExpansion out;
  out.exact = std::log1p(mgf);
  out.predictor = 0.5 * eps * eps * var;
  if (!std::isfinite(out.exact)) throw OracleFailure("KL oracle: non-finite quadrature");
  return out;
}

void check_schedule(const AnnealState& state) {
  if (state.trace.empty()) throw UsageError("schedule: empty trace");
  for (std::size_t i = 0; i + 1 < state.trace.size(); ++i) {
    const auto& a = state.trace[i];
    const auto& b = state.trace[i + 1];
    if (!(b.t > a.t)) throw UsageError("schedule: t not strictly increasing at k=" + std::to_string(b.k));
    if (!(a.eps > 0.0)) throw UsageError("schedule: non-positive increment at k=" + std::to_string(a.k));
  }
  if (state.trace.back().t != 1.0) throw UsageError("schedule: final temperature is not 1");
}

TrainingResult run_annealed_training(const SchedulerConfig& config, FlowStack& stack,
                                     const TargetDensity& target, const OptimizerSpec& optimizer,
                                     Rng& rng, const TrainingHooks& hooks) {
  config.validate();
  if (stack.dim() != target.dim()) throw UsageError("flow and target dimensions differ");

  TrainingResult result;
  Adam adam(stack.params().size(), AdamConfig{optimizer.lr});
  const bool planar = stack.spec().kind == FlowKind::kPlanar;
  const auto start = std::chrono::steady_clock::now();
  std::size_t iteration = 0;
  AnnealState state = initial_state(config.kind == SchedulerKind::kNone ? 1.0 : config.t0);

  auto train = [&](std::size_t iterations, std::size_t batch_size, double t, bool refine) {
    const LrSchedule schedule = optimizer.refine_schedule();
    ParamVector& params = stack.params();
    for (std::size_t i = 0; i < iterations; ++i) {
      adam.set_lr(refine ? lr_at(schedule, i) : optimizer.lr);
      const FlowBatch batch = stack.sample(batch_size, rng);
      params.zero_grads();
      const LossReport report = free_energy_with_gradient(stack, batch, target, t, params.grads());
      adam.step(params.values(), params.grads());
      if (planar && stack.min_planar_uw() < -1.0 - kGuardSlack) {
        throw DegenerateJacobian("planar invertibility guard violated");
      }
      ++result.parameter_updates;
      if (hooks.record_losses) {
        const std::chrono::duration<double, std::milli> elapsed = std::chrono::steady_clock::now() - start;
        result.losses.push_back({iteration, t, report.value, elapsed.count()});
      }
      if (hooks.on_update) hooks.on_update(iteration, t, report.value);
      ++iteration;
    }
    state.trace.back().updates = result.parameter_updates;
  };

  try {
    train(config.T0, config.N, state.t, false);
    while (state.t < 1.0) {
      if (config.kind == SchedulerKind::kLinear) {
        state = linear_next(state, config.eps);
      } else {
        const FlowBatch probe = stack.sample(config.M, rng);
        const VarianceEstimate est = variance_logp(target, probe.zL);
        state = est.used >= 2 ? adaann_next(state, est.s2, config.tau, config.eps_max)
                              : advance(state, config.eps_min, kNaN);
      }
      train(config.T, config.N, state.t, false);
    }
    if (config.T1 > 0) {
      train(config.T1, config.N1, 1.0, true);
    }
    const FlowBatch last = stack.sample(config.T1 > 0 ? config.N1 : config.N, rng);
    result.final_loss = free_energy(last, target, 1.0);
  } catch (NumericError& e) {
    e.attach_context(state.k, state.t);
    throw;
  }
  check_schedule(state);
  result.schedule = std::move(state);
  return result;
}

void write_schedule_csv(const AnnealState& state, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out.precision(17);
  out << "k,t,eps,s2,updates\n";
  for (const auto& r : state.trace) {
    out << r.k << ',' << r.t << ',' << r.eps << ',';
    if (std::isnan(r.s2)) {
      out << "nan";
    } else {
      out << r.s2;
    }
    out << ',' << r.updates << '\n';
  }
}

}  // namespace adaann
