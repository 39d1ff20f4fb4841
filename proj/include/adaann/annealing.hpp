#pragma once

// Temperature schedules for annealed variational inference and the training
// driver that walks a flow through the sequence of tempered targets p^t.

#include <cstddef>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "adaann/flows.hpp"
#include "adaann/loss.hpp"
#include "adaann/optimizer.hpp"
#include "adaann/targets.hpp"

namespace adaann {

enum class SchedulerKind { kNone, kLinear, kAdaAnn };

std::string to_string(SchedulerKind kind);
SchedulerKind scheduler_kind_from_string(const std::string& name);

struct SchedulerConfig {
  SchedulerKind kind = SchedulerKind::kAdaAnn;
  double t0 = 0.01;
  double eps = 1e-4;        // linear increment
  double tau = 0.01;        // KL tolerance (AdaAnn)
  std::size_t M = 1000;     // variance-estimator samples
  std::size_t T0 = 500;     // iterations at t0
  std::size_t T = 5;        // iterations per later temperature
  std::size_t T1 = 0;       // refinement iterations at t = 1
  std::size_t N = 100;      // batch size before refinement
  std::size_t N1 = 100;     // batch size during refinement
  double eps_max = 0.1;
  double eps_min = 1e-6;    // used when fewer than 2 finite log p values remain

  void validate() const;
};

/// One visited temperature. `eps` is the increment taken after training at
/// `t` (0 on the terminal t = 1 row); `s2` is the variance estimate behind
/// an AdaAnn increment (NaN otherwise); `updates` counts parameter updates
/// performed up to and including training at `t`.
struct AnnealRecord {
  std::size_t k = 0;
  double t = 0.0;
  double eps = 0.0;
  double s2 = 0.0;
  std::size_t updates = 0;
};

struct AnnealState {
  double t = 0.0;
  double eps = 0.0;
  std::size_t k = 0;
  std::vector<AnnealRecord> trace;

  /// Number of temperature increments taken so far.
  std::size_t increments() const { return trace.empty() ? 0 : trace.size() - 1; }
};

/// t <- min(t + eps, 1); sums within 1e-9 of 1 land exactly on 1.
AnnealState linear_next(const AnnealState& state, double eps);

/// eps = tau / sqrt(s2), capped at eps_max and at 1 - t, and at least 1e-6 t.
AnnealState adaann_next(const AnnealState& state, double s2, double tau, double eps_max = 0.1);

/// Unbiased sample variance (divisor M - 1).
double sample_variance(std::span<const double> values);

struct VarianceEstimate {
  double s2 = 0.0;
  std::size_t used = 0;  // finite log p values that entered the estimate
};

/// Sample variance of log p over the rows of `samples` (M x d); rows with
/// log p = -inf are dropped.
VarianceEstimate variance_logp(const TargetDensity& target, std::span<const double> samples);

struct KlExpansion {
  double exact = 0.0;      // KL(p^t || p^(t+eps)) for the normalized tempered densities
  double predictor = 0.0;  // (eps^2 / 2) Var_{p^t}[log p]
};

/// Both sides of the second-order KL expansion for a 1-D target, by
/// quadrature on `points` equally spaced nodes over `interval`. Throws
/// OracleFailure when the tempered density has not decayed at the ends.
KlExpansion kl_expansion_oracle(const TargetDensity& target, double t, double eps,
                                std::pair<double, double> interval, std::size_t points = 1000);

struct TrainingResult {
  AnnealState schedule;
  std::vector<LossRecord> losses;
  std::size_t parameter_updates = 0;
  LossReport final_loss;
};

struct TrainingHooks {
  bool record_losses = true;
  /// Called after every parameter update with (global iteration, t, loss).
  std::function<void(std::size_t, double, double)> on_update;
};

/// T0 iterations at t0, T per later temperature, then T1 refinement
/// iterations at t = 1 with batch N1. Numeric failures are rethrown with the
/// (k, t_k) at which they happened.
TrainingResult run_annealed_training(const SchedulerConfig& config, FlowStack& stack,
                                     const TargetDensity& target, const OptimizerSpec& optimizer,
                                     Rng& rng, const TrainingHooks& hooks = {});

/// CSV with header `k,t,eps,s2,updates`.
void write_schedule_csv(const AnnealState& state, const std::filesystem::path& path);

/// Throws UsageError unless t0 = t_0 < t_1 < ... < t_K = 1 and every
/// non-terminal eps_k is positive.
void check_schedule(const AnnealState& state);

}  // namespace adaann
