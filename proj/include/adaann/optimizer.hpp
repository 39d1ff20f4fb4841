#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

namespace adaann {

/// Piecewise-constant step decay: base * gamma^(iteration / interval).
struct LrSchedule {
  double base = 1e-3;
  double gamma = 1.0;
  std::size_t interval = 0;  // 0 disables decay
};

double lr_at(const LrSchedule& schedule, std::size_t iteration);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class Adam {
 public:
  Adam(std::size_t n, AdamConfig config = {});

  /// Bias-corrected Adam update in place. Throws NumericOverflow naming the
  /// first non-finite gradient entry; nothing is modified in that case.
  void step(std::span<double> params, std::span<const double> grads);

  void set_lr(double lr) { config_.lr = lr; }
  double lr() const { return config_.lr; }
  std::size_t steps() const { return steps_; }
  std::span<const double> first_moment() const { return m_; }
  std::span<const double> second_moment() const { return v_; }

 private:
  AdamConfig config_;
  std::vector<double> m_;
  std::vector<double> v_;
  std::size_t steps_ = 0;
};

/// Learning rates for one training run: constant during annealing, optional
/// step decay (counted from the start of refinement) at t = 1.
struct OptimizerSpec {
  double lr = 1e-3;
  std::optional<double> refine_lr;
  double decay_gamma = 1.0;
  std::size_t decay_interval = 0;

  LrSchedule refine_schedule() const { return {refine_lr.value_or(lr), decay_gamma, decay_interval}; }
};

}  // namespace adaann
