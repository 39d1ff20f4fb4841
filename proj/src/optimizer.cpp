#include "adaann/optimizer.hpp"

#include <cmath>
#include <string>

#include "adaann/errors.hpp"

namespace adaann {

double lr_at(const LrSchedule& schedule, std::size_t iteration) {
  if (schedule.interval == 0) return schedule.base;
  const auto decays = static_cast<double>(iteration / schedule.interval);
  return schedule.base * std::pow(schedule.gamma, decays);
}

Adam::Adam(std::size_t n, AdamConfig config) : config_(config), m_(n, 0.0), v_(n, 0.0) {}

void Adam::step(std::span<double> params, std::span<const double> grads) {
  if (params.size() != m_.size() || grads.size() != m_.size()) {
    throw UsageError("adam: buffer length mismatch");
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!std::isfinite(grads[i])) {
      throw NumericOverflow("non-finite gradient at parameter " + std::to_string(i));
    }
  }
  ++steps_;
  const double b1 = config_.beta1;
  const double b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = b1 * m_[i] + (1.0 - b1) * grads[i];
    v_[i] = b2 * v_[i] + (1.0 - b2) * grads[i] * grads[i];
    const double m_hat = m_[i] / c1;
    const double v_hat = v_[i] / c2;
    params[i] -= config_.lr * m_hat / (std::sqrt(v_hat) + config_.epsilon);
  }
}

}  // namespace adaann
