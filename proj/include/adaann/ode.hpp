#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "adaann/errors.hpp"
#include "adaann/random.hpp"

namespace adaann {

struct OdeSystem {
  std::size_t state_dim = 0;
  std::size_t param_dim = 0;
  std::function<void(std::span<const double> x, std::span<const double> p, std::span<double> dx)> rhs;
};

struct Trajectory {
  double dt = 0.0;
  std::size_t dim = 0;
  std::vector<double> times;
  std::vector<double> states;  // (steps + 1) x dim, row 0 is the initial condition

  std::size_t size() const { return times.size(); }
  std::span<const double> row(std::size_t i) const { return {states.data() + i * dim, dim}; }
};

/// Classical fixed-step RK4. Throws BlowupError on the first non-finite state.
Trajectory rk4_integrate(const OdeSystem& system, std::span<const double> params,
                         std::span<const double> x0, double dt, std::size_t steps);

// ---------------------------------------------------------------------------
// Right-hand sides, generic over the scalar so the same code runs on doubles
// and on gradient-graph nodes.

/// x' = s(y - x), y' = x(r - z) - y, z' = xy - bz.
template <class T>
std::array<T, 3> lorenz_rhs(const T& x, const T& y, const T& z, const T& s, const T& r, const T& b) {
  return {s * (y - x), x * (r - z) - y, x * y - b * z};
}

template <class T>
std::array<T, 3> hiv_rhs(const T& x1, const T& x2, const T& x3, const T& p1, const T& p2,
                         const T& p3, const T& p4, const T& p5) {
  return {p1 - p2 * x1 - p3 * x1 * x3, p3 * x1 * x3 - p4 * x2, p1 * p4 * x2 - p5 * x3};
}

/// One RK4 step for a 3-state system; `rhs` maps a state to its derivative.
template <class T, class Rhs>
std::array<T, 3> rk4_step3(const Rhs& rhs, const std::array<T, 3>& x, double dt) {
  auto shifted = [&](const std::array<T, 3>& k, double h) {
    return std::array<T, 3>{x[0] + k[0] * h, x[1] + k[1] * h, x[2] + k[2] * h};
  };
  const auto k1 = rhs(x);
  const auto k2 = rhs(shifted(k1, 0.5 * dt));
  const auto k3 = rhs(shifted(k2, 0.5 * dt));
  const auto k4 = rhs(shifted(k3, dt));
  std::array<T, 3> out = x;
  for (std::size_t i = 0; i < 3; ++i) {
    out[i] = x[i] + (k1[i] + k2[i] * 2.0 + k3[i] * 2.0 + k4[i]) * (dt / 6.0);
  }
  return out;
}

/// Lorenz parameters are ordered (s, b, r).
OdeSystem lorenz_system();

/// HIV parameters are ordered (p1, p2, p3, p4, p5).
OdeSystem hiv_system();

/// Fixed HIV constants.
struct HivConstants {
  double p3 = 4.1;
  double p4 = 10.2;
  double p5 = 2.6;
  double x10 = 0.0;
  double x30 = 1.0;
};

/// Observations on a uniform grid: `values` is n x components.
struct Dataset {
  std::vector<std::string> columns;  // component names
  std::vector<double> times;
  std::vector<double> values;

  std::size_t size() const { return times.size(); }
  std::size_t components() const { return columns.size(); }
  std::span<const double> row(std::size_t i) const {
    return {values.data() + i * components(), components()};
  }
};

struct ObservationPlan {
  std::size_t stride = 1;  // keep every `stride`-th solution point
  std::size_t offset = 1;  // starting at solution index `offset`
  std::vector<std::size_t> components;  // observed state indices
  std::vector<std::string> names;
};

/// Subsamples the trajectory per `plan` and adds N(0, noise_var) noise.
Dataset make_dataset(const Trajectory& trajectory, const ObservationPlan& plan, double noise_var,
                     Rng& rng);

void write_dataset(const Dataset& data, const std::filesystem::path& path);
Dataset read_dataset(const std::filesystem::path& path);

}  // namespace adaann
