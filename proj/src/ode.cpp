#include "adaann/ode.hpp"

#include <fstream>
#include <sstream>

namespace adaann {

Trajectory rk4_integrate(const OdeSystem& system, std::span<const double> params,
                         std::span<const double> x0, double dt, std::size_t steps) {
  if (!(dt > 0.0)) throw UsageError("rk4: dt must be positive");
  if (steps < 1) throw UsageError("rk4: need at least one step");
  const std::size_t n = system.state_dim;
  if (x0.size() != n) throw UsageError("rk4: initial state has wrong dimension");

  Trajectory traj;
  traj.dt = dt;
  traj.dim = n;
  traj.times.resize(steps + 1);
  traj.states.resize((steps + 1) * n);
  std::copy(x0.begin(), x0.end(), traj.states.begin());
  traj.times[0] = 0.0;

  std::vector<double> k1(n), k2(n), k3(n), k4(n), tmp(n);
  for (std::size_t step = 0; step < steps; ++step) {
    const std::span<const double> x(traj.states.data() + step * n, n);
    const std::span<double> next(traj.states.data() + (step + 1) * n, n);
    system.rhs(x, params, k1);
    for (std::size_t i = 0; i < n; ++i) tmp[i] = x[i] + k1[i] * (0.5 * dt);
    system.rhs(tmp, params, k2);
    for (std::size_t i = 0; i < n; ++i) tmp[i] = x[i] + k2[i] * (0.5 * dt);
    system.rhs(tmp, params, k3);
    for (std::size_t i = 0; i < n; ++i) tmp[i] = x[i] + k3[i] * dt;
    system.rhs(tmp, params, k4);
    for (std::size_t i = 0; i < n; ++i) {
      next[i] = x[i] + (k1[i] + k2[i] * 2.0 + k3[i] * 2.0 + k4[i]) * (dt / 6.0);
      if (!std::isfinite(next[i])) {
        throw BlowupError(step + 1, "rk4 state became non-finite at step " + std::to_string(step + 1));
      }
    }
    traj.times[step + 1] = static_cast<double>(step + 1) * dt;
  }
  return traj;
}

OdeSystem lorenz_system() {
  OdeSystem sys;
  sys.state_dim = 3;
  sys.param_dim = 3;
  sys.rhs = [](std::span<const double> x, std::span<const double> p, std::span<double> dx) {
    const auto d = lorenz_rhs(x[0], x[1], x[2], p[0], p[2], p[1]);
    std::copy(d.begin(), d.end(), dx.begin());
  };
  return sys;
}

OdeSystem hiv_system() {
  OdeSystem sys;
  sys.state_dim = 3;
  sys.param_dim = 5;
  sys.rhs = [](std::span<const double> x, std::span<const double> p, std::span<double> dx) {
    const auto d = hiv_rhs(x[0], x[1], x[2], p[0], p[1], p[2], p[3], p[4]);
    std::copy(d.begin(), d.end(), dx.begin());
  };
  return sys;
}

Dataset make_dataset(const Trajectory& trajectory, const ObservationPlan& plan, double noise_var,
                     Rng& rng) {
  if (noise_var < 0.0) throw UsageError("make_dataset: noise variance must be >= 0");
  if (plan.stride == 0) throw UsageError("make_dataset: stride must be positive");
  Dataset data;
  data.columns = plan.names;
  if (data.columns.size() != plan.components.size()) {
    data.columns.clear();
    for (std::size_t c : plan.components) data.columns.push_back("x" + std::to_string(c + 1));
  }
  std::normal_distribution<double> normal(0.0, 1.0);
  const double sd = std::sqrt(noise_var);
  for (std::size_t i = plan.offset; i < trajectory.size(); i += plan.stride) {
    data.times.push_back(trajectory.times[i]);
    const auto row = trajectory.row(i);
    for (std::size_t c : plan.components) {
      const double noise = noise_var > 0.0 ? sd * normal(rng) : 0.0;
      data.values.push_back(row[c] + noise);
    }
  }
  return data;
}

void write_dataset(const Dataset& data, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out.precision(17);
  out << "time";
  for (const auto& c : data.columns) out << ',' << c;
  out << '\n';
  for (std::size_t i = 0; i < data.size(); ++i) {
    out << data.times[i];
    for (double v : data.row(i)) out << ',' << v;
    out << '\n';
  }
}

Dataset read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("target.dataset", "cannot read " + path.string());
  Dataset data;
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("target.dataset", "empty dataset file");
  {
    std::stringstream header(line);
    std::string cell;
    std::getline(header, cell, ',');
    while (std::getline(header, cell, ',')) data.columns.push_back(cell);
  }
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream row(line);
    std::string cell;
    std::vector<double> cells;
    while (std::getline(row, cell, ',')) {
      try {
        cells.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw ConfigError("target.dataset", "bad number on line " + std::to_string(lineno));
      }
    }
    if (cells.size() != data.columns.size() + 1) {
      throw ConfigError("target.dataset", "wrong column count on line " + std::to_string(lineno));
    }
    data.times.push_back(cells[0]);
    data.values.insert(data.values.end(), cells.begin() + 1, cells.end());
  }
  return data;
}

}  // namespace adaann
