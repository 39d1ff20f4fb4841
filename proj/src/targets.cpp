#include "adaann/targets.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numbers>

#include "adaann/autodiff.hpp"

namespace adaann {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
// Likelihoods or gradients beyond this size come from trajectories that have
// effectively blown up. Letting them through would also leave Adam's second
// moment so large that training stalls for hundreds of thousands of steps.
constexpr double kResolvable = 1e10;

double blowup_guard(double lp) { return std::isfinite(lp) && std::abs(lp) <= kResolvable ? lp : kNegInf; }

double log_sum_exp(double a, double b) {
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

std::vector<std::size_t> observation_steps(const Dataset& data, double dt) {
  std::vector<std::size_t> steps;
  for (double t : data.times) {
    const double idx = std::round(t / dt);
    if (idx < 1.0) throw ConfigError("target.dataset", "observation times must be positive");
    steps.push_back(static_cast<std::size_t>(idx));
  }
  if (!std::is_sorted(steps.begin(), steps.end())) {
    throw ConfigError("target.dataset", "observation times must be increasing");
  }
  return steps;
}

void fill_zero(std::span<double> g) { std::fill(g.begin(), g.end(), 0.0); }

// Likelihood graphs have a fixed structure for a given target, so each
// thread records one per target kind and replays it until another target
// instance asks for it.
struct LikelihoodTape {
  std::uint64_t owner = 0;
  Graph graph;
  NodeId root = 0;
};

double replay(LikelihoodTape& tape, std::span<const double> theta, std::span<double> grad) {
  try {
    tape.graph.forward(theta);
  } catch (const NumericOverflow&) {
    fill_zero(grad);
    return kNegInf;
  }
  tape.graph.backward(tape.root);
  for (std::size_t i = 0; i < grad.size(); ++i) {
    grad[i] = tape.graph.adjoint(tape.graph.inputs()[i]);
    if (!(std::abs(grad[i]) <= kResolvable)) {
      fill_zero(grad);
      return kNegInf;
    }
  }
  return blowup_guard(tape.graph.value(tape.root));
}

}  // namespace

std::uint64_t next_target_id() {
  static std::atomic<std::uint64_t> counter{0};
  return ++counter;
}
// --- bimodal ----------------------------------------------------------------

double BimodalTarget::log_p(std::span<const double> z) const {
  const double q = (z[0] + 2.0) * (z[0] + 2.0) - 3.0;
  return std::log(0.954) - q * q;
}

double BimodalTarget::log_p_grad(std::span<const double> z, std::span<double> grad) const {
  const double q = (z[0] + 2.0) * (z[0] + 2.0) - 3.0;
  grad[0] = -4.0 * q * (z[0] + 2.0);
  return std::log(0.954) - q * q;
}

std::vector<Point> BimodalTarget::modes() const {
  return {{-2.0 - std::sqrt(3.0)}, {-2.0 + std::sqrt(3.0)}};
}

// --- 1-D mixture --------------------------------------------------------------

GaussianMixture1d GaussianMixture1d::with_separation(double mu, ModePlacement placement) {
  if (placement == ModePlacement::kSymmetric) return {mu / 2.0, -mu / 2.0};
  return {mu, 0.0};
}

double GaussianMixture1d::log_p(std::span<const double> z) const {
  const double log_c = -std::log(2.0 * std::sqrt(std::numbers::pi / 8.0));
  const double a = -8.0 * (z[0] + mu1_) * (z[0] + mu1_);
  const double b = -8.0 * (z[0] + mu2_) * (z[0] + mu2_);
  return log_c + log_sum_exp(a, b);
}

double GaussianMixture1d::log_p_grad(std::span<const double> z, std::span<double> grad) const {
  const double a = -8.0 * (z[0] + mu1_) * (z[0] + mu1_);
  const double b = -8.0 * (z[0] + mu2_) * (z[0] + mu2_);
  const double m = std::max(a, b);
  const double wa = std::exp(a - m);
  const double wb = std::exp(b - m);
  grad[0] = (wa * (-16.0 * (z[0] + mu1_)) + wb * (-16.0 * (z[0] + mu2_))) / (wa + wb);
  return log_p(z);
}

std::vector<Point> GaussianMixture1d::modes() const {
  if (mu1_ == mu2_) return {{-mu1_}};
  return {{-std::max(mu1_, mu2_)}, {-std::min(mu1_, mu2_)}};
}

std::optional<std::pair<double, double>> GaussianMixture1d::quadrature_interval() const {
  return std::pair{-std::max(mu1_, mu2_) - 4.0, -std::min(mu1_, mu2_) + 4.0};
}

// --- 2-D mixture --------------------------------------------------------------

double GaussianMixture2d::log_p(std::span<const double> z) const {
  const double dy = z[1] - mu_;
  const double left = -16.0 * ((z[0] + mu_ + 1.0) * (z[0] + mu_ + 1.0) + dy * dy);
  const double right = -16.0 * ((z[0] - mu_ - 1.0) * (z[0] - mu_ - 1.0) + dy * dy);
  return std::log(8.0 / std::numbers::pi) + log_sum_exp(left, right);
}

double GaussianMixture2d::log_p_grad(std::span<const double> z, std::span<double> grad) const {
  const double dy = z[1] - mu_;
  const double left = -16.0 * ((z[0] + mu_ + 1.0) * (z[0] + mu_ + 1.0) + dy * dy);
  const double right = -16.0 * ((z[0] - mu_ - 1.0) * (z[0] - mu_ - 1.0) + dy * dy);
  const double m = std::max(left, right);
  const double wl = std::exp(left - m);
  const double wr = std::exp(right - m);
  const double s = wl + wr;
  grad[0] = (wl * (-32.0 * (z[0] + mu_ + 1.0)) + wr * (-32.0 * (z[0] - mu_ - 1.0))) / s;
  grad[1] = -32.0 * dy;
  return std::log(8.0 / std::numbers::pi) + m + std::log(s);
}

std::vector<Point> GaussianMixture2d::modes() const {
  return {{-(mu_ + 1.0), mu_}, {mu_ + 1.0, mu_}};
}

// --- Gaussian -------------------------------------------------------------------

GaussianTarget::GaussianTarget(std::vector<double> mean, std::vector<double> var)
    : mean_(std::move(mean)), var_(std::move(var)) {
  if (mean_.size() != var_.size() || mean_.empty()) {
    throw ConfigError("target", "gaussian mean/var lengths must match and be nonzero");
  }
}

GaussianTarget GaussianTarget::standard(std::size_t dim) {
  return {std::vector<double>(dim, 0.0), std::vector<double>(dim, 1.0)};
}

double GaussianTarget::log_p(std::span<const double> z) const {
  double s = 0.0;
  for (std::size_t i = 0; i < mean_.size(); ++i) s += (z[i] - mean_[i]) * (z[i] - mean_[i]) / var_[i];
  return -0.5 * s;
}

double GaussianTarget::log_p_grad(std::span<const double> z, std::span<double> grad) const {
  for (std::size_t i = 0; i < mean_.size(); ++i) grad[i] = -(z[i] - mean_[i]) / var_[i];
  return log_p(z);
}

std::optional<std::pair<double, double>> GaussianTarget::quadrature_interval() const {
  if (mean_.size() != 1) return std::nullopt;
  const double sd = std::sqrt(var_[0]);
  // Wide enough for tempered densities down to t of about 0.05.
  return std::pair{mean_[0] - 30.0 * sd, mean_[0] + 30.0 * sd};
}

// --- Lorenz -------------------------------------------------------------------

LorenzPosterior::LorenzPosterior(Dataset data, double noise_var, double dt, std::optional<Point> truth)
    : data_(std::move(data)), noise_var_(noise_var), dt_(dt), truth_(std::move(truth)), id_(next_target_id()) {
  if (!(noise_var_ > 0.0)) throw ConfigError("target.noise_var", "must be positive");
  if (data_.components() != 3) throw ConfigError("target.dataset", "lorenz data needs 3 columns");
  obs_steps_ = observation_steps(data_, dt_);
}

namespace {

template <class T>
auto lorenz_field(const T& s, const T& b, const T& r) {
  return [=](const std::array<T, 3>& x) { return lorenz_rhs(x[0], x[1], x[2], s, r, b); };
}

}  // namespace

std::vector<double> LorenzPosterior::predict(std::span<const double> theta) const {
  std::array<double, 3> x{1.0, 1.0, 1.0};
  const auto field = lorenz_field(theta[0], theta[1], theta[2]);
  std::vector<double> out;
  out.reserve(3 * obs_steps_.size());
  std::size_t step = 0;
  for (std::size_t target_step : obs_steps_) {
    for (; step < target_step; ++step) {
      x = rk4_step3(field, x, dt_);
      if (!std::isfinite(x[0]) || !std::isfinite(x[1]) || !std::isfinite(x[2])) {
        throw BlowupError(step + 1, "lorenz trajectory blew up");
      }
    }
    out.insert(out.end(), x.begin(), x.end());
  }
  return out;
}

double LorenzPosterior::log_p(std::span<const double> theta) const {
  std::vector<double> pred;
  try {
    pred = predict(theta);
  } catch (const BlowupError&) {
    return kNegInf;
  }
  double ss = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double r = data_.values[i] - pred[i];
    ss += r * r;
  }
  return blowup_guard(-ss / (2.0 * noise_var_));
}

double LorenzPosterior::log_p_grad(std::span<const double> theta, std::span<double> grad) const {
  if (!std::isfinite(log_p(theta))) {
    fill_zero(grad);
    return kNegInf;
  }
  thread_local LikelihoodTape tape;
  if (tape.owner != id_) {
    Graph& g = tape.graph;
    g.clear();
    const Var s{&g, g.input()}, b{&g, g.input()}, r{&g, g.input()};
    const Var one{&g, g.constant(1.0)};
    std::array<Var, 3> x{one, one, one};
    const auto field = lorenz_field(s, b, r);
    std::vector<NodeId> residuals;
    residuals.reserve(3 * obs_steps_.size());
    std::size_t step = 0;
    for (std::size_t k = 0; k < obs_steps_.size(); ++k) {
      for (; step < obs_steps_[k]; ++step) x = rk4_step3(field, x, dt_);
      for (std::size_t c = 0; c < 3; ++c) residuals.push_back(square(x[c] - data_.values[3 * k + c]).id);
    }
    tape.root = g.scale(g.sum(residuals), -1.0 / (2.0 * noise_var_));
    tape.owner = id_;
  }
  return replay(tape, theta, grad);
}

std::vector<Point> LorenzPosterior::modes() const {
  if (truth_) return {*truth_};
  return {};
}

// --- HIV ------------------------------------------------------------------------

HivPosterior::HivPosterior(Dataset data, double noise_var, double dt, HivConstants constants,
                           std::optional<Point> truth)
    : data_(std::move(data)),
      noise_var_(noise_var),
      dt_(dt),
      constants_(constants),
      truth_(std::move(truth)),
      id_(next_target_id()) {
  if (!(noise_var_ > 0.0)) throw ConfigError("target.noise_var", "must be positive");
  if (data_.components() != 1) throw ConfigError("target.dataset", "hiv data needs 1 column (x3)");
  obs_steps_ = observation_steps(data_, dt_);
}

namespace {

template <class T>
auto hiv_field(const T& p1, const T& p2, const T& p3, const T& p4, const T& p5) {
  return [=](const std::array<T, 3>& x) { return hiv_rhs(x[0], x[1], x[2], p1, p2, p3, p4, p5); };
}

}  // namespace

std::vector<double> HivPosterior::predict(std::span<const double> theta) const {
  std::array<double, 3> x{constants_.x10, theta[2], constants_.x30};
  const auto field = hiv_field(theta[0], theta[1], constants_.p3, constants_.p4, constants_.p5);
  std::vector<double> out;
  out.reserve(obs_steps_.size());
  std::size_t step = 0;
  for (std::size_t target_step : obs_steps_) {
    for (; step < target_step; ++step) {
      x = rk4_step3(field, x, dt_);
      if (!std::isfinite(x[0]) || !std::isfinite(x[1]) || !std::isfinite(x[2])) {
        throw BlowupError(step + 1, "hiv trajectory blew up");
      }
    }
    out.push_back(x[2]);
  }
  return out;
}

double HivPosterior::log_p(std::span<const double> theta) const {
  std::vector<double> pred;
  try {
    pred = predict(theta);
  } catch (const BlowupError&) {
    return kNegInf;
  }
  double ss = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double r = data_.values[i] - pred[i];
    ss += r * r;
  }
  return blowup_guard(-ss / (2.0 * noise_var_));
}

double HivPosterior::log_p_grad(std::span<const double> theta, std::span<double> grad) const {
  if (!std::isfinite(log_p(theta))) {
    fill_zero(grad);
    return kNegInf;
  }
  thread_local LikelihoodTape tape;
  if (tape.owner != id_) {
    Graph& g = tape.graph;
    g.clear();
    const Var p1{&g, g.input()}, p2{&g, g.input()}, x20{&g, g.input()};
    const Var p3{&g, g.constant(constants_.p3)};
    const Var p4{&g, g.constant(constants_.p4)};
    const Var p5{&g, g.constant(constants_.p5)};
    std::array<Var, 3> x{Var{&g, g.constant(constants_.x10)}, x20, Var{&g, g.constant(constants_.x30)}};
    const auto field = hiv_field(p1, p2, p3, p4, p5);
    std::vector<NodeId> residuals;
    residuals.reserve(obs_steps_.size());
    std::size_t step = 0;
    for (std::size_t k = 0; k < obs_steps_.size(); ++k) {
      for (; step < obs_steps_[k]; ++step) x = rk4_step3(field, x, dt_);
      residuals.push_back(square(x[2] - data_.values[k]).id);
    }
    tape.root = g.scale(g.sum(residuals), -1.0 / (2.0 * noise_var_));
    tape.owner = id_;
  }
  return replay(tape, theta, grad);
}

std::vector<Point> HivPosterior::modes() const {
  if (!truth_) return {};
  const Point& t = *truth_;
  return {t, {-t[0], t[1], -t[2]}};
}

// --- synthetic data -------------------------------------------------------------

Dataset lorenz_dataset(std::span<const double> theta, double noise_var, Rng& rng) {
  const double x0[] = {1.0, 1.0, 1.0};
  const auto traj = rk4_integrate(lorenz_system(), theta, x0, 0.025, 60);
  // 30 of the 60 solution points: t = 0.05, 0.10, ..., 1.5.
  ObservationPlan plan{2, 2, {0, 1, 2}, {"x", "y", "z"}};
  return make_dataset(traj, plan, noise_var, rng);
}

Dataset hiv_dataset(std::span<const double> theta, double noise_var, Rng& rng,
                    const HivConstants& constants) {
  const double x0[] = {constants.x10, theta[2], constants.x30};
  const double params[] = {theta[0], theta[1], constants.p3, constants.p4, constants.p5};
  const auto traj = rk4_integrate(hiv_system(), params, x0, 0.05, 40);
  ObservationPlan plan{1, 1, {2}, {"x3"}};
  return make_dataset(traj, plan, noise_var, rng);
}

}  // namespace adaann
