#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "adaann/ode.hpp"

namespace adaann {

using Point = std::vector<double>;

/// Unnormalized log-density log p(Z, X). Returns -inf (never NaN) outside
/// the support. Implementations are immutable after construction and may be
/// evaluated concurrently.
/// Fresh identifier for targets that cache per-instance gradient tapes.
std::uint64_t next_target_id();

class TargetDensity {
 public:
  virtual ~TargetDensity() = default;

  virtual std::string name() const = 0;
  virtual std::size_t dim() const = 0;
  virtual double log_p(std::span<const double> z) const = 0;
  /// Returns log p(z) and writes its gradient; on -inf the gradient is zero.
  virtual double log_p_grad(std::span<const double> z, std::span<double> grad) const = 0;

  /// Known mode locations, if any (used by the capture detector).
  virtual std::vector<Point> modes() const { return {}; }
  /// Interval carrying essentially all mass, for 1-D quadrature.
  virtual std::optional<std::pair<double, double>> quadrature_interval() const { return std::nullopt; }
};

/// 0.954 * exp(-[(z + 2)^2 - 3]^2), peaks at -2 +- sqrt(3).
class BimodalTarget final : public TargetDensity {
 public:
  std::string name() const override { return "bimodal_1d"; }
  std::size_t dim() const override { return 1; }
  double log_p(std::span<const double> z) const override;
  double log_p_grad(std::span<const double> z, std::span<double> grad) const override;
  std::vector<Point> modes() const override;
  std::optional<std::pair<double, double>> quadrature_interval() const override {
    return std::pair{-8.0, 4.0};
  }
};

enum class ModePlacement { kSymmetric, kAsymmetric };

/// Equal-weight mixture of two precision-16 Gaussians centred at -mu1, -mu2:
/// p(z) = c exp(-8 (z + mu1)^2) + c exp(-8 (z + mu2)^2), c = 1 / (2 sqrt(pi/8)).
class GaussianMixture1d final : public TargetDensity {
 public:
  GaussianMixture1d(double mu1, double mu2) : mu1_(mu1), mu2_(mu2) {}
  /// Symmetric: mu1 = mu/2, mu2 = -mu/2. Asymmetric: mu1 = mu, mu2 = 0.
  static GaussianMixture1d with_separation(double mu, ModePlacement placement);

  std::string name() const override { return "gmm_1d"; }
  std::size_t dim() const override { return 1; }
  double log_p(std::span<const double> z) const override;
  double log_p_grad(std::span<const double> z, std::span<double> grad) const override;
  std::vector<Point> modes() const override;
  std::optional<std::pair<double, double>> quadrature_interval() const override;

 private:
  double mu1_;
  double mu2_;
};

/// (8/pi) exp(-16[(z1 + mu + 1)^2 + (z2 - mu)^2]) + (8/pi) exp(-16[(z1 - mu - 1)^2 + (z2 - mu)^2]).
class GaussianMixture2d final : public TargetDensity {
 public:
  explicit GaussianMixture2d(double mu) : mu_(mu) {}

  std::string name() const override { return "gmm_2d"; }
  std::size_t dim() const override { return 2; }
  double log_p(std::span<const double> z) const override;
  double log_p_grad(std::span<const double> z, std::span<double> grad) const override;
  std::vector<Point> modes() const override;

 private:
  double mu_;
};

/// Unnormalized diagonal Gaussian -0.5 sum (z - m)^2 / v.
class GaussianTarget final : public TargetDensity {
 public:
  GaussianTarget(std::vector<double> mean, std::vector<double> var);
  static GaussianTarget standard(std::size_t dim);

  std::string name() const override { return "gaussian"; }
  std::size_t dim() const override { return mean_.size(); }
  double log_p(std::span<const double> z) const override;
  double log_p_grad(std::span<const double> z, std::span<double> grad) const override;
  std::vector<Point> modes() const override { return {mean_}; }
  std::optional<std::pair<double, double>> quadrature_interval() const override;

 private:
  std::vector<double> mean_;
  std::vector<double> var_;
};

/// Posterior of theta = (s, b, r) for the Lorenz system observed in all three
/// components, with a flat prior and Gaussian noise of variance `noise_var`.
/// The state starts at (1, 1, 1) and is advanced by RK4 with step `dt`;
/// each observation time maps to the nearest solution index.
class LorenzPosterior final : public TargetDensity {
 public:
  LorenzPosterior(Dataset data, double noise_var, double dt = 0.025,
                  std::optional<Point> truth = std::nullopt);

  std::string name() const override { return "lorenz"; }
  std::size_t dim() const override { return 3; }
  double log_p(std::span<const double> theta) const override;
  double log_p_grad(std::span<const double> theta, std::span<double> grad) const override;
  std::vector<Point> modes() const override;

  /// Observed components predicted at the observation times (n x 3).
  std::vector<double> predict(std::span<const double> theta) const;

 private:
  Dataset data_;
  double noise_var_;
  double dt_;
  std::vector<std::size_t> obs_steps_;
  std::optional<Point> truth_;
  std::uint64_t id_;  // keys the per-thread gradient tape
};

/// Posterior of theta = (p1, p2, x2(0)) for the HIV model observed through
/// y = x3, flat prior, Gaussian noise. p3..p5, x1(0), x3(0) are fixed.
class HivPosterior final : public TargetDensity {
 public:
  HivPosterior(Dataset data, double noise_var, double dt = 0.05, HivConstants constants = {},
               std::optional<Point> truth = std::nullopt);

  std::string name() const override { return "hiv"; }
  std::size_t dim() const override { return 3; }
  double log_p(std::span<const double> theta) const override;
  double log_p_grad(std::span<const double> theta, std::span<double> grad) const override;
  /// The truth and its sign-flipped twin (-p1, p2, -x2(0)).
  std::vector<Point> modes() const override;

  /// x3 at the observation times.
  std::vector<double> predict(std::span<const double> theta) const;

 private:
  Dataset data_;
  double noise_var_;
  double dt_;
  HivConstants constants_;
  std::vector<std::size_t> obs_steps_;
  std::optional<Point> truth_;
  std::uint64_t id_;  // keys the per-thread gradient tape
};

/// Noise-free or noisy synthetic data on the standard observation grids.
Dataset lorenz_dataset(std::span<const double> theta, double noise_var, Rng& rng);
Dataset hiv_dataset(std::span<const double> theta, double noise_var, Rng& rng,
                    const HivConstants& constants = {});

}  // namespace adaann
