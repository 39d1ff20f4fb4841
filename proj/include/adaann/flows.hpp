#pragma once

#include <cstddef>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "adaann/autodiff.hpp"
#include "adaann/random.hpp"

namespace adaann {

/// Diagonal Gaussian base density q_0.
struct DiagGaussian {
  std::vector<double> mean;
  std::vector<double> var;

  std::size_t dim() const { return mean.size(); }
  double log_density(std::span<const double> z) const;
  void sample(Rng& rng, std::span<double> out) const;
};

enum class FlowKind { kPlanar, kRealNvp };

std::string to_string(FlowKind kind);
FlowKind flow_kind_from_string(const std::string& name);

struct FlowSpec {
  FlowKind kind = FlowKind::kPlanar;
  std::size_t dim = 1;
  std::size_t layers = 0;
  DiagGaussian base{{0.0}, {1.0}};
  // Sharpness k of the invertibility guard m(x) = -1 + softplus(k (x + 1)) / k.
  // k = 1 is the classic planar-flow reparameterization.
  double planar_sharpness = 20.0;
  // Planar u, w start uniform in [-planar_init, planar_init]; b starts at 0.
  double planar_init = 0.01;
  // realNVP only.
  std::vector<std::size_t> hidden{10, 10};
  std::size_t split = 0;  // pass-through width c; 0 means dim / 2

  void validate() const;
  std::size_t coupling_split() const { return split == 0 ? dim / 2 : split; }
};

/// One planar layer z' = z + u_hat * tanh(w.z + b), viewed over the flat
/// parameter storage.
struct PlanarLayer {
  std::span<const double> u;
  std::span<const double> w;
  double b = 0.0;
  double sharpness = 20.0;
};

/// Guard m(x) > -1 and its derivative.
double planar_guard(double x, double sharpness);
double planar_guard_slope(double x, double sharpness);

/// u_hat with u_hat.w = m(w.u) >= -1. Writes into `out` and returns u_hat.w.
double planar_effective_u(const PlanarLayer& layer, std::span<double> out);

/// Returns log|det| of the layer Jacobian; throws DegenerateJacobian when
/// |1 + u_hat.w h'| < 1e-12.
double planar_forward(const PlanarLayer& layer, std::span<const double> z, std::span<double> out);

/// Affine coupling layer with separate scale and translation networks.
/// Pass-through coordinates are [0, c) when not swapped and [c, d) when
/// swapped; the other block is scaled and shifted.
class CouplingLayer {
 public:
  CouplingLayer(std::size_t dim, std::size_t split, bool swapped, std::vector<std::size_t> hidden);

  std::size_t dim() const { return dim_; }
  bool swapped() const { return swapped_; }
  std::span<const std::size_t> passive() const { return passive_; }
  std::span<const std::size_t> active() const { return active_; }
  std::size_t num_params() const { return 2 * net_params_; }
  /// Widths of the network layers including input and output.
  std::span<const std::size_t> widths() const { return widths_; }

  double forward(std::span<const double> params, std::span<const double> z,
                 std::span<double> out) const;
  void inverse(std::span<const double> params, std::span<const double> z_out,
               std::span<double> z) const;

  /// Hidden layers uniform in +-1/sqrt(fan_in); output layers zero.
  void initialize(std::span<double> params, Rng& rng) const;

  /// Records the layer on `graph`; returns the log-det node.
  NodeId build(Graph& graph, std::span<const NodeId> params, std::span<const NodeId> z,
               std::span<NodeId> out) const;

 private:
  std::size_t dim_;
  bool swapped_;
  std::vector<std::size_t> passive_;
  std::vector<std::size_t> active_;
  std::vector<std::size_t> widths_;
  std::size_t net_params_ = 0;
};

/// N samples pushed through a stack; rows are row-major N x d.
struct FlowBatch {
  std::size_t n = 0;
  std::size_t dim = 0;
  std::vector<double> z0;
  std::vector<double> zL;
  std::vector<double> logdet;  // summed over layers
  std::vector<double> log_q0;
  // Planar stacks: tanh(w.z + b) per sample and layer (n x L), reused by
  // vjp_batch. Only valid while the producing stack's parameters are unchanged.
  std::vector<double> planar_tanh;

  std::span<const double> base_row(std::size_t i) const { return {z0.data() + i * dim, dim}; }
  std::span<const double> row(std::size_t i) const { return {zL.data() + i * dim, dim}; }
};

class FlowStack {
 public:
  /// Parameters start at zero (identity map); call initialize() for the
  /// training initialization.
  explicit FlowStack(FlowSpec spec);
  FlowStack(const FlowStack& other);
  FlowStack& operator=(const FlowStack& other);
  FlowStack(FlowStack&&) noexcept;
  FlowStack& operator=(FlowStack&&) noexcept;
  ~FlowStack();

  /// Planar: u, w ~ U(-planar_init, planar_init), b = 0. Coupling: see CouplingLayer.
  void initialize(Rng& rng);

  const FlowSpec& spec() const { return spec_; }
  std::size_t dim() const { return spec_.dim; }
  std::size_t num_layers() const { return spec_.layers; }
  ParamVector& params() { return params_; }
  const ParamVector& params() const { return params_; }
  std::size_t layer_offset(std::size_t layer) const { return offsets_[layer]; }

  PlanarLayer planar_layer(std::size_t layer) const;
  const CouplingLayer& coupling_layer(std::size_t layer) const;

  /// z_L = f_L o ... o f_1(z_0); returns the summed log|det|.
  double transform(std::span<const double> z0, std::span<double> zL) const;
  /// Exact inverse; only defined for coupling stacks.
  void inverse(std::span<const double> zL, std::span<double> z0) const;

  /// Accumulates into `grad` the gradient w.r.t. the flow parameters of
  /// g_zL . z_L(z0) + g_logdet * logdet(z0).
  void vjp(std::span<const double> z0, std::span<const double> g_zL, double g_logdet,
           std::span<double> grad) const;
  /// Same over a whole batch: row i is weighted by g_zL row i and g_logdet[i].
  /// The batch must come from this stack with its current parameters.
  void vjp_batch(const FlowBatch& batch, std::span<const double> g_zL,
                 std::span<const double> g_logdet, std::span<double> grad) const;

  FlowBatch sample(std::size_t n, Rng& rng) const;
  /// Batch for given base samples (row-major n x d).
  FlowBatch push_forward(std::vector<double> z0) const;
  /// log q_L at the batch rows: log q_0 - sum log|det|.
  std::vector<double> log_density(const FlowBatch& batch) const;

  /// Smallest u_hat.w over planar layers (invertibility requires >= -1).
  double min_planar_uw() const;

 private:
  // Per-layer quantities that depend only on the parameters.
  struct PlanarCoef {
    double alpha, s, beta, beta_slope, c, uw;
  };
  std::vector<PlanarCoef> planar_coefs() const;
  void push_forward_planar(FlowBatch& batch) const;
  double planar_transform(std::span<const PlanarCoef> coefs, std::span<const double> z0,
                          std::span<double> zL) const;
  void vjp_planar(const FlowBatch& batch, std::span<const double> g_zL,
                  std::span<const double> g_logdet, std::span<double> grad) const;
  void vjp_coupling(std::span<const double> z0, std::span<const double> g_zL, double g_logdet,
                    std::span<double> grad) const;

  struct CouplingTape;

  FlowSpec spec_;
  ParamVector params_;
  std::vector<std::size_t> offsets_;
  std::vector<CouplingLayer> coupling_;
  mutable std::unique_ptr<CouplingTape> tape_;  // built on first coupling vjp
};

/// JSON checkpoint: layer type, dimensions and per-layer parameter arrays.
/// Doubles are written in shortest round-trip form, so save/load is bit-exact.
void save_checkpoint(const FlowStack& stack, const std::filesystem::path& path);
FlowStack load_checkpoint(const std::filesystem::path& path);
std::string checkpoint_json(const FlowStack& stack);
FlowStack checkpoint_from_json(const std::string& text);

}  // namespace adaann
