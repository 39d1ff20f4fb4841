#include "adaann/flows.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "adaann/errors.hpp"

namespace adaann {

namespace {

constexpr double kDegenerateDet = 1e-12;

double softplus(double y) { return y > 0.0 ? y + std::log1p(std::exp(-y)) : std::log1p(std::exp(y)); }

double sigmoid(double y) {
  if (y >= 0.0) return 1.0 / (1.0 + std::exp(-y));
  const double e = std::exp(y);
  return e / (1.0 + e);
}

// m(x) - x, computed without cancellation.
double guard_excess(double x, double sharpness) { return softplus(-sharpness * (x + 1.0)) / sharpness; }

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Fully connected net: ReLU between layers, identity on the output.
// Parameters per linear layer: W (out x in, row-major) followed by b (out).
void mlp_eval(std::span<const double> params, std::span<const std::size_t> widths,
              std::span<const double> in, std::vector<double>& out) {
  std::vector<double> cur(in.begin(), in.end());
  std::vector<double> next;
  std::size_t off = 0;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const std::size_t n_in = widths[l];
    const std::size_t n_out = widths[l + 1];
    next.assign(n_out, 0.0);
    const double* w = params.data() + off;
    const double* b = w + n_in * n_out;
    for (std::size_t j = 0; j < n_out; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < n_in; ++k) s += w[j * n_in + k] * cur[k];
      s += b[j];
      next[j] = (l + 2 < widths.size()) ? std::max(s, 0.0) : s;
    }
    off += n_in * n_out + n_out;
    cur.swap(next);
  }
  out = std::move(cur);
}

std::vector<NodeId> mlp_build(Graph& g, std::span<const NodeId> params,
                              std::span<const std::size_t> widths, std::span<const NodeId> in) {
  std::vector<NodeId> cur(in.begin(), in.end());
  std::size_t off = 0;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const std::size_t n_in = widths[l];
    const std::size_t n_out = widths[l + 1];
    std::vector<NodeId> next(n_out);
    for (std::size_t j = 0; j < n_out; ++j) {
      const NodeId d = g.dot(params.subspan(off + j * n_in, n_in), cur);
      const NodeId s = g.add(d, params[off + n_in * n_out + j]);
      next[j] = (l + 2 < widths.size()) ? g.relu(s) : s;
    }
    off += n_in * n_out + n_out;
    cur.swap(next);
  }
  return cur;
}

std::size_t mlp_param_count(std::span<const std::size_t> widths) {
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) n += widths[l] * widths[l + 1] + widths[l + 1];
  return n;
}

}  // namespace

double DiagGaussian::log_density(std::span<const double> z) const {
  double s = 0.0;
  for (std::size_t i = 0; i < mean.size(); ++i) {
    const double r = z[i] - mean[i];
    s += std::log(2.0 * std::numbers::pi * var[i]) + r * r / var[i];
  }
  return -0.5 * s;
}

void DiagGaussian::sample(Rng& rng, std::span<double> out) const {
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t i = 0; i < mean.size(); ++i) out[i] = mean[i] + std::sqrt(var[i]) * normal(rng);
}

std::string to_string(FlowKind kind) { return kind == FlowKind::kPlanar ? "planar" : "realnvp"; }

FlowKind flow_kind_from_string(const std::string& name) {
  if (name == "planar") return FlowKind::kPlanar;
  if (name == "realnvp") return FlowKind::kRealNvp;
  throw ConfigError("flow.type", "unknown flow type '" + name + "'");
}

void FlowSpec::validate() const {
  if (dim == 0) throw ConfigError("flow.dim", "must be positive");
  if (base.mean.size() != dim || base.var.size() != dim) {
    throw ConfigError("flow.base", "mean/variance length must equal dim");
  }
  for (double v : base.var) {
    if (!(v > 0.0)) throw ConfigError("flow.base.var", "variances must be positive");
  }
  if (kind == FlowKind::kPlanar && !(planar_init >= 0.0)) {
    throw ConfigError("flow.planar_init", "must be non-negative");
  }
  if (kind == FlowKind::kPlanar && !(planar_sharpness > 0.0)) {
    throw ConfigError("flow.planar_sharpness", "must be positive");
  }
  if (kind == FlowKind::kRealNvp) {
    if (dim < 2) throw ConfigError("flow.dim", "realnvp needs dim >= 2");
    const std::size_t c = coupling_split();
    if (c < 1 || c > dim - 1) throw ConfigError("flow.split", "must lie in [1, dim-1]");
    for (std::size_t h : hidden) {
      if (h == 0) throw ConfigError("flow.hidden", "widths must be positive");
    }
  }
}

double planar_guard(double x, double sharpness) { return x + guard_excess(x, sharpness); }

double planar_guard_slope(double x, double sharpness) { return sigmoid(sharpness * (x + 1.0)); }

double planar_effective_u(const PlanarLayer& layer, std::span<double> out) {
  const double alpha = dot(layer.w, layer.u);
  const double s = dot(layer.w, layer.w);
  std::copy(layer.u.begin(), layer.u.end(), out.begin());
  if (s == 0.0) return alpha;
  const double beta = guard_excess(alpha, layer.sharpness);
  const double c = beta / s;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += c * layer.w[i];
  return alpha + beta;
}

double planar_forward(const PlanarLayer& layer, std::span<const double> z, std::span<double> out) {
  const std::size_t d = z.size();
  double u_hat[16];
  std::vector<double> heap;
  std::span<double> uh;
  if (d <= 16) {
    uh = std::span<double>(u_hat, d);
  } else {
    heap.resize(d);
    uh = heap;
  }
  const double uw = planar_effective_u(layer, uh);
  const double a = dot(layer.w, z) + layer.b;
  const double h = std::tanh(a);
  const double det = 1.0 + uw * (1.0 - h * h);
  if (std::abs(det) < kDegenerateDet) {
    throw DegenerateJacobian("planar layer Jacobian determinant is numerically zero");
  }
  for (std::size_t i = 0; i < d; ++i) out[i] = z[i] + uh[i] * h;
  return std::log(std::abs(det));
}

CouplingLayer::CouplingLayer(std::size_t dim, std::size_t split, bool swapped,
                             std::vector<std::size_t> hidden)
    : dim_(dim), swapped_(swapped) {
  if (dim < 2 || split < 1 || split >= dim) throw UsageError("coupling layer: invalid split");
  for (std::size_t i = 0; i < dim; ++i) {
    const bool first_block = i < split;
    (first_block != swapped ? passive_ : active_).push_back(i);
  }
  widths_.push_back(passive_.size());
  widths_.insert(widths_.end(), hidden.begin(), hidden.end());
  widths_.push_back(active_.size());
  net_params_ = mlp_param_count(widths_);
}

double CouplingLayer::forward(std::span<const double> params, std::span<const double> z,
                              std::span<double> out) const {
  std::vector<double> in(passive_.size());
  for (std::size_t k = 0; k < passive_.size(); ++k) in[k] = z[passive_[k]];
  std::vector<double> s, t;
  mlp_eval(params.first(net_params_), widths_, in, s);
  mlp_eval(params.subspan(net_params_, net_params_), widths_, in, t);
  double logdet = 0.0;
  for (std::size_t i : passive_) out[i] = z[i];
  for (std::size_t k = 0; k < active_.size(); ++k) {
    const double sk = std::tanh(s[k]);
    out[active_[k]] = z[active_[k]] * std::exp(sk) + t[k];
    logdet += sk;
  }
  if (!std::isfinite(logdet)) throw NumericOverflow("coupling layer produced a non-finite value");
  return logdet;
}

void CouplingLayer::inverse(std::span<const double> params, std::span<const double> z_out,
                            std::span<double> z) const {
  std::vector<double> in(passive_.size());
  for (std::size_t k = 0; k < passive_.size(); ++k) in[k] = z_out[passive_[k]];
  std::vector<double> s, t;
  mlp_eval(params.first(net_params_), widths_, in, s);
  mlp_eval(params.subspan(net_params_, net_params_), widths_, in, t);
  for (std::size_t i : passive_) z[i] = z_out[i];
  for (std::size_t k = 0; k < active_.size(); ++k) {
    z[active_[k]] = (z_out[active_[k]] - t[k]) * std::exp(-std::tanh(s[k]));
  }
}

void CouplingLayer::initialize(std::span<double> params, Rng& rng) const {
  for (std::size_t net = 0; net < 2; ++net) {
    std::size_t off = net * net_params_;
    for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
      const std::size_t n_in = widths_[l];
      const std::size_t n_out = widths_[l + 1];
      const std::size_t count = n_in * n_out + n_out;
      const bool output_layer = l + 2 == widths_.size();
      const double bound = 1.0 / std::sqrt(static_cast<double>(n_in));
      std::uniform_real_distribution<double> uni(-bound, bound);
      for (std::size_t i = 0; i < count; ++i) params[off + i] = output_layer ? 0.0 : uni(rng);
      off += count;
    }
  }
}

NodeId CouplingLayer::build(Graph& g, std::span<const NodeId> params, std::span<const NodeId> z,
                            std::span<NodeId> out) const {
  std::vector<NodeId> in(passive_.size());
  for (std::size_t k = 0; k < passive_.size(); ++k) in[k] = z[passive_[k]];
  const auto s = mlp_build(g, params.first(net_params_), widths_, in);
  const auto t = mlp_build(g, params.subspan(net_params_, net_params_), widths_, in);
  for (std::size_t i : passive_) out[i] = z[i];
  std::vector<NodeId> scales(active_.size());
  for (std::size_t k = 0; k < active_.size(); ++k) {
    scales[k] = g.tanh(s[k]);
    out[active_[k]] = g.add(g.mul(z[active_[k]], g.exp(scales[k])), t[k]);
  }
  return g.sum(scales);
}

struct FlowStack::CouplingTape {
  Graph graph;
  std::vector<NodeId> outputs;
  NodeId logdet = 0;
  std::vector<double> inputs;
  std::vector<std::pair<NodeId, double>> seeds;
};

FlowStack::FlowStack(FlowSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  std::size_t total = 0;
  for (std::size_t l = 0; l < spec_.layers; ++l) {
    offsets_.push_back(total);
    if (spec_.kind == FlowKind::kPlanar) {
      total += 2 * spec_.dim + 1;
    } else {
      coupling_.emplace_back(spec_.dim, spec_.coupling_split(), l % 2 == 1, spec_.hidden);
      total += coupling_.back().num_params();
    }
  }
  offsets_.push_back(total);
  params_ = ParamVector(total);
}

FlowStack::FlowStack(const FlowStack& other)
    : spec_(other.spec_), params_(other.params_), offsets_(other.offsets_), coupling_(other.coupling_) {}

FlowStack& FlowStack::operator=(const FlowStack& other) {
  if (this != &other) {
    spec_ = other.spec_;
    params_ = other.params_;
    offsets_ = other.offsets_;
    coupling_ = other.coupling_;
    tape_.reset();
  }
  return *this;
}

FlowStack::FlowStack(FlowStack&&) noexcept = default;
FlowStack& FlowStack::operator=(FlowStack&&) noexcept = default;
FlowStack::~FlowStack() = default;

void FlowStack::initialize(Rng& rng) {
  auto p = params_.values();
  if (spec_.kind == FlowKind::kPlanar) {
    std::uniform_real_distribution<double> uni(-spec_.planar_init, spec_.planar_init);
    const std::size_t d = spec_.dim;
    for (std::size_t l = 0; l < spec_.layers; ++l) {
      double* layer = p.data() + offsets_[l];
      for (std::size_t i = 0; i < 2 * d; ++i) layer[i] = uni(rng);
      layer[2 * d] = 0.0;
    }
  } else {
    for (std::size_t l = 0; l < spec_.layers; ++l) {
      coupling_[l].initialize(p.subspan(offsets_[l], offsets_[l + 1] - offsets_[l]), rng);
    }
  }
}

PlanarLayer FlowStack::planar_layer(std::size_t layer) const {
  if (spec_.kind != FlowKind::kPlanar) throw UsageError("not a planar stack");
  const std::size_t d = spec_.dim;
  const auto p = params_.values().subspan(offsets_[layer], 2 * d + 1);
  return PlanarLayer{p.first(d), p.subspan(d, d), p[2 * d], spec_.planar_sharpness};
}

const CouplingLayer& FlowStack::coupling_layer(std::size_t layer) const {
  if (spec_.kind != FlowKind::kRealNvp) throw UsageError("not a coupling stack");
  return coupling_.at(layer);
}

std::vector<FlowStack::PlanarCoef> FlowStack::planar_coefs() const {
  const double k = spec_.planar_sharpness;
  std::vector<PlanarCoef> coefs(spec_.layers);
  for (std::size_t l = 0; l < spec_.layers; ++l) {
    const PlanarLayer layer = planar_layer(l);
    PlanarCoef& c = coefs[l];
    c.alpha = dot(layer.w, layer.u);
    c.s = dot(layer.w, layer.w);
    c.beta = c.s > 0.0 ? guard_excess(c.alpha, k) : 0.0;
    c.beta_slope = c.s > 0.0 ? planar_guard_slope(c.alpha, k) - 1.0 : 0.0;
    c.c = c.s > 0.0 ? c.beta / c.s : 0.0;
    c.uw = c.alpha + c.beta;
  }
  return coefs;
}

double FlowStack::planar_transform(std::span<const PlanarCoef> coefs, std::span<const double> z0,
                                   std::span<double> zL) const {
  const std::size_t d = spec_.dim;
  std::copy(z0.begin(), z0.end(), zL.begin());
  // Determinants are multiplied up and logged in blocks to save a log per layer.
  double logdet = 0.0;
  double prod = 1.0;
  for (std::size_t l = 0; l < spec_.layers; ++l) {
    const double* p = params_.values().data() + offsets_[l];
    const double* u = p;
    const double* w = p + d;
    double a = p[2 * d];
    for (std::size_t i = 0; i < d; ++i) a += w[i] * zL[i];
    const double h = std::tanh(a);
    const double det = 1.0 + coefs[l].uw * (1.0 - h * h);
    if (std::abs(det) < kDegenerateDet) {
      throw DegenerateJacobian("planar layer Jacobian determinant is numerically zero");
    }
    for (std::size_t i = 0; i < d; ++i) zL[i] += (u[i] + coefs[l].c * w[i]) * h;
    prod *= std::abs(det);
    if (prod > 1e150 || prod < 1e-150) {
      logdet += std::log(prod);
      prod = 1.0;
    }
  }
  return logdet + std::log(prod);
}

double FlowStack::transform(std::span<const double> z0, std::span<double> zL) const {
  double logdet = 0.0;
  if (spec_.kind == FlowKind::kPlanar) {
    logdet = planar_transform(planar_coefs(), z0, zL);
  } else {
    std::vector<double> cur(z0.begin(), z0.end());
    std::vector<double> next(cur.size());
    for (std::size_t l = 0; l < spec_.layers; ++l) {
      const auto p = params_.values().subspan(offsets_[l], offsets_[l + 1] - offsets_[l]);
      logdet += coupling_[l].forward(p, cur, next);
      cur.swap(next);
    }
    std::copy(cur.begin(), cur.end(), zL.begin());
  }
  for (std::size_t i = 0; i < spec_.dim; ++i) {
    if (!std::isfinite(zL[i])) throw NumericOverflow("flow produced a non-finite sample");
  }
  return logdet;
}

void FlowStack::inverse(std::span<const double> zL, std::span<double> z0) const {
  if (spec_.kind != FlowKind::kRealNvp) {
    throw UsageError("planar layers have no closed-form inverse");
  }
  std::vector<double> cur(zL.begin(), zL.end());
  std::vector<double> prev(cur.size());
  for (std::size_t l = spec_.layers; l-- > 0;) {
    const auto p = params_.values().subspan(offsets_[l], offsets_[l + 1] - offsets_[l]);
    coupling_[l].inverse(p, cur, prev);
    cur.swap(prev);
  }
  std::copy(cur.begin(), cur.end(), z0.begin());
}

void FlowStack::vjp(std::span<const double> z0, std::span<const double> g_zL, double g_logdet,
                    std::span<double> grad) const {
  if (spec_.kind == FlowKind::kPlanar) {
    const FlowBatch one = push_forward(std::vector<double>(z0.begin(), z0.end()));
    vjp_batch(one, g_zL, std::span(&g_logdet, 1), grad);
  } else {
    vjp_coupling(z0, g_zL, g_logdet, grad);
  }
}

void FlowStack::vjp_batch(const FlowBatch& batch, std::span<const double> g_zL,
                          std::span<const double> g_logdet, std::span<double> grad) const {
  const std::size_t d = spec_.dim;
  if (g_zL.size() != batch.n * d || g_logdet.size() != batch.n) {
    throw UsageError("vjp_batch: seed sizes do not match the batch");
  }
  if (spec_.kind == FlowKind::kPlanar) {
    vjp_planar(batch, g_zL, g_logdet, grad);
    return;
  }
  for (std::size_t i = 0; i < batch.n; ++i) {
    const auto g = g_zL.subspan(i * d, d);
    if (g_logdet[i] == 0.0 && std::all_of(g.begin(), g.end(), [](double v) { return v == 0.0; })) continue;
    vjp_coupling(batch.base_row(i), g, g_logdet[i], grad);
  }
}

void FlowStack::vjp_planar(const FlowBatch& batch, std::span<const double> g_zL,
                           std::span<const double> g_logdet, std::span<double> grad) const {
  const std::size_t d = spec_.dim;
  const std::size_t L = spec_.layers;
  const std::size_t n = batch.n;
  if (batch.planar_tanh.size() != n * L) throw UsageError("vjp_batch: batch was not produced by a planar stack");
  const std::vector<PlanarCoef> coefs = planar_coefs();
  const double* pv = params_.values().data();
  const double* hs = batch.planar_tanh.data();

  // Layer inputs, layer-major: zs[l] is n x d.
  std::vector<double> zs((L + 1) * n * d);
  std::copy(batch.z0.begin(), batch.z0.end(), zs.begin());
  for (std::size_t l = 0; l < L; ++l) {
    const double* u = pv + offsets_[l];
    const double* w = u + d;
    const double c = coefs[l].c;
    const double* z = zs.data() + l * n * d;
    double* zn = zs.data() + (l + 1) * n * d;
    for (std::size_t i = 0; i < n; ++i) {
      const double h = hs[i * L + l];
      for (std::size_t j = 0; j < d; ++j) zn[i * d + j] = z[i * d + j] + (u[j] + c * w[j]) * h;
    }
  }

  std::vector<double> gz(g_zL.begin(), g_zL.end());
  std::vector<double> u_hat(d), acc_gu(d), acc_gw(d), acc_z(d);
  for (std::size_t l = L; l-- > 0;) {
    const double* u = pv + offsets_[l];
    const double* w = u + d;
    const double* z = zs.data() + l * n * d;
    const PlanarCoef& cf = coefs[l];
    for (std::size_t j = 0; j < d; ++j) u_hat[j] = u[j] + cf.c * w[j];

    // Per-sample seeds reduce to three scalars per layer plus sums over
    // g_uhat = gz h and g_a z.
    double sum_ga = 0.0;
    double sum_guw = 0.0;
    double sum_gc = 0.0;
    std::fill(acc_gu.begin(), acc_gu.end(), 0.0);
    std::fill(acc_z.begin(), acc_z.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      double* g = gz.data() + i * d;
      const double h = hs[i * L + l];
      const double psi = 1.0 - h * h;
      const double inv_det = 1.0 / (1.0 + cf.uw * psi);
      double uhat_gz = 0.0;
      double gw_dot = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        uhat_gz += u_hat[j] * g[j];
        gw_dot += g[j] * w[j];
        acc_gu[j] += g[j] * h;
      }
      // d log|det| / da = uw * psi' / det with psi' = -2 h psi.
      const double g_a = psi * uhat_gz - g_logdet[i] * 2.0 * cf.uw * h * psi * inv_det;
      sum_guw += g_logdet[i] * psi * inv_det;
      sum_gc += gw_dot * h;
      sum_ga += g_a;
      for (std::size_t j = 0; j < d; ++j) {
        acc_z[j] += g_a * z[i * d + j];
        g[j] += g_a * w[j];
      }
    }
    // u_hat = u + c(alpha, s) w ; uw = alpha + beta(alpha).
    const double s = cf.s;
    const double g_alpha = (s > 0.0 ? sum_gc * cf.beta_slope / s : 0.0) + sum_guw * (1.0 + cf.beta_slope);
    const double g_s = s > 0.0 ? -sum_gc * cf.beta / (s * s) : 0.0;
    double* gu = grad.data() + offsets_[l];
    double* gw = gu + d;
    for (std::size_t j = 0; j < d; ++j) {
      gu[j] += acc_gu[j] + g_alpha * w[j];
      gw[j] += cf.c * acc_gu[j] + g_alpha * u[j] + 2.0 * g_s * w[j] + acc_z[j];
    }
    gu[2 * d] += sum_ga;
  }
}

void FlowStack::vjp_coupling(std::span<const double> z0, std::span<const double> g_zL,
                             double g_logdet, std::span<double> grad) const {
  const std::size_t d = spec_.dim;
  const std::size_t n_params = params_.size();
  if (!tape_) {
    auto tape = std::make_unique<CouplingTape>();
    Graph& g = tape->graph;
    std::vector<NodeId> p(n_params), z(d), next(d);
    for (auto& id : p) id = g.input();
    for (auto& id : z) id = g.input();
    std::vector<NodeId> logdets;
    for (std::size_t l = 0; l < spec_.layers; ++l) {
      const auto lp = std::span<const NodeId>(p).subspan(offsets_[l], offsets_[l + 1] - offsets_[l]);
      logdets.push_back(coupling_[l].build(g, lp, z, next));
      z.swap(next);
    }
    tape->outputs = z;
    tape->logdet = logdets.empty() ? g.constant(0.0) : g.sum(logdets);
    tape->inputs.resize(n_params + d);
    tape_ = std::move(tape);
  }
  CouplingTape& tape = *tape_;
  const auto pv = params_.values();
  std::copy(pv.begin(), pv.end(), tape.inputs.begin());
  std::copy(z0.begin(), z0.end(), tape.inputs.begin() + static_cast<std::ptrdiff_t>(n_params));
  tape.graph.forward(tape.inputs);
  tape.seeds.clear();
  for (std::size_t i = 0; i < d; ++i) tape.seeds.emplace_back(tape.outputs[i], g_zL[i]);
  tape.seeds.emplace_back(tape.logdet, g_logdet);
  tape.graph.backward(tape.seeds);
  const auto in = tape.graph.inputs();
  for (std::size_t i = 0; i < n_params; ++i) grad[i] += tape.graph.adjoint(in[i]);
}

FlowBatch FlowStack::sample(std::size_t n, Rng& rng) const {
  if (n == 0) throw UsageError("sample: N must be at least 1");
  std::vector<double> z0(n * spec_.dim);
  for (std::size_t i = 0; i < n; ++i) {
    spec_.base.sample(rng, std::span(z0).subspan(i * spec_.dim, spec_.dim));
  }
  return push_forward(std::move(z0));
}

FlowBatch FlowStack::push_forward(std::vector<double> z0) const {
  const std::size_t d = spec_.dim;
  FlowBatch batch;
  batch.dim = d;
  batch.n = z0.size() / d;
  batch.z0 = std::move(z0);
  batch.zL.resize(batch.n * d);
  batch.logdet.resize(batch.n);
  batch.log_q0.resize(batch.n);
  if (spec_.kind == FlowKind::kPlanar) {
    push_forward_planar(batch);
    return batch;
  }
  for (std::size_t i = 0; i < batch.n; ++i) {
    const auto row0 = batch.base_row(i);
    batch.log_q0[i] = spec_.base.log_density(row0);
    batch.logdet[i] = transform(row0, std::span(batch.zL).subspan(i * d, d));
  }
  return batch;
}

void FlowStack::push_forward_planar(FlowBatch& batch) const {
  // Layer-outer loop: the tanh calls of different samples are independent,
  // which pipelines far better than walking one sample through all layers.
  const std::size_t d = spec_.dim;
  const std::size_t n = batch.n;
  const std::size_t L = spec_.layers;
  const std::vector<PlanarCoef> coefs = planar_coefs();
  batch.planar_tanh.resize(n * L);
  batch.zL = batch.z0;
  std::vector<double> prod(n, 1.0);
  std::fill(batch.logdet.begin(), batch.logdet.end(), 0.0);
  for (std::size_t i = 0; i < n; ++i) batch.log_q0[i] = spec_.base.log_density(batch.base_row(i));
  for (std::size_t l = 0; l < L; ++l) {
    const double* u = params_.values().data() + offsets_[l];
    const double* w = u + d;
    const double b = u[2 * d];
    const double uw = coefs[l].uw;
    const double c = coefs[l].c;
    for (std::size_t i = 0; i < n; ++i) {
      double* z = batch.zL.data() + i * d;
      double a = b;
      for (std::size_t j = 0; j < d; ++j) a += w[j] * z[j];
      const double h = std::tanh(a);
      batch.planar_tanh[i * L + l] = h;
      const double det = 1.0 + uw * (1.0 - h * h);
      if (std::abs(det) < kDegenerateDet) {
        throw DegenerateJacobian("planar layer Jacobian determinant is numerically zero");
      }
      for (std::size_t j = 0; j < d; ++j) z[j] += (u[j] + c * w[j]) * h;
      prod[i] *= std::abs(det);
      if (prod[i] > 1e150 || prod[i] < 1e-150) {
        batch.logdet[i] += std::log(prod[i]);
        prod[i] = 1.0;
      }
    }
  }
  for (std::size_t i = 0; i < n; ++i) batch.logdet[i] += std::log(prod[i]);
  for (double v : batch.zL) {
    if (!std::isfinite(v)) throw NumericOverflow("flow produced a non-finite sample");
  }
}

std::vector<double> FlowStack::log_density(const FlowBatch& batch) const {
  std::vector<double> out(batch.n);
  for (std::size_t i = 0; i < batch.n; ++i) out[i] = batch.log_q0[i] - batch.logdet[i];
  return out;
}

double FlowStack::min_planar_uw() const {
  double lowest = std::numeric_limits<double>::infinity();
  if (spec_.kind != FlowKind::kPlanar) return lowest;
  std::vector<double> uh(spec_.dim);
  for (std::size_t l = 0; l < spec_.layers; ++l) {
    lowest = std::min(lowest, planar_effective_u(planar_layer(l), uh));
  }
  return lowest;
}

std::string checkpoint_json(const FlowStack& stack) {
  const FlowSpec& spec = stack.spec();
  nlohmann::json j;
  j["format"] = "adaann-flow";
  j["version"] = 1;
  j["type"] = to_string(spec.kind);
  j["dim"] = spec.dim;
  j["layers"] = spec.layers;
  j["base"] = {{"mean", spec.base.mean}, {"var", spec.base.var}};
  if (spec.kind == FlowKind::kPlanar) {
    j["planar_sharpness"] = spec.planar_sharpness;
  } else {
    j["hidden"] = spec.hidden;
    j["split"] = spec.coupling_split();
  }
  nlohmann::json layers = nlohmann::json::array();
  const auto p = stack.params().values();
  for (std::size_t l = 0; l < spec.layers; ++l) {
    const std::size_t begin = stack.layer_offset(l);
    const std::size_t end = stack.layer_offset(l + 1);
    layers.push_back(std::vector<double>(p.begin() + static_cast<std::ptrdiff_t>(begin),
                                         p.begin() + static_cast<std::ptrdiff_t>(end)));
  }
  j["layer_params"] = std::move(layers);
  return j.dump(1);
}

FlowStack checkpoint_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("checkpoint", e.what());
  }
  try {
    if (j.at("format").get<std::string>() != "adaann-flow") {
      throw ConfigError("checkpoint.format", "not a flow checkpoint");
    }
    FlowSpec spec;
    spec.kind = flow_kind_from_string(j.at("type").get<std::string>());
    spec.dim = j.at("dim").get<std::size_t>();
    spec.layers = j.at("layers").get<std::size_t>();
    spec.base.mean = j.at("base").at("mean").get<std::vector<double>>();
    spec.base.var = j.at("base").at("var").get<std::vector<double>>();
    if (spec.kind == FlowKind::kPlanar) {
      spec.planar_sharpness = j.at("planar_sharpness").get<double>();
    } else {
      spec.hidden = j.at("hidden").get<std::vector<std::size_t>>();
      spec.split = j.at("split").get<std::size_t>();
    }
    FlowStack stack(spec);
    const auto& layers = j.at("layer_params");
    if (layers.size() != spec.layers) throw ConfigError("checkpoint.layer_params", "wrong layer count");
    auto p = stack.params().values();
    for (std::size_t l = 0; l < spec.layers; ++l) {
      const auto values = layers[l].get<std::vector<double>>();
      if (values.size() != stack.layer_offset(l + 1) - stack.layer_offset(l)) {
        throw ConfigError("checkpoint.layer_params[" + std::to_string(l) + "]",
                          "wrong parameter count");
      }
      std::copy(values.begin(), values.end(), p.begin() + static_cast<std::ptrdiff_t>(stack.layer_offset(l)));
    }
    return stack;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("checkpoint", e.what());
  }
}

void save_checkpoint(const FlowStack& stack, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << checkpoint_json(stack) << '\n';
}

FlowStack load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("checkpoint", "cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return checkpoint_from_json(ss.str());
}

}  // namespace adaann
