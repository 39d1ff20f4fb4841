#include "adaann/loss.hpp"

#include <cmath>
#include <fstream>

#include "adaann/errors.hpp"

namespace adaann {

namespace {

void check_temperature(double t) {
  if (!(t > 0.0 && t <= 1.0)) throw UsageError("free energy: t must lie in (0, 1]");
}

LossReport evaluate(const FlowBatch& batch, const TargetDensity& target, double t,
                    std::vector<double>* grads_logp) {
  check_temperature(t);
  if (batch.n == 0) throw UsageError("free energy: empty batch");
  LossReport report;
  report.n = batch.n;
  report.t = t;
  report.log_q.resize(batch.n);
  report.log_p.resize(batch.n);
  if (grads_logp) grads_logp->assign(batch.n * batch.dim, 0.0);

  double sum = 0.0;
  std::size_t kept = 0;
  for (std::size_t i = 0; i < batch.n; ++i) {
    report.log_q[i] = batch.log_q0[i] - batch.logdet[i];
    const auto z = batch.row(i);
    const double lp = grads_logp
                          ? target.log_p_grad(z, std::span(*grads_logp).subspan(i * batch.dim, batch.dim))
                          : target.log_p(z);
    report.log_p[i] = lp;
    if (!std::isfinite(lp)) {
      ++report.dropped;
      continue;
    }
    sum += report.log_q[i] - t * lp;
    ++kept;
  }
  if (kept == 0) {
    throw TargetUnderflow("log p is -inf for every sample in the batch");
  }
  report.value = sum / static_cast<double>(kept);
  return report;
}

}  // namespace

LossReport free_energy(const FlowBatch& batch, const TargetDensity& target, double t) {
  return evaluate(batch, target, t, nullptr);
}

LossReport free_energy_with_gradient(const FlowStack& stack, const FlowBatch& batch,
                                     const TargetDensity& target, double t, std::span<double> grad) {
  std::vector<double> grad_logp;
  LossReport report = evaluate(batch, target, t, &grad_logp);
  const double inv_n = 1.0 / static_cast<double>(batch.n - report.dropped);
  std::vector<double> g_zL(batch.n * batch.dim, 0.0);
  std::vector<double> g_logdet(batch.n, 0.0);
  for (std::size_t i = 0; i < batch.n; ++i) {
    if (!std::isfinite(report.log_p[i])) continue;
    for (std::size_t j = 0; j < batch.dim; ++j) {
      g_zL[i * batch.dim + j] = -t * inv_n * grad_logp[i * batch.dim + j];
    }
    g_logdet[i] = -inv_n;
  }
  stack.vjp_batch(batch, g_zL, g_logdet, grad);
  return report;
}

void write_loss_csv(std::span<const LossRecord> records, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out.precision(17);
  out << "iteration,t,free_energy,wall_ms\n";
  for (const auto& r : records) {
    out << r.iteration << ',' << r.t << ',' << r.value << ',';
    out.precision(6);
    out << r.wall_ms << '\n';
    out.precision(17);
  }
}

}  // namespace adaann
