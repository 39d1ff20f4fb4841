#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "adaann/flows.hpp"
#include "adaann/targets.hpp"

namespace adaann {

/// Monte Carlo free energy at inverse temperature t:
///   F = mean_i [ log q_0(z0_i) - sum_l log|det J_l| - t log p(zL_i) ].
struct LossReport {
  double value = 0.0;
  std::size_t n = 0;        // samples in the batch
  std::size_t dropped = 0;  // samples with log p = -inf, excluded from the mean
  double t = 1.0;
  std::vector<double> log_q;  // log q_L per sample
  std::vector<double> log_p;  // log p per sample
};

/// Throws TargetUnderflow when log p is -inf for every sample.
LossReport free_energy(const FlowBatch& batch, const TargetDensity& target, double t);

/// Same value; also accumulates dF/dparams into `grad`.
LossReport free_energy_with_gradient(const FlowStack& stack, const FlowBatch& batch,
                                     const TargetDensity& target, double t, std::span<double> grad);

struct LossRecord {
  std::size_t iteration = 0;
  double t = 1.0;
  double value = 0.0;
  double wall_ms = 0.0;
};

/// CSV with header `iteration,t,free_energy,wall_ms`.
void write_loss_csv(std::span<const LossRecord> records, const std::filesystem::path& path);

}  // namespace adaann
