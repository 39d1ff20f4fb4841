// adaann: train normalizing flows with annealed variational inference.
//
// Exit codes: 0 success, 2 configuration or usage error, 3 numeric failure.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "adaann/annealing.hpp"
#include "adaann/errors.hpp"
#include "adaann/experiment.hpp"
#include "adaann/loss.hpp"
#include "adaann/ode.hpp"
#include "adaann/targets.hpp"

namespace fs = std::filesystem;
using namespace adaann;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;

struct CommonOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> trials;
  std::string out;
  std::size_t progress = 0;
};

ExperimentConfig load(const CommonOptions& opts) {
  ExperimentConfig config = load_config(opts.config);
  if (opts.seed) config.seed = *opts.seed;
  if (opts.trials) config.trials = *opts.trials;
  return config;
}

fs::path output_dir(const CommonOptions& opts, const ExperimentConfig& config) {
  return opts.out.empty() ? config.output / config.id : fs::path(opts.out);
}

void print_run(const RunSummary& run, const fs::path& dir) {
  std::printf("%s: %zu temperature increments, %zu parameter updates, F = %.6g\n", run.id.c_str(),
              run.schedule.increments(), run.parameter_updates, run.final_free_energy);
  std::printf("  modes captured: %s (", run.capture.all ? "all" : "not all");
  for (std::size_t m = 0; m < run.capture.fractions.size(); ++m) {
    std::printf(m ? ", %.3f" : "%.3f", run.capture.fractions[m]);
  }
  std::printf(")\n  mean:");
  for (double v : run.stats.all.mean) std::printf(" %.6g", v);
  std::printf("\n  sd:  ");
  for (double v : run.stats.all.sd) std::printf(" %.6g", v);
  std::printf("\n  artifacts in %s\n", dir.string().c_str());
}

int cmd_run(const CommonOptions& opts, bool schedule_only) {
  const ExperimentConfig config = load(opts);
  const fs::path dir = output_dir(opts, config);
  RunOptions ro;
  ro.schedule_only = schedule_only;
  ro.progress_every = opts.progress;
  const RunSummary run = run_experiment(config, 0, dir, ro);
  print_run(run, dir);
  return 0;
}

int cmd_sweep(const CommonOptions& opts) {
  const ExperimentConfig config = load(opts);
  const fs::path dir = output_dir(opts, config);
  RunOptions ro;
  ro.progress_every = opts.progress;
  const CaptureReport report = sweep(config, config.trials, dir, ro);
  for (const auto& t : report.trials) {
    if (t.ok) {
      std::printf("trial %3zu: %s, %zu increments, %zu updates\n", t.trial,
                  t.capture.all ? "captured" : "missed", t.increments, t.parameter_updates);
    } else {
      std::printf("trial %3zu: failed: %s\n", t.trial, t.error.c_str());
    }
  }
  std::printf("capture rate %.3f (%zu of %zu); report in %s\n", report.rate, report.captured,
              report.trials.size(), (dir / "capture_report.json").string().c_str());
  return 0;
}

struct KlOptions {
  std::string target = "bimodal";
  double t = 0.2;
  double eps = 1e-2;
  int halvings = 3;
  std::size_t points = 1000;
  std::optional<double> lo, hi;
};

int cmd_oracle_kl(const KlOptions& o) {
  std::unique_ptr<TargetDensity> target;
  if (o.target == "bimodal") {
    target = std::make_unique<BimodalTarget>();
  } else if (o.target == "gaussian") {
    target = std::make_unique<GaussianTarget>(GaussianTarget::standard(1));
  } else {
    throw ConfigError("--target", "expected bimodal or gaussian");
  }
  auto interval = *target->quadrature_interval();
  if (o.lo) interval.first = *o.lo;
  if (o.hi) interval.second = *o.hi;
  std::printf("eps,exact,predictor,remainder,ratio\n");
  double eps = o.eps;
  double previous = 0.0;
  for (int i = 0; i <= o.halvings; ++i, eps /= 2.0) {
    const KlExpansion kl = kl_expansion_oracle(*target, o.t, eps, interval, o.points);
    const double remainder = std::abs(kl.exact - kl.predictor);
    if (i == 0) {
      std::printf("%.6g,%.10e,%.10e,%.4e,\n", eps, kl.exact, kl.predictor, remainder);
    } else {
      std::printf("%.6g,%.10e,%.10e,%.4e,%.4f\n", eps, kl.exact, kl.predictor, remainder, previous / remainder);
    }
    previous = remainder;
  }
  return 0;
}

struct FdOptions {
  double t = 0.5;
  double step = 1e-5;
  std::size_t batch = 20;
  double jitter = 0.1;
};

int cmd_oracle_fd(const CommonOptions& opts, const FdOptions& o) {
  const ExperimentConfig config = load(opts);
  const auto target = make_target(config.target);
  Rng rng = make_rng(config.seed);
  FlowStack stack(config.flow);
  stack.initialize(rng);
  std::normal_distribution<double> jitter(0.0, o.jitter);
  for (double& v : stack.params().values()) v += jitter(rng);
  const FlowBatch fixed = stack.sample(o.batch, rng);
  const std::vector<double> z0 = fixed.z0;

  LossFunction loss = [&](std::span<const double> p, std::span<double> grad) {
    std::copy(p.begin(), p.end(), stack.params().values().begin());
    const FlowBatch batch = stack.push_forward(z0);
    if (grad.empty()) return free_energy(batch, *target, o.t).value;
    std::fill(grad.begin(), grad.end(), 0.0);
    return free_energy_with_gradient(stack, batch, *target, o.t, grad).value;
  };
  const auto values = stack.params().values();
  const std::vector<double> params(values.begin(), values.end());
  const double err = fd_check(loss, params, o.step);
  std::printf("%s: %zu parameters, max relative error %.3e (step %g, t %g)\n", config.id.c_str(),
              params.size(), err, o.step, o.t);
  return 0;
}

struct DataOptions {
  std::string system;
  double noise_var = 0.0;
  std::vector<double> theta;
  std::uint64_t seed = 0;
  std::string out;
};

int cmd_make_data(const DataOptions& o) {
  if (!o.theta.empty() && o.theta.size() != 3) throw ConfigError("--theta", "expected 3 values");
  if (o.noise_var < 0.0) throw ConfigError("--noise-var", "must be non-negative");
  Rng rng = make_rng(o.seed);
  Dataset data;
  if (o.system == "lorenz") {
    const std::vector<double> theta = o.theta.empty() ? std::vector<double>{10.0, 8.0 / 3.0, 28.0} : o.theta;
    data = lorenz_dataset(theta, o.noise_var, rng);
  } else if (o.system == "hiv") {
    const std::vector<double> theta = o.theta.empty() ? std::vector<double>{1.2, 0.8, 1.5} : o.theta;
    data = hiv_dataset(theta, o.noise_var, rng);
  } else {
    throw ConfigError("--system", "expected lorenz or hiv");
  }
  const fs::path out(o.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_dataset(data, out);
  std::printf("wrote %zu observations to %s\n", data.size(), o.out.c_str());
  return 0;
}

void add_common(CLI::App* cmd, CommonOptions& opts, bool trials) {
  cmd->add_option("--config", opts.config, "experiment JSON")->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", opts.seed, "override the config seed");
  cmd->add_option("--out", opts.out, "output directory (default: <output>/<id>)");
  cmd->add_option("--progress", opts.progress, "print t and the loss every N updates to stderr");
  if (trials) cmd->add_option("--trials", opts.trials, "override the config trial count");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Annealed variational inference with normalizing flows"};
  app.require_subcommand(1);

  CommonOptions run_opts, sched_opts, sweep_opts, fd_common;
  auto* run = app.add_subcommand("run", "train one flow and write its artifacts");
  add_common(run, run_opts, false);
  auto* sched = app.add_subcommand("schedule-only", "run the annealing phase only (no refinement)");
  add_common(sched, sched_opts, false);
  auto* sw = app.add_subcommand("sweep", "independent trials and a capture report");
  add_common(sw, sweep_opts, true);

  auto* oracle = app.add_subcommand("oracle", "verification oracles");
  oracle->require_subcommand(1);
  KlOptions kl;
  auto* kl_cmd = oracle->add_subcommand("kl", "exact tempered KL against its second-order expansion");
  kl_cmd->add_option("--target", kl.target, "bimodal or gaussian");
  kl_cmd->add_option("--t", kl.t, "temperature")->check(CLI::PositiveNumber);
  kl_cmd->add_option("--eps", kl.eps, "first increment")->check(CLI::PositiveNumber);
  kl_cmd->add_option("--halvings", kl.halvings, "number of halvings of eps");
  kl_cmd->add_option("--points", kl.points, "quadrature nodes");
  kl_cmd->add_option("--lo", kl.lo, "left end of the quadrature interval");
  kl_cmd->add_option("--hi", kl.hi, "right end of the quadrature interval");
  FdOptions fd;
  auto* fd_cmd = oracle->add_subcommand("fd", "finite-difference check of the free-energy gradient");
  add_common(fd_cmd, fd_common, false);
  fd_cmd->add_option("--t", fd.t, "temperature")->check(CLI::Range(1e-12, 1.0));
  fd_cmd->add_option("--step", fd.step, "central-difference step")->check(CLI::PositiveNumber);
  fd_cmd->add_option("--batch", fd.batch, "fixed base samples");
  fd_cmd->add_option("--jitter", fd.jitter, "sd of the noise added to initial parameters");

  DataOptions data;
  auto* mk = app.add_subcommand("make-data", "synthetic ODE observations");
  mk->add_option("--system", data.system, "lorenz or hiv")->required();
  mk->add_option("--noise-var", data.noise_var, "observation noise variance")->required();
  mk->add_option("--theta", data.theta, "true parameters (3 values)")->expected(3);
  mk->add_option("--seed", data.seed, "noise seed");
  mk->add_option("--out", data.out, "CSV path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*run) return cmd_run(run_opts, false);
    if (*sched) return cmd_run(sched_opts, true);
    if (*sw) return cmd_sweep(sweep_opts);
    if (*kl_cmd) return cmd_oracle_kl(kl);
    if (*fd_cmd) return cmd_oracle_fd(fd_common, fd);
    if (*mk) return cmd_make_data(data);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const OracleFailure& e) {
    std::cerr << "oracle failure: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
