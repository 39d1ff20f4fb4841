#pragma once

// Declarative experiment runner behind the `adaann` command line tool.

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "adaann/annealing.hpp"
#include "adaann/flows.hpp"
#include "adaann/optimizer.hpp"
#include "adaann/random.hpp"
#include "adaann/targets.hpp"

namespace adaann {

struct TargetSpec {
  std::string kind;  // bimodal | gmm1d | gmm2d | gaussian | lorenz | hiv
  double mu = 0.0;
  ModePlacement placement = ModePlacement::kSymmetric;
  std::vector<double> mean;  // gaussian
  std::vector<double> var;   // gaussian
  std::filesystem::path dataset;  // lorenz, hiv
  double noise_var = 0.0;
  std::optional<std::vector<double>> truth;
};

struct CaptureSpec {
  std::optional<double> radius;  // default depends on the target
  double threshold = 0.05;
};

struct ExperimentConfig {
  std::string id;
  FlowSpec flow;
  SchedulerConfig scheduler;
  OptimizerSpec optimizer;
  /// Learning rate by target mu; overrides optimizer.lr when non-empty.
  std::map<double, double> lr_table;
  TargetSpec target;
  CaptureSpec capture;
  std::size_t samples = 10000;  // final draws for samples.csv, stats and capture
  std::size_t trials = 1;
  std::uint64_t seed = 0;
  std::filesystem::path output = "runs";
  nlohmann::json source;  // the document as read, echoed into config.json

  /// Learning rate after applying lr_table.
  double learning_rate() const;
};

/// Throws ConfigError naming the offending field (e.g. "scheduler.tau").
/// Relative dataset paths resolve against `base_dir`.
ExperimentConfig parse_config(const nlohmann::json& doc, const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path);

std::unique_ptr<TargetDensity> make_target(const TargetSpec& spec);
/// Column names for samples.csv.
std::vector<std::string> parameter_names(const TargetSpec& spec, std::size_t dim);
/// Detector radius used when the config leaves it unset.
double default_capture_radius(const TargetSpec& spec);

struct CaptureResult {
  std::vector<bool> captured;      // per mode
  std::vector<double> fractions;   // share of samples within the radius, per mode
  bool all = false;                // every mode captured (false when there are none)
};

/// Mode m is captured iff at least `threshold` of the rows of `samples`
/// (n x dim) lie within Euclidean distance `radius` of it.
CaptureResult capture_metric(std::span<const double> samples, std::size_t dim,
                             std::span<const Point> modes, double radius,
                             double threshold);

struct MomentSummary {
  std::size_t n = 0;
  std::vector<double> mean;
  std::vector<double> sd;
};

struct PosteriorStats {
  MomentSummary all;
  // Split by the sign of the first coordinate (HIV: admissible p1 > 0).
  std::optional<MomentSummary> positive;
  std::optional<MomentSummary> negative;
};

MomentSummary moments(std::span<const double> samples, std::size_t dim);
PosteriorStats posterior_stats(std::span<const double> samples, std::size_t dim, bool split_by_sign);
/// Draws `n` samples from the flow and summarizes them.
PosteriorStats posterior_stats(const FlowStack& stack, std::size_t n, Rng& rng, bool split_by_sign);

struct RunOptions {
  bool schedule_only = false;  // skip refinement, keep only the annealing trace
  bool write_artifacts = true;
  bool record_losses = true;
  std::size_t progress_every = 0;  // report (iteration, t, loss) to stderr; 0 is silent
};

struct RunSummary {
  std::string id;
  std::uint64_t seed = 0;
  std::size_t trial = 0;
  AnnealState schedule;
  std::size_t parameter_updates = 0;
  double final_free_energy = 0.0;
  double wall_seconds = 0.0;
  CaptureResult capture;
  PosteriorStats stats;
  std::vector<double> samples;  // final draws (samples x dim)
  std::size_t dim = 0;

  nlohmann::json to_json() const;
};

/// One training run from the stream (seed, trial). With write_artifacts the
/// directory receives config.json, checkpoint.json, schedule.csv, loss.csv,
/// samples.csv and stats.json.
RunSummary run_experiment(const ExperimentConfig& config, std::size_t trial,
                          const std::filesystem::path& dir, const RunOptions& options = {});

struct TrialOutcome {
  std::size_t trial = 0;
  bool ok = false;
  std::string error;
  CaptureResult capture;
  std::size_t increments = 0;
  std::size_t parameter_updates = 0;
};

struct CaptureReport {
  std::string id;
  std::vector<TrialOutcome> trials;
  std::size_t captured = 0;
  double rate = 0.0;                 // captured / total trials
  std::vector<double> mean_fraction; // per mode, over successful trials

  nlohmann::json to_json() const;
};

/// Runs `trials` independent trials (stream i for trial i), each in
/// dir/trial_XXX, and writes dir/capture_report.json. Failed trials are
/// recorded and count as not captured.
CaptureReport sweep(const ExperimentConfig& config, std::size_t trials,
                    const std::filesystem::path& dir, const RunOptions& options = {});

void write_samples_csv(std::span<const double> samples, std::size_t dim,
                       const std::vector<std::string>& names, const std::filesystem::path& path);

}  // namespace adaann
