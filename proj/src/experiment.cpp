#include "adaann/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <initializer_list>
#include <numbers>
#include <set>
#include <sstream>

#include "adaann/errors.hpp"
#include "adaann/ode.hpp"

namespace adaann {

using nlohmann::json;

namespace {

std::string join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

void only_keys(const json& obj, const std::string& path, std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw ConfigError(path.empty() ? "<root>" : path, "expected an object");
  const std::set<std::string> keys(allowed.begin(), allowed.end());
  for (const auto& item : obj.items()) {
    if (!keys.count(item.key())) throw ConfigError(join(path, item.key()), "unknown field");
  }
}

const json* find(const json& obj, const char* key) {
  const auto it = obj.find(key);
  return it == obj.end() ? nullptr : &*it;
}

const json& require(const json& obj, const std::string& path, const char* key) {
  const json* v = find(obj, key);
  if (!v) throw ConfigError(join(path, key), "required field is missing");
  return *v;
}

double number(const json& v, const std::string& path) {
  if (!v.is_number()) throw ConfigError(path, "expected a number");
  return v.get<double>();
}

double number_or(const json& obj, const std::string& path, const char* key, double fallback) {
  const json* v = find(obj, key);
  return v ? number(*v, join(path, key)) : fallback;
}

std::size_t count(const json& v, const std::string& path) {
  if (!v.is_number_integer() && !v.is_number_unsigned()) throw ConfigError(path, "expected an integer");
  const auto n = v.get<std::int64_t>();
  if (n < 0) throw ConfigError(path, "must be non-negative");
  return static_cast<std::size_t>(n);
}

std::size_t count_or(const json& obj, const std::string& path, const char* key, std::size_t fallback) {
  const json* v = find(obj, key);
  return v ? count(*v, join(path, key)) : fallback;
}

std::string text(const json& v, const std::string& path) {
  if (!v.is_string()) throw ConfigError(path, "expected a string");
  return v.get<std::string>();
}

std::vector<double> numbers(const json& v, const std::string& path) {
  if (!v.is_array()) throw ConfigError(path, "expected an array of numbers");
  std::vector<double> out;
  for (std::size_t i = 0; i < v.size(); ++i) out.push_back(number(v[i], path + "[" + std::to_string(i) + "]"));
  return out;
}

void positive(double v, const std::string& path) {
  if (!(v > 0.0)) throw ConfigError(path, "must be positive");
}

FlowSpec parse_flow(const json& j) {
  const std::string p = "flow";
  only_keys(j, p, {"type", "dim", "layers", "base", "planar_sharpness", "planar_init", "hidden", "split"});
  FlowSpec spec;
  spec.kind = flow_kind_from_string(text(require(j, p, "type"), "flow.type"));
  spec.dim = count(require(j, p, "dim"), "flow.dim");
  spec.layers = count(require(j, p, "layers"), "flow.layers");
  if (spec.dim == 0) throw ConfigError("flow.dim", "must be positive");
  if (spec.layers == 0) throw ConfigError("flow.layers", "must be positive");
  const json* base = find(j, "base");
  spec.base = DiagGaussian{std::vector<double>(spec.dim, 0.0), std::vector<double>(spec.dim, 1.0)};
  if (base) {
    only_keys(*base, "flow.base", {"mean", "var"});
    if (const json* m = find(*base, "mean")) spec.base.mean = numbers(*m, "flow.base.mean");
    if (const json* v = find(*base, "var")) spec.base.var = numbers(*v, "flow.base.var");
  }
  spec.planar_sharpness = number_or(j, p, "planar_sharpness", spec.planar_sharpness);
  spec.planar_init = number_or(j, p, "planar_init", spec.planar_init);
  if (const json* h = find(j, "hidden")) {
    if (!h->is_array() || h->empty()) throw ConfigError("flow.hidden", "expected a non-empty array of widths");
    spec.hidden.clear();
    for (std::size_t i = 0; i < h->size(); ++i) {
      spec.hidden.push_back(count((*h)[i], "flow.hidden[" + std::to_string(i) + "]"));
    }
  }
  spec.split = count_or(j, p, "split", 0);
  spec.validate();
  return spec;
}

SchedulerConfig parse_scheduler(const json& j) {
  const std::string p = "scheduler";
  only_keys(j, p, {"kind", "t0", "eps", "tau", "M", "T0", "T", "T1", "N", "N1", "eps_max", "eps_min"});
  SchedulerConfig c;
  c.kind = scheduler_kind_from_string(text(require(j, p, "kind"), "scheduler.kind"));
  c.t0 = number_or(j, p, "t0", c.t0);
  c.eps = number_or(j, p, "eps", c.eps);
  c.tau = number_or(j, p, "tau", c.tau);
  c.M = count_or(j, p, "M", c.M);
  c.T0 = count_or(j, p, "T0", c.T0);
  c.T = count_or(j, p, "T", c.T);
  c.T1 = count_or(j, p, "T1", 0);
  c.N = count_or(j, p, "N", c.N);
  c.N1 = count_or(j, p, "N1", c.N);
  c.eps_max = number_or(j, p, "eps_max", c.eps_max);
  c.eps_min = number_or(j, p, "eps_min", c.eps_min);
  if (c.kind == SchedulerKind::kLinear && !find(j, "eps")) throw ConfigError("scheduler.eps", "required for linear");
  if (c.kind == SchedulerKind::kAdaAnn && !find(j, "tau")) throw ConfigError("scheduler.tau", "required for adaann");
  if (c.kind != SchedulerKind::kNone && !find(j, "t0")) throw ConfigError("scheduler.t0", "required field is missing");
  if (c.T0 == 0 && c.kind == SchedulerKind::kNone) throw ConfigError("scheduler.T0", "must be positive");
  if (c.T == 0 && c.kind != SchedulerKind::kNone) throw ConfigError("scheduler.T", "must be positive");
  c.validate();
  return c;
}

void parse_optimizer(const json& j, ExperimentConfig& config) {
  const std::string p = "optimizer";
  only_keys(j, p, {"lr", "lr_table", "refine"});
  OptimizerSpec& o = config.optimizer;
  const json* lr = find(j, "lr");
  const json* table = find(j, "lr_table");
  if (!lr && !table) throw ConfigError("optimizer.lr", "give lr or lr_table");
  if (lr) {
    o.lr = number(*lr, "optimizer.lr");
    positive(o.lr, "optimizer.lr");
  }
  if (table) {
    if (!table->is_array() || table->empty()) throw ConfigError("optimizer.lr_table", "expected a non-empty array");
    for (std::size_t i = 0; i < table->size(); ++i) {
      const std::string q = "optimizer.lr_table[" + std::to_string(i) + "]";
      only_keys((*table)[i], q, {"mu", "lr"});
      const double mu = number(require((*table)[i], q, "mu"), q + ".mu");
      const double rate = number(require((*table)[i], q, "lr"), q + ".lr");
      positive(rate, q + ".lr");
      config.lr_table[mu] = rate;
    }
  }
  if (const json* r = find(j, "refine")) {
    const std::string q = "optimizer.refine";
    only_keys(*r, q, {"lr", "gamma", "interval"});
    if (const json* v = find(*r, "lr")) {
      o.refine_lr = number(*v, q + ".lr");
      positive(*o.refine_lr, q + ".lr");
    }
    o.decay_gamma = number_or(*r, q, "gamma", 1.0);
    positive(o.decay_gamma, q + ".gamma");
    o.decay_interval = count_or(*r, q, "interval", 0);
  }
}

TargetSpec parse_target(const json& j, const std::filesystem::path& base_dir) {
  const std::string p = "target";
  only_keys(j, p, {"kind", "mu", "placement", "mean", "var", "dataset", "noise_var", "truth"});
  TargetSpec t;
  t.kind = text(require(j, p, "kind"), "target.kind");
  if (t.kind == "gmm1d" || t.kind == "gmm2d") {
    t.mu = number(require(j, p, "mu"), "target.mu");
    if (t.kind == "gmm1d") {
      const std::string placement = find(j, "placement") ? text(j["placement"], "target.placement") : "symmetric";
      if (placement == "symmetric") {
        t.placement = ModePlacement::kSymmetric;
      } else if (placement == "asymmetric") {
        t.placement = ModePlacement::kAsymmetric;
      } else {
        throw ConfigError("target.placement", "expected symmetric or asymmetric");
      }
    }
  } else if (t.kind == "gaussian") {
    t.mean = numbers(require(j, p, "mean"), "target.mean");
    t.var = find(j, "var") ? numbers(j["var"], "target.var") : std::vector<double>(t.mean.size(), 1.0);
    if (t.mean.empty() || t.var.size() != t.mean.size()) {
      throw ConfigError("target.var", "mean and var must be non-empty and of equal length");
    }
  } else if (t.kind == "lorenz" || t.kind == "hiv") {
    t.dataset = text(require(j, p, "dataset"), "target.dataset");
    if (t.dataset.is_relative() && !base_dir.empty()) t.dataset = base_dir / t.dataset;
    if (!std::filesystem::exists(t.dataset)) {
      throw ConfigError("target.dataset", "file not found: " + t.dataset.string());
    }
    t.noise_var = number(require(j, p, "noise_var"), "target.noise_var");
    positive(t.noise_var, "target.noise_var");
  } else if (t.kind != "bimodal") {
    throw ConfigError("target.kind", "expected bimodal, gmm1d, gmm2d, gaussian, lorenz or hiv");
  }
  if (const json* truth = find(j, "truth")) {
    t.truth = numbers(*truth, "target.truth");
    if (t.truth->size() != 3) throw ConfigError("target.truth", "expected 3 values");
  }
  return t;
}

std::size_t target_dim(const TargetSpec& t) {
  if (t.kind == "bimodal" || t.kind == "gmm1d") return 1;
  if (t.kind == "gmm2d") return 2;
  if (t.kind == "gaussian") return t.mean.size();
  return 3;
}

}  // namespace

double ExperimentConfig::learning_rate() const {
  if (lr_table.empty()) return optimizer.lr;
  const auto it = lr_table.find(target.mu);
  if (it == lr_table.end()) {
    throw ConfigError("optimizer.lr_table", "no entry for target mu " + std::to_string(target.mu));
  }
  return it->second;
}

ExperimentConfig parse_config(const json& doc, const std::filesystem::path& base_dir) {
  only_keys(doc, "", {"$schema", "id", "seed", "trials", "samples", "output", "flow", "target", "scheduler",
                      "optimizer", "capture"});
  ExperimentConfig c;
  c.source = doc;
  c.id = text(require(doc, "", "id"), "id");
  if (const json* s = find(doc, "seed")) {
    if (!s->is_number_unsigned() && !(s->is_number_integer() && s->get<std::int64_t>() >= 0)) {
      throw ConfigError("seed", "expected a non-negative integer");
    }
    c.seed = s->get<std::uint64_t>();
  }
  c.trials = count_or(doc, "", "trials", 1);
  if (c.trials == 0) throw ConfigError("trials", "must be positive");
  c.samples = count_or(doc, "", "samples", c.samples);
  if (c.samples < 2) throw ConfigError("samples", "must be at least 2");
  if (const json* o = find(doc, "output")) c.output = text(*o, "output");
  c.flow = parse_flow(require(doc, "", "flow"));
  c.target = parse_target(require(doc, "", "target"), base_dir);
  if (target_dim(c.target) != c.flow.dim) throw ConfigError("flow.dim", "does not match the target dimension");
  c.scheduler = parse_scheduler(require(doc, "", "scheduler"));
  parse_optimizer(require(doc, "", "optimizer"), c);
  c.learning_rate();  // validates lr_table coverage
  if (const json* cap = find(doc, "capture")) {
    only_keys(*cap, "capture", {"radius", "threshold"});
    if (const json* r = find(*cap, "radius")) {
      c.capture.radius = number(*r, "capture.radius");
      positive(*c.capture.radius, "capture.radius");
    }
    c.capture.threshold = number_or(*cap, "capture", "threshold", c.capture.threshold);
    if (!(c.capture.threshold > 0.0 && c.capture.threshold <= 1.0)) {
      throw ConfigError("capture.threshold", "must lie in (0, 1]");
    }
  }
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("<file>", "cannot open " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("<file>", std::string("invalid JSON: ") + e.what());
  }
  return parse_config(doc, path.parent_path());
}

std::unique_ptr<TargetDensity> make_target(const TargetSpec& spec) {
  if (spec.kind == "bimodal") return std::make_unique<BimodalTarget>();
  if (spec.kind == "gmm1d") {
    return std::make_unique<GaussianMixture1d>(GaussianMixture1d::with_separation(spec.mu, spec.placement));
  }
  if (spec.kind == "gmm2d") return std::make_unique<GaussianMixture2d>(spec.mu);
  if (spec.kind == "gaussian") return std::make_unique<GaussianTarget>(spec.mean, spec.var);
  if (spec.kind == "lorenz") {
    return std::make_unique<LorenzPosterior>(read_dataset(spec.dataset), spec.noise_var, 0.025, spec.truth);
  }
  if (spec.kind == "hiv") {
    return std::make_unique<HivPosterior>(read_dataset(spec.dataset), spec.noise_var, 0.05, HivConstants{},
                                          spec.truth);
  }
  throw ConfigError("target.kind", "unknown target '" + spec.kind + "'");
}

std::vector<std::string> parameter_names(const TargetSpec& spec, std::size_t dim) {
  if (spec.kind == "lorenz") return {"s", "b", "r"};
  if (spec.kind == "hiv") return {"p1", "p2", "x20"};
  std::vector<std::string> names;
  for (std::size_t i = 0; i < dim; ++i) names.push_back("z" + std::to_string(i + 1));
  return names;
}

double default_capture_radius(const TargetSpec& spec) {
  // Three component standard deviations for the mixtures (sd 1/4).
  if (spec.kind == "bimodal") return 0.5;
  if (spec.kind == "gmm1d") return 0.75;
  if (spec.kind == "gmm2d") return 3.0 / (4.0 * std::numbers::sqrt2);
  return 1.0;
}

CaptureResult capture_metric(std::span<const double> samples, std::size_t dim,
                             std::span<const Point> modes, double radius,
                             double threshold) {
  if (dim == 0 || samples.size() % dim != 0) throw UsageError("capture: sample buffer is not n x dim");
  const std::size_t n = samples.size() / dim;
  CaptureResult out;
  out.all = !modes.empty() && n > 0;
  const double r2 = radius * radius;
  for (const auto& mode : modes) {
    if (mode.size() != dim) throw UsageError("capture: mode dimension mismatch");
    std::size_t inside = 0;
    for (std::size_t i = 0; i < n; ++i) {
      double d2 = 0.0;
      for (std::size_t j = 0; j < dim; ++j) {
        const double diff = samples[i * dim + j] - mode[j];
        d2 += diff * diff;
      }
      if (d2 <= r2) ++inside;
    }
    const double fraction = n ? static_cast<double>(inside) / static_cast<double>(n) : 0.0;
    out.fractions.push_back(fraction);
    out.captured.push_back(fraction >= threshold);
    out.all = out.all && out.captured.back();
  }
  return out;
}

MomentSummary moments(std::span<const double> samples, std::size_t dim) {
  MomentSummary m;
  m.n = samples.size() / dim;
  m.mean.assign(dim, 0.0);
  m.sd.assign(dim, 0.0);
  if (m.n == 0) return m;
  for (std::size_t i = 0; i < m.n; ++i) {
    for (std::size_t j = 0; j < dim; ++j) m.mean[j] += samples[i * dim + j];
  }
  for (double& v : m.mean) v /= static_cast<double>(m.n);
  if (m.n < 2) return m;
  for (std::size_t i = 0; i < m.n; ++i) {
    for (std::size_t j = 0; j < dim; ++j) {
      const double d = samples[i * dim + j] - m.mean[j];
      m.sd[j] += d * d;
    }
  }
  for (double& v : m.sd) v = std::sqrt(v / static_cast<double>(m.n - 1));
  return m;
}

PosteriorStats posterior_stats(std::span<const double> samples, std::size_t dim, bool split_by_sign) {
  PosteriorStats stats;
  stats.all = moments(samples, dim);
  if (split_by_sign) {
    std::vector<double> pos, neg;
    for (std::size_t i = 0; i + dim <= samples.size(); i += dim) {
      auto& side = samples[i] > 0.0 ? pos : neg;
      side.insert(side.end(), samples.begin() + static_cast<std::ptrdiff_t>(i),
                  samples.begin() + static_cast<std::ptrdiff_t>(i + dim));
    }
    stats.positive = moments(pos, dim);
    stats.negative = moments(neg, dim);
  }
  return stats;
}

PosteriorStats posterior_stats(const FlowStack& stack, std::size_t n, Rng& rng, bool split_by_sign) {
  const FlowBatch batch = stack.sample(n, rng);
  return posterior_stats(batch.zL, stack.dim(), split_by_sign);
}

namespace {

json moments_json(const MomentSummary& m) { return {{"n", m.n}, {"mean", m.mean}, {"sd", m.sd}}; }

json capture_json(const CaptureResult& c) {
  std::vector<bool> captured(c.captured.begin(), c.captured.end());
  return {{"captured", captured}, {"fractions", c.fractions}, {"all", c.all}};
}

}  // namespace

json RunSummary::to_json() const {
  json j;
  j["id"] = id;
  j["seed"] = seed;
  j["trial"] = trial;
  j["temperature_increments"] = schedule.increments();
  j["temperatures_visited"] = schedule.trace.size();
  j["parameter_updates"] = parameter_updates;
  j["final_free_energy"] = final_free_energy;
  j["wall_seconds"] = wall_seconds;
  j["capture"] = capture_json(capture);
  json post = {{"all", moments_json(stats.all)}};
  if (stats.positive) post["positive_first_coordinate"] = moments_json(*stats.positive);
  if (stats.negative) post["negative_first_coordinate"] = moments_json(*stats.negative);
  j["posterior"] = post;
  return j;
}

void write_samples_csv(std::span<const double> samples, std::size_t dim,
                       const std::vector<std::string>& names, const std::filesystem::path& path) {
  std::FILE* f = std::fopen(path.string().c_str(), "w");
  if (!f) throw Error("cannot write " + path.string());
  for (std::size_t j = 0; j < dim; ++j) std::fprintf(f, j ? ",%s" : "%s", names[j].c_str());
  std::fputc('\n', f);
  for (std::size_t i = 0; i + dim <= samples.size(); i += dim) {
    for (std::size_t j = 0; j < dim; ++j) std::fprintf(f, j ? ",%.17g" : "%.17g", samples[i + j]);
    std::fputc('\n', f);
  }
  std::fclose(f);
}

namespace {

void write_json(const json& j, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

}  // namespace

RunSummary run_experiment(const ExperimentConfig& config, std::size_t trial,
                          const std::filesystem::path& dir, const RunOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  const auto target = make_target(config.target);
  Rng rng = make_rng(config.seed, trial);
  FlowStack stack(config.flow);
  stack.initialize(rng);

  SchedulerConfig scheduler = config.scheduler;
  if (options.schedule_only) scheduler.T1 = 0;
  OptimizerSpec optimizer = config.optimizer;
  optimizer.lr = config.learning_rate();

  TrainingHooks hooks;
  hooks.record_losses = options.record_losses && options.write_artifacts;
  if (options.progress_every > 0) {
    hooks.on_update = [&](std::size_t it, double t, double loss) {
      if (it % options.progress_every == 0) std::fprintf(stderr, "[%s/%zu] update %zu  t %.6g  F %.6g\n", config.id.c_str(), trial, it, t, loss);
    };
  }
  const TrainingResult training = run_annealed_training(scheduler, stack, *target, optimizer, rng, hooks);

  RunSummary summary;
  summary.id = config.id;
  summary.seed = config.seed;
  summary.trial = trial;
  summary.schedule = training.schedule;
  summary.parameter_updates = training.parameter_updates;
  summary.final_free_energy = training.final_loss.value;
  summary.dim = stack.dim();

  const FlowBatch draws = stack.sample(config.samples, rng);
  summary.samples = draws.zL;
  const auto modes = target->modes();
  summary.capture = capture_metric(summary.samples, summary.dim, modes,
                                   config.capture.radius.value_or(default_capture_radius(config.target)),
                                   config.capture.threshold);
  summary.stats = posterior_stats(summary.samples, summary.dim, config.target.kind == "hiv");
  summary.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  if (options.write_artifacts) {
    std::filesystem::create_directories(dir);
    write_json(config.source, dir / "config.json");
    save_checkpoint(stack, dir / "checkpoint.json");
    write_schedule_csv(training.schedule, dir / "schedule.csv");
    write_loss_csv(training.losses, dir / "loss.csv");
    write_samples_csv(summary.samples, summary.dim, parameter_names(config.target, summary.dim),
                      dir / "samples.csv");
    write_json(summary.to_json(), dir / "stats.json");
  }
  return summary;
}

json CaptureReport::to_json() const {
  json j;
  j["id"] = id;
  j["trials"] = trials.size();
  j["captured"] = captured;
  j["rate"] = rate;
  j["mean_fraction"] = mean_fraction;
  json rows = json::array();
  for (const auto& t : trials) {
    json row = {{"trial", t.trial}, {"ok", t.ok}};
    if (t.ok) {
      row["capture"] = capture_json(t.capture);
      row["temperature_increments"] = t.increments;
      row["parameter_updates"] = t.parameter_updates;
    } else {
      row["error"] = t.error;
    }
    rows.push_back(row);
  }
  j["per_trial"] = rows;
  return j;
}

CaptureReport sweep(const ExperimentConfig& config, std::size_t trials, const std::filesystem::path& dir,
                    const RunOptions& options) {
  if (trials == 0) throw UsageError("sweep: trials must be at least 1");
  CaptureReport report;
  report.id = config.id;
  std::size_t ok = 0;
  for (std::size_t i = 0; i < trials; ++i) {
    TrialOutcome outcome;
    outcome.trial = i;
    char name[32];
    std::snprintf(name, sizeof name, "trial_%03zu", i);
    try {
      const RunSummary run = run_experiment(config, i, dir / name, options);
      outcome.ok = true;
      outcome.capture = run.capture;
      outcome.increments = run.schedule.increments();
      outcome.parameter_updates = run.parameter_updates;
      if (report.mean_fraction.empty()) report.mean_fraction.assign(run.capture.fractions.size(), 0.0);
      for (std::size_t m = 0; m < run.capture.fractions.size(); ++m) {
        report.mean_fraction[m] += run.capture.fractions[m];
      }
      ++ok;
      if (run.capture.all) ++report.captured;
    } catch (const NumericError& e) {
      outcome.error = e.what();
    }
    report.trials.push_back(std::move(outcome));
  }
  for (double& f : report.mean_fraction) f /= static_cast<double>(std::max<std::size_t>(ok, 1));
  report.rate = static_cast<double>(report.captured) / static_cast<double>(trials);
  if (options.write_artifacts) {
    std::filesystem::create_directories(dir);
    write_json(report.to_json(), dir / "capture_report.json");
  }
  return report;
}

}  // namespace adaann
