#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include <sys/wait.h>

#include <doctest.h>
#include <json.hpp>

#include "adaann/errors.hpp"
#include "adaann/experiment.hpp"
#include "adaann/targets.hpp"

using namespace adaann;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json small_config() {
  return json::parse(R"({
    "id": "small",
    "seed": 11,
    "samples": 400,
    "flow": {"type": "planar", "dim": 1, "layers": 4, "base": {"mean": [0], "var": [4]}},
    "target": {"kind": "bimodal"},
    "scheduler": {"kind": "adaann", "t0": 0.2, "tau": 0.2, "T0": 20, "T": 2, "T1": 20,
                  "N": 20, "N1": 50, "M": 50},
    "optimizer": {"lr": 0.005}
  })");
}

std::string path_of(const json& doc) {
  try {
    parse_config(doc);
  } catch (const ConfigError& e) {
    return e.path();
  }
  return "<accepted>";
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("adaann_test_" + name);
  fs::remove_all(dir);
  return dir;
}

}  // namespace

TEST_CASE("a minimal config parses with defaults filled in") {
  const ExperimentConfig c = parse_config(small_config());
  CHECK(c.id == "small");
  CHECK(c.trials == 1);
  CHECK(c.capture.threshold == doctest::Approx(0.05));
  CHECK(c.learning_rate() == doctest::Approx(0.005));
  CHECK(default_capture_radius(c.target) == doctest::Approx(0.5));
}

TEST_CASE("config errors name the offending field") {
  json doc = small_config();
  doc["flow"]["depth"] = 3;
  CHECK(path_of(doc) == "flow.depth");

  doc = small_config();
  doc["scheduler"].erase("tau");
  CHECK(path_of(doc) == "scheduler.tau");

  doc = small_config();
  doc.erase("id");
  CHECK(path_of(doc) == "id");

  doc = small_config();
  doc["optimizer"]["lr"] = -1.0;
  CHECK(path_of(doc) == "optimizer.lr");

  doc = small_config();
  doc["flow"]["dim"] = 2;
  doc["flow"]["base"] = json::object();
  CHECK(path_of(doc) == "flow.dim");

  doc = small_config();
  doc["target"] = {{"kind", "gmm1d"}, {"mu", 3}};
  doc["optimizer"] = {{"lr_table", {{{"mu", 1}, {"lr", 0.01}}}}};
  CHECK(path_of(doc) == "optimizer.lr_table");

  doc = small_config();
  doc["optimizer"] = {{"lr_table", {{{"mu", 1}}}}};
  CHECK(path_of(doc) == "optimizer.lr_table[0].lr");

  doc = small_config();
  doc["target"] = {{"kind", "lorenz"}, {"dataset", "/nonexistent/data.csv"}, {"noise_var", 0.1}};
  doc["flow"]["dim"] = 3;
  doc["flow"]["base"] = json::object();
  CHECK(path_of(doc) == "target.dataset");

  doc = small_config();
  doc["capture"] = {{"threshold", 1.5}};
  CHECK(path_of(doc) == "capture.threshold");
}

TEST_CASE("lr_table selects the rate for the target mu") {
  json doc = small_config();
  doc["target"] = {{"kind", "gmm1d"}, {"mu", 4}, {"placement", "asymmetric"}};
  doc["optimizer"] = {{"lr_table", {{{"mu", 1}, {"lr", 0.01}}, {{"mu", 4}, {"lr", 0.001}}}}};
  CHECK(parse_config(doc).learning_rate() == doctest::Approx(0.001));
}

TEST_CASE("every shipped config loads") {
  std::size_t n = 0;
  for (const auto& entry : fs::directory_iterator(ADAANN_CONFIG_DIR)) {
    if (entry.path().extension() != ".json") continue;
    CAPTURE(entry.path().string());
    CHECK_NOTHROW(load_config(entry.path()));
    ++n;
  }
  CHECK(n >= 8);
}

TEST_CASE("capture metric") {
  const std::vector<Point> modes{{-1.0}, {1.0}};

  SUBCASE("all samples at one mode") {
    const std::vector<double> s(1000, 1.0);
    const CaptureResult r = capture_metric(s, 1, modes, 0.5, 0.05);
    CHECK_FALSE(r.captured[0]);
    CHECK(r.captured[1]);
    CHECK_FALSE(r.all);
    CHECK(r.fractions[1] == doctest::Approx(1.0));
  }

  SUBCASE("an equal mixture captures both") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> noise(0.0, 0.1);
    std::vector<double> s;
    for (int i = 0; i < 2000; ++i) s.push_back((i % 2 ? 1.0 : -1.0) + noise(rng));
    const CaptureResult r = capture_metric(s, 1, modes, 0.5, 0.05);
    CHECK(r.all);
    CHECK(r.fractions[0] == doctest::Approx(0.5).epsilon(0.02));
  }

  SUBCASE("exact draws from the symmetric 1-D mixture at radius 3 SD") {
    const auto target = GaussianMixture1d::with_separation(2.0, ModePlacement::kSymmetric);
    const std::vector<Point> m = target.modes();
    REQUIRE(m.size() == 2);
    std::mt19937_64 rng(9);
    std::normal_distribution<double> noise(0.0, 0.25);
    std::bernoulli_distribution coin(0.5);
    std::vector<double> s(10000);
    for (double& v : s) v = (coin(rng) ? m[0][0] : m[1][0]) + noise(rng);
    const CaptureResult r = capture_metric(s, 1, m, 0.75, 0.05);
    CHECK(r.all);
    // Each mode holds half the mass, 99.73% of it inside 3 SD.
    for (double f : r.fractions) CHECK(f == doctest::Approx(0.5 * 0.9973).epsilon(0.05));
  }

  SUBCASE("samples spread far wider than the modes capture neither") {
    std::vector<double> s;
    for (int i = 0; i < 1000; ++i) s.push_back(-500.0 + i);
    const CaptureResult r = capture_metric(s, 1, modes, 0.5, 0.05);
    CHECK_FALSE(r.captured[0]);
    CHECK_FALSE(r.captured[1]);
  }

  SUBCASE("sample order does not matter") {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> draw(0.0, 1.2);
    std::vector<double> s(3000);
    for (double& v : s) v = draw(rng);
    const CaptureResult a = capture_metric(s, 1, modes, 0.5, 0.05);
    std::shuffle(s.begin(), s.end(), rng);
    const CaptureResult b = capture_metric(s, 1, modes, 0.5, 0.05);
    CHECK(a.fractions == b.fractions);
  }

  SUBCASE("no modes is never all captured") {
    const std::vector<double> s(10, 0.0);
    CHECK_FALSE(capture_metric(s, 1, {}, 0.5, 0.05).all);
  }
}

TEST_CASE("posterior stats") {
  SUBCASE("a degenerate sample has zero spread") {
    const std::vector<double> s{2.0, 3.0, 2.0, 3.0, 2.0, 3.0};
    const MomentSummary m = moments(s, 2);
    CHECK(m.n == 3);
    CHECK(m.mean[0] == doctest::Approx(2.0));
    CHECK(m.sd[1] == doctest::Approx(0.0));
  }

  SUBCASE("splitting by the sign of the first coordinate") {
    const std::vector<double> s{1.0, 5.0, 3.0, 7.0, -2.0, 0.0};
    const PosteriorStats p = posterior_stats(s, 2, true);
    REQUIRE(p.positive);
    REQUIRE(p.negative);
    CHECK(p.positive->n == 2);
    CHECK(p.positive->mean[1] == doctest::Approx(6.0));
    CHECK(p.negative->n == 1);
    CHECK(p.negative->mean[0] == doctest::Approx(-2.0));
    CHECK(p.all.mean[0] == doctest::Approx(2.0 / 3.0));
  }
}

TEST_CASE("a run writes every artifact and is reproducible") {
  const ExperimentConfig c = parse_config(small_config());
  const fs::path a = scratch("run_a");
  const fs::path b = scratch("run_b");
  const RunSummary ra = run_experiment(c, 0, a);
  run_experiment(c, 0, b);
  for (const char* name : {"config.json", "checkpoint.json", "schedule.csv", "loss.csv", "samples.csv", "stats.json"}) {
    CAPTURE(name);
    CHECK(fs::exists(a / name));
  }
  CHECK(slurp(a / "samples.csv") == slurp(b / "samples.csv"));
  CHECK(slurp(a / "schedule.csv") == slurp(b / "schedule.csv"));

  const json stats = json::parse(slurp(a / "stats.json"));
  CHECK(stats["temperature_increments"].get<std::size_t>() == ra.schedule.increments());
  CHECK(stats["parameter_updates"].get<std::size_t>() == ra.parameter_updates);
  CHECK(ra.parameter_updates == 20 + 2 * ra.schedule.increments() + 20);
  CHECK(ra.samples.size() == 400);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("sweep trials use independent streams") {
  ExperimentConfig c = parse_config(small_config());
  RunOptions quiet;
  quiet.write_artifacts = false;
  const fs::path dir = scratch("sweep");
  const CaptureReport report = sweep(c, 2, dir, quiet);
  REQUIRE(report.trials.size() == 2);
  const RunSummary alone = run_experiment(c, 1, dir / "alone", quiet);
  CHECK(report.trials[1].increments == alone.schedule.increments());
  CHECK(report.trials[1].capture.fractions == alone.capture.fractions);
  const RunSummary first = run_experiment(c, 0, dir / "first", quiet);
  CHECK(first.samples != alone.samples);
  fs::remove_all(dir);
}

TEST_CASE("the no-annealing scheduler trains only at t = 1") {
  json doc = small_config();
  doc["scheduler"] = {{"kind", "none"}, {"T0", 15}, {"N", 20}};
  RunOptions quiet;
  quiet.write_artifacts = false;
  const RunSummary r = run_experiment(parse_config(doc), 0, {}, quiet);
  CHECK(r.schedule.increments() == 0);
  CHECK(r.parameter_updates == 15);
}

#ifdef ADAANN_CLI_PATH
namespace {

int cli(const std::string& args) {
  const std::string cmd = std::string(ADAANN_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path write_config(const fs::path& dir, const json& doc) {
  fs::create_directories(dir);
  const fs::path p = dir / "config.json";
  std::ofstream(p) << doc.dump(2);
  return p;
}

}  // namespace

TEST_CASE("cli exit codes") {
  const fs::path dir = scratch("cli");
  const fs::path good = write_config(dir / "good", small_config());
  CHECK(cli("run --config " + good.string() + " --out " + (dir / "out").string()) == 0);
  CHECK(fs::exists(dir / "out" / "stats.json"));

  json bad = small_config();
  bad["scheduler"]["tau"] = "fast";
  CHECK(cli("run --config " + write_config(dir / "bad", bad).string()) == 2);
  CHECK(cli("run") == 2);
  CHECK(cli("frobnicate") == 2);

  json doomed = small_config();
  doomed["target"] = {{"kind", "gaussian"}, {"mean", {1e200}}, {"var", {1.0}}};
  CHECK(cli("run --config " + write_config(dir / "doomed", doomed).string() + " --out " +
            (dir / "doomed_out").string()) == 3);
  fs::remove_all(dir);
}
#endif
