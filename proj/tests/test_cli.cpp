#include <doctest.h>

#include "hemsim/estimators.hpp"
#include "hemsim/rng.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

using namespace hemsim;
namespace fs = std::filesystem;

namespace {

struct Result
{
  int code = -1;
  std::string out;
  std::string err;
};

/// Runs the CLI with `args` from `dir`, capturing both streams.
Result run(const fs::path & dir, const std::string & args)
{
  const auto err_file = dir / "stderr.txt";
  const std::string command = "cd \"" + dir.string() + "\" && \"" HEMSIM_CLI "\" " + args + " 2> \"" +
                              err_file.string() + "\"";
  Result r;
  FILE * pipe = popen(command.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::array<char, 512> buf{};
  while (std::fgets(buf.data(), static_cast<int>(buf.size()), pipe) != nullptr) { r.out += buf.data(); }
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream err(err_file);
  r.err.assign(std::istreambuf_iterator<char>(err), {});
  fs::remove(err_file);
  return r;
}

fs::path fresh_dir(const std::string & name)
{
  const auto dir = fs::temp_directory_path() / ("hemsim_test_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

double printed(const std::string & text, const std::string & key)
{
  std::istringstream in(text);
  std::string k;
  double v = 0.0;
  while (in >> k) {
    if (k == key && in >> v) { return v; }
  }
  FAIL("key " << key << " not printed");
  return 0.0;
}

/// Files below `dir`, excluding directories.
std::vector<fs::path> files_below(const fs::path & dir)
{
  std::vector<fs::path> out;
  for (const auto & e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) { out.push_back(fs::relative(e.path(), dir)); }
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

TEST_CASE("usage errors exit with 1 and print to the error stream")
{
  const auto dir = fresh_dir("usage");
  auto r = run(dir, "");
  CHECK(r.code == 1);
  CHECK(r.err.find("subcommand") != std::string::npos);
  r = run(dir, "simulate --bogus x");
  CHECK(r.code == 1);
  CHECK_FALSE(r.err.empty());
  r = run(dir, "train --data x.csv --model forest --out b.json");
  CHECK(r.code == 1);
  r = run(dir, "gen-data --seed 1 matrix");
  CHECK(r.code == 1);
}

TEST_CASE("help documents every flag of every subcommand")
{
  const auto dir = fresh_dir("help");
  const std::vector<std::pair<std::string, std::vector<std::string>>> flags{
    {"gen-data", {"--seed", "--days", "--year", "--out"}},
    {"simulate", {"--config", "--out", "--log-solver"}},
    {"train",
     {"--data", "--model", "--out", "--split-ratio", "--split-mode", "--split-seed", "--trees", "--depth", "--shrinkage",
      "--min-leaf", "--subsample", "--seed"}},
    {"evaluate", {"--records", "--out", "--config"}},
    {"matrix", {"--config", "--out"}},
    {"plot-data", {"--records", "--series", "--out"}}};
  for (const auto & [cmd, names] : flags) {
    const auto r = run(dir, cmd + " --help");
    CHECK(r.code == 0);
    for (const auto & f : names) {
      INFO(cmd << " " << f);
      CHECK(r.out.find(f) != std::string::npos);
    }
  }
}

TEST_CASE("runtime errors exit with 2")
{
  const auto dir = fresh_dir("runtime");
  std::ofstream(dir / "bad.yaml") << "schema_version: 1\nduration_days: 1\n";
  const auto r = run(dir, "simulate --config bad.yaml --out runs");
  CHECK(r.code == 2);
  CHECK(r.err.find("duration_days") != std::string::npos);
  std::ofstream(dir / "empty.csv") << "step,tod\n";
  CHECK(run(dir, "train --data empty.csv --model linear --out b.json").code == 2);
}

TEST_CASE("gen-data is deterministic per seed")
{
  const auto dir = fresh_dir("gen");
  REQUIRE(run(dir, "gen-data --seed 4 --days 2 --out a.csv").code == 0);
  REQUIRE(run(dir, "gen-data --seed 4 --days 2 --out b.csv").code == 0);
  REQUIRE(run(dir, "gen-data --seed 5 --days 2 --year 2022 --out c.csv").code == 0);
  auto slurp = [&](const char * name) {
    std::ifstream in(dir / name);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  CHECK(slurp("a.csv") == slurp("b.csv"));
  CHECK(slurp("a.csv") != slurp("c.csv"));
  const auto text = slurp("a.csv");
  CHECK(std::count(text.begin(), text.end(), '\n') == 1 + 96);
}

TEST_CASE("simulate, evaluate and plot-data on the degenerate twin")
{
  const auto dir = fresh_dir("simulate");
  std::ofstream(dir / "twin.yaml") << "schema_version: 1\nname: twin\nduration_days: 2\nplant: {preset: degenerate}\n";
  const auto r = run(dir, "simulate --config twin.yaml --out runs --log-solver");
  REQUIRE(r.code == 0);
  std::vector<fs::path> runs;
  for (const auto & e : fs::directory_iterator(dir / "runs")) { runs.push_back(e.path()); }
  REQUIRE(runs.size() == 1);
  const auto run_dir = runs.front();
  CHECK(run_dir.filename().string().rfind("twin-", 0) == 0);
  CHECK(files_below(run_dir) ==
        std::vector<fs::path>{"metrics.json", "solver_log.jsonl", "training.csv", "trajectory.csv"});

  std::ifstream in(run_dir / "metrics.json");
  const auto metrics = nlohmann::json::parse(in);
  CHECK(metrics.at("weighted_mae").get<double>() <= 1e-6);
  CHECK(metrics.at("steps").get<long>() == 96);
  CHECK(printed(r.out, "weighted_mae_K") <= 1e-6);

  const auto rel = fs::relative(run_dir, dir).string();
  REQUIRE(run(dir, "evaluate --records " + rel + "/trajectory.csv --config twin.yaml --out out/metrics.json").code == 2);
  fs::create_directories(dir / "out");
  REQUIRE(run(dir, "evaluate --records " + rel + "/trajectory.csv --config twin.yaml --out out/metrics.json").code == 0);
  std::ifstream again(dir / "out/metrics.json");
  CHECK(nlohmann::json::parse(again) == metrics);

  REQUIRE(run(dir, "plot-data --records " + rel + "/trajectory.csv --series theta_b,residual_z1,eps_z9 --out out/plot.csv")
            .code == 0);
  std::ifstream plot(dir / "out/plot.csv");
  std::string line;
  std::getline(plot, line);
  CHECK(line == "step,series,value");
  long rows = 0;
  while (std::getline(plot, line)) { ++rows; }
  CHECK(rows == 3 * 96);
  CHECK(run(dir, "plot-data --records " + rel + "/trajectory.csv --series theta_z0 --out out/bad.csv").code == 2);
}

TEST_CASE("train recovers a planted linear model")
{
  const auto dir = fresh_dir("train");
  SplitMix64 rng(8);
  std::vector<TrainingSample> samples;
  for (long k = 0; k < 960; ++k) {
    TrainingSample s;
    s.step = k;
    s.features.theta_air_now = rng.uniform(-10.0, 30.0);
    s.features.theta_air_lags = {rng.uniform(-10.0, 30.0), rng.uniform(-10.0, 30.0)};
    s.features.p_dem = rng.uniform(150.0, 400.0);
    s.features.tod = 0.5 * static_cast<double>(k % 48);
    s.features.doy = 1 + static_cast<int>(k / 48);
    const auto model = LinearZoneModel::from_coefficients({1e-4, 0.01, -0.02, 0.003, 0.05, -0.04, 0.02, 0.01, 0.1});
    for (auto & e : s.eps) { e = model.predict(s.features); }
    samples.push_back(s);
  }
  write_training_csv(samples, dir / "planted.csv");
  const auto r = run(dir, "train --data planted.csv --model linear --out linear.json");
  REQUIRE(r.code == 0);
  CHECK(printed(r.out, "test_mae_K") <= 1e-8);
  CHECK(printed(r.out, "train_samples") == 672);
  CHECK(load_bundle(dir / "linear.json").kind == EstimatorKind::Linear);

  const auto g = run(dir, "train --data planted.csv --model gbt --trees 20 --split-mode shuffled --out gbt.json");
  REQUIRE(g.code == 0);
  CHECK(load_bundle(dir / "gbt.json").gbt.front().trees.size() == 20);
}
