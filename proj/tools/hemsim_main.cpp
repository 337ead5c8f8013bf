// Command-line entry point: data generation, single SiL runs, estimator
// training, evaluation, the scenario matrix and plot data.
//
// Exit codes: 0 success, 1 usage error, 2 runtime error.

#include "hemsim/harness.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace hemsim;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

/// UTC stamp used to name run directories, e.g. 20260101T120000Z.
std::string timestamp()
{
  const std::time_t now = std::time(nullptr);
  std::tm utc{};
  gmtime_r(&now, &utc);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y%m%dT%H%M%SZ", &utc);
  return buf;
}

/// A fresh run directory under `out`; a numeric suffix resolves collisions
/// within the same second.
fs::path make_run_dir(const fs::path & out, const std::string & name)
{
  const std::string stem = name + "-" + timestamp();
  fs::path dir = out / stem;
  for (int n = 1; fs::exists(dir); ++n) { dir = out / (stem + "-" + std::to_string(n)); }
  fs::create_directories(dir);
  return dir;
}

/// HEMSIM_THREADS caps the configured worker count when set to a positive integer.
int capped_threads(int configured)
{
  const char * env = std::getenv("HEMSIM_THREADS");
  if (env == nullptr || *env == '\0') { return configured; }
  char * end = nullptr;
  const long cap = std::strtol(env, &end, 10);
  if (*end != '\0' || cap < 1) { throw ConfigError("HEMSIM_THREADS must be a positive integer, got '" + std::string(env) + "'"); }
  return std::min(configured, static_cast<int>(std::min(cap, 1024L)));
}

struct GenDataArgs
{
  std::uint64_t seed = 1;
  int days = 365;
  std::string year = "2021";
  fs::path out;
};

struct SimulateArgs
{
  fs::path config;
  fs::path out;
  bool log_solver = false;
};

struct TrainArgs
{
  fs::path data;
  std::string model;
  fs::path out;
  double ratio = 0.7;
  std::string split_mode = "chronological";
  std::uint64_t split_seed = 0;
  GbtHyperparameters gbt;
};

struct EvaluateArgs
{
  fs::path records;
  fs::path out;
  std::optional<fs::path> config;
};

struct MatrixArgs
{
  fs::path config;
  std::optional<fs::path> out;
};

struct PlotArgs
{
  fs::path records;
  std::vector<std::string> series;
  fs::path out;
};

void gen_data(const GenDataArgs & a)
{
  if (a.year != "2021" && a.year != "2022") { throw ConfigError("--year must be 2021 or 2022"); }
  if (a.days < 1) { throw ConfigError("--days must be >= 1"); }
  write_disturbances_csv(generate_disturbances(a.year, a.days, a.seed), a.out);
  std::cout << "wrote " << a.days * 48 << " rows to " << a.out.string() << '\n';
}

void simulate(const SimulateArgs & a)
{
  const auto config = load_scenario_config(a.config);
  const fs::path dir = make_run_dir(a.out, config.name);
  std::optional<std::ofstream> log;
  if (a.log_solver) { log.emplace(dir / "solver_log.jsonl"); }
  const auto result = run_scenario(config, log ? &*log : nullptr);
  write_trajectory_csv(result.records, dir / "trajectory.csv");
  write_metrics_json(result.metrics, dir / "metrics.json");
  if (!config.estimator.kind) {
    write_training_csv(collect_training_data(result.records, load_scenario_data(config)), dir / "training.csv");
  }
  std::cout << "run directory " << dir.string() << '\n'
            << std::setprecision(6) << "weighted_mae_K " << result.metrics.weighted_mae << '\n'
            << "mean_abs_comfort_dev_K " << result.metrics.mean_abs_comfort_dev << '\n'
            << "monetary_cost_total_EUR " << result.metrics.monetary_cost_total << '\n';
}

void train(const TrainArgs & a)
{
  const auto samples = load_training_csv(a.data);
  const auto kind = parse_estimator_kind(a.model);
  SplitMode mode{};
  if (a.split_mode == "chronological") {
    mode = SplitMode::Chronological;
  } else if (a.split_mode == "shuffled") {
    mode = SplitMode::Shuffled;
  } else {
    throw ConfigError("--split-mode must be chronological or shuffled");
  }
  const auto split = train_test_split(samples, a.ratio, mode, a.split_seed);
  const BundleMetadata meta{"steps " + std::to_string(split.train.front().step) + ".." +
                              std::to_string(split.train.back().step) + " (" + a.split_mode + ")",
                            a.data.string(), kFeatureSchemaVersion};
  const auto bundle = train_bundle(kind, split.train, a.gbt, meta);
  save_bundle(bundle, a.out);
  const auto weights = BuildingParameters::offenbach2021().capacity_weights();
  std::cout << std::setprecision(6) << "train_samples " << split.train.size() << '\n'
            << "test_samples " << split.test.size() << '\n'
            << "train_mae_K " << weighted_sum(weights, mean_abs_residual(&bundle, split.train)) << '\n'
            << "test_mae_K " << weighted_sum(weights, mean_abs_residual(&bundle, split.test)) << '\n';
}

void evaluate_records(const EvaluateArgs & a)
{
  PriceModel price;
  std::string name = a.records.stem().string();
  if (a.config) {
    const auto config = load_scenario_config(*a.config);
    price = config.price;
    name = config.name;
  }
  auto metrics = evaluate(load_trajectory_csv(a.records), BuildingParameters::offenbach2021().capacity_weights(), price);
  metrics.scenario = name;
  write_metrics_json(metrics, a.out);
  std::cout << std::setprecision(6) << "weighted_mae_K " << metrics.weighted_mae << '\n';
}

void matrix(const MatrixArgs & a)
{
  auto config = load_matrix_config(a.config);
  config.threads = capped_threads(config.threads);
  fs::path dir;
  if (a.out) { dir = make_run_dir(*a.out, config.base.name + "-matrix"); }
  const auto result = run_experiment_matrix(config, dir);
  std::cout << summary_table_text(result.rows);
  if (!dir.empty()) { std::cout << "run directory " << dir.string() << '\n'; }
}

void plot_data(const PlotArgs & a)
{
  write_plot_data(load_trajectory_csv(a.records), a.series, a.out);
  std::cout << "wrote " << a.series.size() << " series to " << a.out.string() << '\n';
}

}  // namespace

int main(int argc, char ** argv)
{
  CLI::App app{"Hierarchical building MPC with learned model-error compensation"};
  app.require_subcommand(1, 1);

  GenDataArgs gen;
  auto * gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic disturbance CSV");
  gen_cmd->add_option("--seed", gen.seed, "RNG seed")->capture_default_str();
  gen_cmd->add_option("--days", gen.days, "Number of days (48 steps each)")->capture_default_str();
  gen_cmd->add_option("--year", gen.year, "Data year: 2021 or the shifted 2022 analog")->capture_default_str();
  gen_cmd->add_option("--out", gen.out, "Output CSV file")->required();

  SimulateArgs sim;
  auto * sim_cmd = app.add_subcommand("simulate", "Run one closed-loop scenario");
  sim_cmd->add_option("--config", sim.config, "Scenario YAML file")->required()->check(CLI::ExistingFile);
  sim_cmd->add_option("--out", sim.out, "Parent directory of the run directory")->required();
  sim_cmd->add_flag("--log-solver", sim.log_solver, "Write per-solve telemetry to solver_log.jsonl");

  TrainArgs tr;
  auto * train_cmd = app.add_subcommand("train", "Fit an estimator bundle on training data and report MAE");
  train_cmd->add_option("--data", tr.data, "Training CSV")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--model", tr.model, "Estimator kind")->required()->check(CLI::IsMember({"linear", "gbt"}));
  train_cmd->add_option("--out", tr.out, "Output bundle JSON")->required();
  train_cmd->add_option("--split-ratio", tr.ratio, "Training fraction")->capture_default_str();
  train_cmd->add_option("--split-mode", tr.split_mode, "chronological or shuffled")
    ->check(CLI::IsMember({"chronological", "shuffled"}))
    ->capture_default_str();
  train_cmd->add_option("--split-seed", tr.split_seed, "Seed of the shuffled split")->capture_default_str();
  train_cmd->add_option("--trees", tr.gbt.n_trees, "GBT: number of trees")->capture_default_str();
  train_cmd->add_option("--depth", tr.gbt.max_depth, "GBT: maximum tree depth")->capture_default_str();
  train_cmd->add_option("--shrinkage", tr.gbt.shrinkage, "GBT: learning rate")->capture_default_str();
  train_cmd->add_option("--min-leaf", tr.gbt.min_leaf, "GBT: minimum samples per leaf")->capture_default_str();
  train_cmd->add_option("--subsample", tr.gbt.subsample, "GBT: row fraction per tree")->capture_default_str();
  train_cmd->add_option("--seed", tr.gbt.seed, "GBT: subsampling seed")->capture_default_str();

  EvaluateArgs ev;
  auto * eval_cmd = app.add_subcommand("evaluate", "Recompute metrics from a trajectory CSV");
  eval_cmd->add_option("--records", ev.records, "Trajectory CSV")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--out", ev.out, "Output metrics JSON")->required();
  eval_cmd->add_option("--config", ev.config, "Scenario YAML supplying the price model and name")
    ->check(CLI::ExistingFile);

  MatrixArgs mx;
  auto * matrix_cmd = app.add_subcommand("matrix", "Run the scenario matrix and print the summary table");
  matrix_cmd->add_option("--config", mx.config, "Matrix YAML file")->required()->check(CLI::ExistingFile);
  matrix_cmd->add_option("--out", mx.out, "Parent directory of the run directory; omit to keep results in memory");

  PlotArgs pl;
  auto * plot_cmd = app.add_subcommand("plot-data", "Emit long-format series for external plotting");
  plot_cmd->add_option("--records", pl.records, "Trajectory CSV")->required()->check(CLI::ExistingFile);
  plot_cmd->add_option("--series", pl.series, "Comma-separated series, e.g. theta_b,residual_z1")
    ->required()
    ->delimiter(',');
  plot_cmd->add_option("--out", pl.out, "Output CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError & e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*gen_cmd) { gen_data(gen); }
    if (*sim_cmd) { simulate(sim); }
    if (*train_cmd) { train(tr); }
    if (*eval_cmd) { evaluate_records(ev); }
    if (*matrix_cmd) { matrix(mx); }
    if (*plot_cmd) { plot_data(pl); }
  } catch (const std::exception & e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return 0;
}
