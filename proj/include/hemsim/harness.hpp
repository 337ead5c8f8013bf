#pragma once

/**
 * @file
 * @brief Software-in-the-loop runs of the hierarchical controller against the
 * plant, residual data collection, metrics and the scenario matrix.
 */

#include "hemsim/compensation.hpp"
#include "hemsim/estimators.hpp"
#include "hemsim/mpc.hpp"
#include "hemsim/plant.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace hemsim {

inline constexpr int kScenarioSchemaVersion = 1;

class ConfigError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

class SilError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

struct DataSource
{
  enum class Kind { Generated, Csv };
  Kind kind = Kind::Generated;
  std::string year = "2021";  ///< generated: "2021" or the shifted "2022" analog
  std::uint64_t seed = 1;
  std::filesystem::path path;  ///< csv
};

struct CapacityScenario
{
  enum class Mode { Exact, Scale, Shifted };
  Mode mode = Mode::Exact;
  double factor = 1.0;     ///< Scale
  std::uint64_t seed = 0;  ///< Shifted

  std::string label() const;
};

struct EstimatorChoice
{
  std::optional<EstimatorKind> kind;  ///< empty: no compensation
  std::filesystem::path bundle;
};

struct ScenarioConfig
{
  int schema_version = kScenarioSchemaVersion;
  std::string name = "scenario";
  DataSource data;
  CapacityScenario capacity;
  EstimatorChoice estimator;
  PlantConfig plant;
  PriceModel price;
  int np = 48;
  double ts = 0.5;
  int start_day = 0;
  int duration_days = 7;
  GbtHyperparameters gbt;
  double split_ratio = 0.7;
  SplitMode split_mode = SplitMode::Chronological;
  std::uint64_t split_seed = 0;

  /// Throws ConfigError.
  void validate() const;
  long start_step() const;
  long steps() const;
};

/// Settings of the experiment matrix on top of a base scenario.
struct MatrixConfig
{
  ScenarioConfig base;  ///< the 2021 exact-capacity scenario
  DataSource generalization{DataSource::Kind::Generated, "2022", 2, {}};
  std::vector<double> scale_factors{0.5, 1.5};
  std::uint64_t shift_seed = 7;
  int threads = 1;
};

ScenarioConfig load_scenario_config(const std::filesystem::path & path);
MatrixConfig load_matrix_config(const std::filesystem::path & path);

/// Data for the config's steps plus the prediction horizon.
DisturbanceSeries load_scenario_data(const ScenarioConfig & config);

/// One draw per coupling pair: C_shift = min(C_i, C_j) * fraction * direction.
struct CapacityShift
{
  double fraction = 0.0;   ///< [0, 0.5]
  double direction = 1.0;  ///< +1 or -1
};

/// Draws in canonical coupling-pair order: fraction ~ U[0, 0.5), then an
/// equiprobable direction.
std::vector<CapacityShift> draw_capacity_shifts(std::uint64_t seed);

/// Moves capacity between coupled zones in canonical pair order, each pair
/// using the values left by the previous ones. Total capacity is unchanged.
/// Throws std::invalid_argument on a draw count or range mismatch.
BuildingParameters apply_capacity_shifts(const BuildingParameters & params, std::span<const CapacityShift> draws);

BuildingParameters shift_capacities(const BuildingParameters & params, std::uint64_t seed);

/// The controller's parameter set for a capacity scenario.
BuildingParameters controller_parameters(const BuildingParameters & truth, const CapacityScenario & scenario);

struct SilRecord
{
  long step = 0;
  double tod = 0.0;
  int doy = 1;
  DisturbanceRow disturbance;
  ZoneArray zone_temps{};       ///< measured at k
  double battery_energy = 0.0;  ///< measured at k
  double theta_b = 0.0;         ///< capacity-weighted, true capacities
  double theta_s = 0.0;
  std::array<double, agg::nu> u_agg{};  ///< applied u(0|k) of the aggregator
  std::array<double, dis::nu> u_dis{};  ///< applied u(0|k) of the distributor
  ZoneArray zone_pred{};        ///< controller model x(1|k) from measured data
  ZoneArray eps{};              ///< x(k+1) - zone_pred
  ZoneArray eps_tilde{};        ///< compensation used at n = 0
  double theta_b_pred = 0.0;    ///< aggregator plan theta_b(1|k)
  double theta_b_next = 0.0;    ///< measured theta_b(k+1)
  double grid_power = 0.0;      ///< realized mean over the step, kW
  double chp_power = 0.0;       ///< realized mean over the step, kW
  double step_cost = 0.0;       ///< realized EUR
  int agg_iterations = 0;
  int dis_iterations = 0;
  double agg_ms = 0.0;
  double dis_ms = 0.0;
  bool missing_history = false;
};

struct MetricsReport
{
  std::string scenario;
  long steps = 0;
  double weighted_mae = 0.0;  ///< K
  ZoneArray per_zone_mae{};   ///< K
  ZoneArray weights{};
  double mean_abs_comfort_dev = 0.0;  ///< mean |theta_b - 22|, K
  double monetary_cost_total = 0.0;   ///< EUR, energy and gas plus peak charge
  double max_theta_b_prediction_error = 0.0;  ///< max |theta_b(1|k) - theta_b(k+1)|, K
};

struct SilOptions
{
  const EstimatorBundle * estimator = nullptr;
  /// Feed the controller the plant's true one-step errors, found per step
  /// by fixed-point iteration. Overrides `estimator`.
  bool oracle = false;
  /// Solver settings of both controllers.
  QpSettings qp = mpc_qp_settings();
  /// JSON lines with per-step solver telemetry.
  std::ostream * solver_log = nullptr;
};

struct SilResult
{
  std::vector<SilRecord> records;
  MetricsReport metrics;
  int oracle_max_iterations = 0;
};

/// Closed loop over config.steps() steps. Only u(0|k) of each plan reaches
/// the plant. Throws SilError with the step index on a solver failure.
SilResult run_sil(const ScenarioConfig & config, const DisturbanceSeries & data, const SilOptions & options = {});

/// Loads data and the configured estimator bundle, then runs.
SilResult run_scenario(const ScenarioConfig & config, std::ostream * solver_log = nullptr);

/// Residual metrics with the given zone weights plus trajectory aggregates.
MetricsReport evaluate(const std::vector<SilRecord> & records, const ZoneArray & weights, const PriceModel & price);

/// One row per record after the first kHistory records of the run.
std::vector<TrainingSample> collect_training_data(const std::vector<SilRecord> & records, const DisturbanceSeries & data);

void write_trajectory_csv(const std::vector<SilRecord> & records, const std::filesystem::path & path);
std::vector<SilRecord> load_trajectory_csv(const std::filesystem::path & path);
std::string metrics_to_json(const MetricsReport & metrics);
void write_metrics_json(const MetricsReport & metrics, const std::filesystem::path & path);

/// Long-format series (step, series, value) for plotting. Known series:
/// theta_b, theta_s, E, theta_z<i>, eps_z<i>, eps_tilde_z<i>, residual_z<i>
/// (eps_tilde - eps) and the applied inputs by name.
void write_plot_data(const std::vector<SilRecord> & records, const std::vector<std::string> & series, const std::filesystem::path & path);

struct SummaryRow
{
  std::string estimator;  ///< "Linear" or "XGBoost"
  std::string scenario;   ///< "2021", "2022", "2021 50%", "2021 150%", "2021 shifted"
  double baseline = 0.0;  ///< K
  std::optional<double> train;
  std::optional<double> test;
  double sil = 0.0;

  /// Test MAE above twice the train MAE.
  bool overfitting() const { return train && test && *test > 2.0 * *train; }
};

struct MatrixResult
{
  std::vector<SummaryRow> rows;
  std::map<std::string, MetricsReport> runs;  ///< keyed by run name
};

/// Baselines, training, compensated runs, generalization and capacity
/// scenarios. Runs fan out over config.threads workers.
MatrixResult run_experiment_matrix(const MatrixConfig & config, const std::filesystem::path & out_dir = {});

/// Table with MAE columns in 1e-3 K.
std::string summary_table_csv(const std::vector<SummaryRow> & rows);
std::string summary_table_text(const std::vector<SummaryRow> & rows);

}  // namespace hemsim
