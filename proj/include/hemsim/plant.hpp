#pragma once

/**
 * @file
 * @brief Digital-twin surrogate of the building and disturbance data.
 *
 * The plant is deliberately richer than the controller models. On top of the
 * 9-zone RC network it realizes heat flows the gray-box models do not know
 * about: occupancy gains, scheduled ventilation, heat released by electrical
 * consumption, CHP modulation limits with part-load efficiency, and a seasonal
 * drift of the envelope losses. Each term can be switched off; with all of
 * them off the plant reproduces the distributor model exactly.
 */

#include "hemsim/ssmodel.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace hemsim {

inline constexpr double kBatteryCapacity = 98.0;     // kWh
inline constexpr double kBatteryPowerLimit = 32.9;   // kW
inline constexpr double kChpMaxPower = 199.0;        // kW electrical

struct PlantConfig
{
  /// Peak occupancy heat gain of the whole building, shared over zones 1-7
  /// in proportion to their capacities (kW).
  double occupancy_gain_peak = 110.0;
  /// Extra ambient exchange during occupied hours, shared like occupancy (kW/K).
  double ventilation_ua = 8.0;
  /// Fraction of the electrical demand released as heat in zones 1-7.
  double demand_to_heat_fraction = 0.25;
  /// (load fraction, thermal efficiency multiplier) breakpoints; empty means 1.
  std::vector<std::pair<double, double>> chp_efficiency_curve{{0.5, 0.85}, {1.0, 1.0}};
  /// Relative amplitude of the seasonal envelope-loss drift.
  double seasonal_envelope_drift = 0.2;
  /// CHP cannot run below this fraction of its rated power.
  double chp_min_load_fraction = 0.5;
  /// Minimum time between CHP on/off switches (h).
  double chp_min_dwell_h = 1.0;
  /// Day-to-day relative spread of occupancy.
  double occupancy_noise = 0.1;
  std::uint64_t noise_seed = 1;

  /// All augmentations off: the plant degenerates to the distributor model.
  static PlantConfig degenerate();

  void validate() const;
  double chp_efficiency(double load_fraction) const;
};

struct PlantState
{
  Eigen::VectorXd zone_temps = Eigen::VectorXd::Constant(kZones, 22.0);
  double battery_energy = 49.0;
  double chp_power_actual = 0.0;
  /// Time since the last CHP on/off switch (h).
  double chp_on_timer = 24.0;

  // Diagnostics of the last step.
  double grid_power_actual = 0.0;
  double chp_mean_power = 0.0;
  int clip_events = 0;
};

/// One row of disturbance data.
struct DisturbanceRow
{
  double theta_air = 0.0;  ///< degC
  double p_dem = 0.0;      ///< kW, consumption (>= 0)
  double p_pv = 0.0;       ///< kW, PV generation (>= 0)
};

/// Half-hourly disturbance data. Powers are stored as non-negative magnitudes;
/// the electrical balance uses +p_pv for generation and -p_dem for demand.
struct DisturbanceSeries
{
  long first_step = 0;
  std::vector<double> theta_air;
  std::vector<double> p_dem;
  std::vector<double> p_pv;

  std::size_t size() const { return theta_air.size(); }
  DisturbanceRow row(std::size_t index) const { return {theta_air.at(index), p_dem.at(index), p_pv.at(index)}; }
  /// Row for absolute step k.
  DisturbanceRow at_step(long k) const { return row(static_cast<std::size_t>(k - first_step)); }

  void validate() const;
  bool operator==(const DisturbanceSeries &) const = default;
};

/// Advance the plant one control step (0.5 h, integrated in 5 substeps).
///
/// `u_dis` holds Qheat_1..9 and Qcool_1..9; `u_agg` holds Pgrid, Pchp, Qrad,
/// Qcool_b, Qcool_s. Inputs are clipped to the actuator ranges.
PlantState plant_step(
  const BuildingParameters & truth,
  const PlantConfig & cfg,
  const PlantState & state,
  const Eigen::VectorXd & u_dis,
  const Eigen::VectorXd & u_agg,
  const DisturbanceRow & d,
  double tod,
  int doy);

/// Occupancy level in [0, ~1.3] for the given time.
double occupancy_level(const PlantConfig & cfg, double tod, int doy);

/// eps(k) = x(k+1) - x(1|k), with x(1|k) recomputed from measured data.
Eigen::VectorXd measure_error(const Eigen::VectorXd & x_measured_next, const Eigen::VectorXd & x_pred_recomputed);

/// Synthetic year of weather and load for the given label ("2021" or the
/// shifted "2022" analog).
DisturbanceSeries generate_disturbances(const std::string & year, int days, std::uint64_t seed);

/// CSV with header `step,theta_air_C,p_dem_kW,p_pv_kW`.
DisturbanceSeries load_disturbances_csv(const std::filesystem::path & path);
void write_disturbances_csv(const DisturbanceSeries & series, const std::filesystem::path & path);

/// Model disturbance vectors built from a data row.
Eigen::VectorXd aggregator_disturbance(const BuildingParameters & params, const DisturbanceRow & d);
Eigen::VectorXd distributor_disturbance(const BuildingParameters & params, const DisturbanceRow & d);

}  // namespace hemsim
