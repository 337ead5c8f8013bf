#include "hemsim/plant.hpp"

#include "hemsim/calendar.hpp"
#include "hemsim/csv.hpp"
#include "hemsim/rng.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace hemsim {

namespace {

constexpr int kSubsteps = 5;
constexpr double kSubstepHours = kStepHours / kSubsteps;
constexpr double kClipTolerance = 1e-6;
constexpr double kTwoPi = 2.0 * std::numbers::pi;

bool finite(const Eigen::VectorXd & v) { return v.allFinite(); }

void require_finite(double v, const char * what)
{
  if (!std::isfinite(v)) { throw std::invalid_argument(std::string("non-finite ") + what); }
}

/// Shares of zones 1-7 proportional to their capacities; servers get none.
ZoneArray building_shares(const BuildingParameters & p)
{
  ZoneArray s{};
  const double cb = p.cth_building();
  for (int i = 0; i < kBuildingZones; ++i) { s[i] = p.cth[i] / cb; }
  return s;
}

double clip(double v, double lo, double hi, int & events)
{
  if (v < lo - kClipTolerance || v > hi + kClipTolerance) { ++events; }
  return std::clamp(v, lo, hi);
}

/// Day-level occupancy multiplier, a pure function of seed and day.
double daily_occupancy_factor(const PlantConfig & cfg, int doy)
{
  if (cfg.occupancy_noise == 0.0) { return 1.0; }
  SplitMix64 g(derive_seed(cfg.noise_seed, static_cast<std::uint64_t>(doy)));
  return std::clamp(g.normal(1.0, cfg.occupancy_noise), 0.5, 1.5);
}

/// Next CHP output given the request and the switching history. Updates timer.
double chp_substep(const PlantConfig & cfg, double request, double current, double & timer)
{
  const double floor = cfg.chp_min_load_fraction * kChpMaxPower;
  double target = request;
  if (floor > 0.0) { target = (request < 0.5 * floor) ? 0.0 : std::max(request, floor); }
  const bool on = current > 0.0;
  const bool want_on = target > 0.0;
  if (want_on != on) {
    if (timer + 1e-9 < cfg.chp_min_dwell_h) {
      target = on ? std::max(floor, std::min(std::max(request, floor), kChpMaxPower)) : 0.0;
      if (on && target <= 0.0) { target = current; }
    } else {
      timer = 0.0;
    }
  }
  timer += kSubstepHours;
  return std::clamp(target, 0.0, kChpMaxPower);
}

}  // namespace

PlantConfig PlantConfig::degenerate()
{
  PlantConfig c;
  c.occupancy_gain_peak = 0.0;
  c.ventilation_ua = 0.0;
  c.demand_to_heat_fraction = 0.0;
  c.chp_efficiency_curve.clear();
  c.seasonal_envelope_drift = 0.0;
  c.chp_min_load_fraction = 0.0;
  c.chp_min_dwell_h = 0.0;
  c.occupancy_noise = 0.0;
  return c;
}

void PlantConfig::validate() const
{
  auto check = [](bool ok, const char * msg) {
    if (!ok) { throw std::invalid_argument(std::string("plant config: ") + msg); }
  };
  check(std::isfinite(occupancy_gain_peak) && occupancy_gain_peak >= 0.0, "occupancy_gain_peak must be finite and >= 0");
  check(std::isfinite(ventilation_ua) && ventilation_ua >= 0.0, "ventilation_ua must be finite and >= 0");
  check(demand_to_heat_fraction >= 0.0 && demand_to_heat_fraction <= 1.0, "demand_to_heat_fraction must lie in [0, 1]");
  check(std::isfinite(seasonal_envelope_drift) && std::abs(seasonal_envelope_drift) < 1.0,
        "seasonal_envelope_drift must be finite with magnitude < 1");
  check(chp_min_load_fraction >= 0.0 && chp_min_load_fraction <= 1.0, "chp_min_load_fraction must lie in [0, 1]");
  check(std::isfinite(chp_min_dwell_h) && chp_min_dwell_h >= 0.0, "chp_min_dwell_h must be finite and >= 0");
  check(std::isfinite(occupancy_noise) && occupancy_noise >= 0.0, "occupancy_noise must be finite and >= 0");
  double last = -1.0;
  for (const auto & [load, mult] : chp_efficiency_curve) {
    check(load >= 0.0 && load <= 1.0 && load > last, "chp_efficiency_curve loads must increase within [0, 1]");
    check(std::isfinite(mult) && mult > 0.0, "chp_efficiency_curve multipliers must be positive");
    last = load;
  }
}

double PlantConfig::chp_efficiency(double load_fraction) const
{
  const auto & c = chp_efficiency_curve;
  if (c.empty()) { return 1.0; }
  if (load_fraction <= c.front().first) { return c.front().second; }
  if (load_fraction >= c.back().first) { return c.back().second; }
  for (std::size_t k = 1; k < c.size(); ++k) {
    if (load_fraction <= c[k].first) {
      const double t = (load_fraction - c[k - 1].first) / (c[k].first - c[k - 1].first);
      return c[k - 1].second + t * (c[k].second - c[k - 1].second);
    }
  }
  return c.back().second;
}

double occupancy_level(const PlantConfig & cfg, double tod, int doy)
{
  if (!is_occupied(tod, doy)) { return 0.0; }
  double shape = 1.0;
  if (tod < 9.0) {
    shape = 0.4 + 0.3 * (tod - 7.0);
  } else if (tod >= 12.0 && tod < 13.0) {
    shape = 0.8;
  } else if (tod >= 17.0) {
    shape = 1.0 - 0.3 * (tod - 17.0);
  }
  return shape * daily_occupancy_factor(cfg, doy);
}

PlantState plant_step(
  const BuildingParameters & truth,
  const PlantConfig & cfg,
  const PlantState & state,
  const Eigen::VectorXd & u_dis,
  const Eigen::VectorXd & u_agg,
  const DisturbanceRow & d,
  double tod,
  int doy)
{
  if (u_dis.size() != dis::nu || u_agg.size() != agg::nu || state.zone_temps.size() != kZones) {
    throw std::invalid_argument("plant_step: dimension mismatch");
  }
  if (!finite(u_dis) || !finite(u_agg) || !finite(state.zone_temps)) {
    throw std::invalid_argument("plant_step: non-finite input");
  }
  require_finite(d.theta_air, "theta_air");
  require_finite(d.p_dem, "p_dem");
  require_finite(d.p_pv, "p_pv");
  require_finite(tod, "time of day");

  PlantState next = state;
  next.clip_events = 0;
  int & clips = next.clip_events;

  const ZoneArray shares = building_shares(truth);
  const bool occupied = is_occupied(tod, doy);
  const double drift = 1.0 + cfg.seasonal_envelope_drift * std::sin(kTwoPi * doy / 365.0);
  const double occupancy = cfg.occupancy_gain_peak * occupancy_level(cfg, tod, doy);
  const double demand_heat = cfg.demand_to_heat_fraction * std::max(d.p_dem, 0.0);

  // Time-invariant part of the zone dynamics over this step.
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(kZones, kZones);
  Eigen::VectorXd h_eff(kZones);
  for (int i = 0; i < kZones; ++i) {
    h_eff[i] = truth.hair[i] * drift + (occupied ? cfg.ventilation_ua * shares[i] : 0.0);
    double coupled = 0.0;
    for (int j = 0; j < kZones; ++j) {
      if (j == i) { continue; }
      const double b = truth.beta(i, j);
      a(i, j) = b / truth.cth[i];
      coupled += b;
    }
    a(i, i) = -(h_eff[i] + coupled) / truth.cth[i];
  }
  Eigen::MatrixXd aug = Eigen::MatrixXd::Zero(2 * kZones, 2 * kZones);
  aug.topLeftCorner(kZones, kZones) = a * kSubstepHours;
  aug.topRightCorner(kZones, kZones) = Eigen::MatrixXd::Identity(kZones, kZones) * kSubstepHours;
  const Eigen::MatrixXd e = aug.exp();
  const Eigen::MatrixXd phi = e.topLeftCorner(kZones, kZones);
  const Eigen::MatrixXd gamma = e.topRightCorner(kZones, kZones);

  // Actuator commands, clipped to their physical ranges.
  Eigen::VectorXd q_heat(kZones), q_cool(kZones);
  for (int i = 0; i < kZones; ++i) {
    q_heat[i] = clip(u_dis[dis::qheat(i)], 0.0, i < kBuildingZones ? 1e6 : 0.0, clips);
    q_cool[i] = clip(u_dis[dis::qcool(i)], -1e6, 0.0, clips);
  }
  const double chp_request = clip(u_agg[agg::Pchp], 0.0, kChpMaxPower, clips);
  const double p_grid_cmd = clip(u_agg[agg::Pgrid], -1000.0, 1000.0, clips);
  const double q_cool_total = clip(u_agg[agg::QcoolB], -1e6, 0.0, clips) + clip(u_agg[agg::QcoolS], -1e6, 0.0, clips);
  const double heat_requested = q_heat.head(kBuildingZones).sum();
  const double chp_heat_requested = chp_request / truth.c_chp;

  Eigen::VectorXd x = state.zone_temps;
  double energy = state.battery_energy;
  double chp = state.chp_power_actual;
  double timer = state.chp_on_timer;
  double grid_sum = 0.0, chp_sum = 0.0;

  for (int sub = 0; sub < kSubsteps; ++sub) {
    chp = chp_substep(cfg, chp_request, chp, timer);
    const double chp_heat = chp / truth.c_chp * cfg.chp_efficiency(chp / kChpMaxPower);

    // Heat delivery differs from the plan by the CHP shortfall or surplus,
    // spread over the zones in proportion to their requested heat.
    const double delta = chp_heat - chp_heat_requested;
    Eigen::VectorXd heat = q_heat;
    if (delta != 0.0) {
      if (heat_requested > 1e-9) {
        heat.head(kBuildingZones) *= std::max(0.0, 1.0 + delta / heat_requested);
      } else {
        for (int i = 0; i < kBuildingZones; ++i) { heat[i] = std::max(0.0, delta) * shares[i]; }
      }
    }

    Eigen::VectorXd forcing(kZones);
    for (int i = 0; i < kZones; ++i) {
      const double gain = (occupancy + demand_heat) * shares[i];
      forcing[i] = (heat[i] + q_cool[i] + truth.q_other[i] + gain + h_eff[i] * d.theta_air) / truth.cth[i];
    }
    x = phi * x + gamma * forcing;

    // The battery follows the power implied by the plan (requested CHP
    // output) within its limits; the grid closes the actual balance.
    const double planned = p_grid_cmd + chp_request + d.p_pv - d.p_dem + q_cool_total / truth.eps_c;
    const double hi = std::min(kBatteryPowerLimit, (kBatteryCapacity - energy) / kSubstepHours);
    const double lo = std::max(-kBatteryPowerLimit, -energy / kSubstepHours);
    const double p_bat = std::clamp(planned, lo, hi);
    if (std::abs(p_bat - planned) > kClipTolerance) { ++clips; }
    energy = std::clamp(energy + p_bat * kSubstepHours, 0.0, kBatteryCapacity);
    grid_sum += p_bat - chp - d.p_pv + d.p_dem - q_cool_total / truth.eps_c;
    chp_sum += chp;
  }

  next.zone_temps = x;
  next.battery_energy = energy;
  next.chp_power_actual = chp;
  next.chp_on_timer = timer;
  next.grid_power_actual = grid_sum / kSubsteps;
  next.chp_mean_power = chp_sum / kSubsteps;
  return next;
}

Eigen::VectorXd measure_error(const Eigen::VectorXd & x_measured_next, const Eigen::VectorXd & x_pred_recomputed)
{
  if (x_measured_next.size() != x_pred_recomputed.size()) {
    throw std::invalid_argument("measure_error: dimension mismatch");
  }
  return x_measured_next - x_pred_recomputed;
}

Eigen::VectorXd aggregator_disturbance(const BuildingParameters & params, const DisturbanceRow & d)
{
  Eigen::VectorXd v(agg::nd);
  v[agg::Pren] = d.p_pv;
  v[agg::Pdem] = -d.p_dem;
  v[agg::ThetaAir] = d.theta_air;
  v[agg::QotherB] = params.qother_building();
  v[agg::QotherS] = params.qother_server();
  return v;
}

Eigen::VectorXd distributor_disturbance(const BuildingParameters & params, const DisturbanceRow & d)
{
  Eigen::VectorXd v(dis::nd);
  v[dis::theta_air] = d.theta_air;
  for (int i = 0; i < kZones; ++i) { v[dis::qother(i)] = params.q_other[i]; }
  return v;
}

void DisturbanceSeries::validate() const
{
  if (p_dem.size() != theta_air.size() || p_pv.size() != theta_air.size()) {
    throw std::invalid_argument("disturbance series: columns differ in length");
  }
  if (first_step < 0) { throw std::invalid_argument("disturbance series: negative first step"); }
  for (std::size_t k = 0; k < size(); ++k) {
    if (!(theta_air[k] >= -30.0 && theta_air[k] <= 50.0)) {
      throw std::invalid_argument("disturbance series: theta_air out of [-30, 50] at row " + std::to_string(k));
    }
    if (!(p_dem[k] >= 0.0) || !std::isfinite(p_dem[k])) {
      throw std::invalid_argument("disturbance series: p_dem must be finite and >= 0 at row " + std::to_string(k));
    }
    if (!(p_pv[k] >= 0.0) || !std::isfinite(p_pv[k])) {
      throw std::invalid_argument("disturbance series: p_pv must be finite and >= 0 at row " + std::to_string(k));
    }
  }
}

DisturbanceSeries generate_disturbances(const std::string & year, int days, std::uint64_t seed)
{
  if (days < 1) { throw std::invalid_argument("generate_disturbances: days must be >= 1"); }
  double mean_shift = 0.0, demand_scale = 1.0;
  if (year == "2022") {
    mean_shift = 0.5;
    demand_scale = 1.1;
  } else if (year != "2021") {
    throw std::invalid_argument("generate_disturbances: unknown year label '" + year + "'");
  }

  SplitMix64 weather(derive_seed(seed, 1));
  SplitMix64 load(derive_seed(seed, 2));
  SplitMix64 clouds(derive_seed(seed, 3));

  const long n = static_cast<long>(days) * kStepsPerDay;
  DisturbanceSeries s;
  s.theta_air.reserve(n);
  s.p_dem.reserve(n);
  s.p_pv.reserve(n);

  double air_noise = 0.0, load_noise = 0.0, cloud = 0.7, cloud_noise = 0.0;
  for (long k = 0; k < n; ++k) {
    const double tod = time_of_day(k);
    const int doy = day_of_year(k);
    const double day = doy - 1 + tod / 24.0;

    air_noise = 0.95 * air_noise + weather.normal(0.0, 0.5);
    const double seasonal = 10.0 + mean_shift - 9.0 * std::cos(kTwoPi * (day - 14.0) / 365.0);
    const double diurnal = 4.0 * std::cos(kTwoPi * (tod - 14.0) / 24.0);
    s.theta_air.push_back(std::clamp(seasonal + diurnal + air_noise, -30.0, 50.0));

    // Workday office load of 385 kW between 07:00 and 19:00 on a 175 kW base.
    load_noise = 0.9 * load_noise + load.normal(0.0, 6.0);
    const double profile = is_occupied(tod, doy) ? 385.0 : 175.0;
    s.p_dem.push_back(std::max(0.0, demand_scale * profile + load_noise));

    // Clear-sky bell between sunrise and sunset, attenuated by a daily cloud
    // level plus half-hourly fluctuation.
    if (tod == 0.0) { cloud = clouds.uniform(0.15, 1.0); }
    cloud_noise = 0.8 * cloud_noise + clouds.normal(0.0, 0.08);
    const double season = std::sin(kTwoPi * (day - 80.0) / 365.0);
    const double daylight = 12.0 + 4.0 * season;
    const double sunrise = 12.5 - daylight / 2.0;
    const double mid = tod + 0.25 - sunrise;
    double pv = 0.0;
    if (mid > 0.0 && mid < daylight) {
      const double elevation = std::sin(std::numbers::pi * mid / daylight);
      const double peak = 750.0 * (0.55 + 0.35 * season);
      pv = peak * std::pow(elevation, 1.5) * std::clamp(cloud + cloud_noise, 0.0, 1.0);
    }
    s.p_pv.push_back(std::clamp(pv, 0.0, 750.0));
  }
  return s;
}

DisturbanceSeries load_disturbances_csv(const std::filesystem::path & path)
{
  std::ifstream in(path);
  if (!in) { throw std::runtime_error("cannot open disturbance file " + path.string()); }
  std::string line;
  if (!std::getline(in, line)) { throw std::runtime_error(path.string() + ": empty file, header required"); }
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) { line.erase(0, 3); }
  const auto header = csv::split(line);

  const std::vector<std::string> required{"step", "theta_air_C", "p_dem_kW", "p_pv_kW"};
  std::vector<std::size_t> col(required.size());
  for (std::size_t r = 0; r < required.size(); ++r) {
    const auto it = std::find(header.begin(), header.end(), required[r]);
    if (it == header.end()) {
      throw std::runtime_error(path.string() + ": schema violation, missing column '" + required[r] + "'");
    }
    col[r] = static_cast<std::size_t>(it - header.begin());
  }

  DisturbanceSeries s;
  std::size_t line_no = 1;
  long expected = -1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") { continue; }
    const auto cells = csv::split(line);
    if (cells.size() != header.size()) {
      throw std::runtime_error("line " + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                               " fields, got " + std::to_string(cells.size()));
    }
    const double step_value = csv::parse_number(cells[col[0]], line_no, required[0]);
    const long step = std::lround(step_value);
    if (static_cast<double>(step) != step_value || step < 0) {
      throw std::runtime_error("line " + std::to_string(line_no) + ": step must be a non-negative integer");
    }
    if (expected < 0) {
      s.first_step = step;
    } else if (step != expected) {
      throw std::runtime_error("line " + std::to_string(line_no) + ": step " + std::to_string(step) +
                               " breaks the consecutive sequence (expected " + std::to_string(expected) + ")");
    }
    expected = step + 1;
    s.theta_air.push_back(csv::parse_number(cells[col[1]], line_no, required[1]));
    s.p_dem.push_back(csv::parse_number(cells[col[2]], line_no, required[2]));
    s.p_pv.push_back(csv::parse_number(cells[col[3]], line_no, required[3]));
  }
  try {
    s.validate();
  } catch (const std::invalid_argument & e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
  return s;
}

void write_disturbances_csv(const DisturbanceSeries & series, const std::filesystem::path & path)
{
  series.validate();
  std::ofstream out(path);
  if (!out) { throw std::runtime_error("cannot write " + path.string()); }
  out << "step,theta_air_C,p_dem_kW,p_pv_kW\n" << std::setprecision(17);
  for (std::size_t k = 0; k < series.size(); ++k) {
    out << series.first_step + static_cast<long>(k) << ',' << series.theta_air[k] << ',' << series.p_dem[k] << ','
        << series.p_pv[k] << '\n';
  }
  if (!out) { throw std::runtime_error("write failed for " + path.string()); }
}

}  // namespace hemsim
