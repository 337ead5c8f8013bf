#include <doctest.h>

#include "hemsim/calendar.hpp"
#include "hemsim/plant.hpp"
#include "hemsim/rng.hpp"
#include "oracles.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

using namespace hemsim;

namespace {

struct Inputs
{
  Eigen::VectorXd u_dis = Eigen::VectorXd::Zero(dis::nu);
  Eigen::VectorXd u_agg = Eigen::VectorXd::Zero(agg::nu);
};

/// Random inputs inside the controller bounds with consistent allocation.
Inputs random_inputs(SplitMix64 & g, const BuildingParameters & p)
{
  Inputs in;
  in.u_agg[agg::Pgrid] = g.uniform(-50.0, 50.0);
  in.u_agg[agg::Pchp] = g.uniform(0.0, 199.0);
  in.u_agg[agg::Qrad] = g.uniform(0.0, 300.0);
  const double heat = in.u_agg[agg::Qrad] + in.u_agg[agg::Pchp] / p.c_chp;
  double cool_b = 0.0;
  for (int i = 0; i < kBuildingZones; ++i) {
    in.u_dis[dis::qheat(i)] = heat / kBuildingZones;
    in.u_dis[dis::qcool(i)] = -g.uniform(0.0, 20.0);
    cool_b += in.u_dis[dis::qcool(i)];
  }
  in.u_dis[dis::qcool(7)] = -g.uniform(0.0, 20.0);
  in.u_dis[dis::qcool(8)] = -g.uniform(0.0, 40.0);
  in.u_agg[agg::QcoolB] = cool_b;
  in.u_agg[agg::QcoolS] = in.u_dis[dis::qcool(7)] + in.u_dis[dis::qcool(8)];
  return in;
}

PlantConfig only(void (*enable)(PlantConfig &))
{
  PlantConfig c = PlantConfig::degenerate();
  enable(c);
  return c;
}

double correlation(const std::vector<double> & x, const std::vector<double> & y)
{
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    sxy += (x[k] - mx) * (y[k] - my);
    sxx += (x[k] - mx) * (x[k] - mx);
    syy += (y[k] - my) * (y[k] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

/// One-step error of zone 1 from a fixed 22 degC state, per step of a month.
std::vector<double> one_step_errors(const PlantConfig & cfg, const DisturbanceSeries & data, int zone)
{
  const auto p = BuildingParameters::offenbach2021();
  const auto model = discretize(build_distributor_model(p), kStepHours);
  std::vector<double> err;
  PlantState s;
  s.zone_temps.setConstant(22.0);
  const Inputs in;
  for (long k = 0; k < static_cast<long>(data.size()); ++k) {
    const auto d = data.at_step(k);
    const auto next = plant_step(p, cfg, s, in.u_dis, in.u_agg, d, time_of_day(k), day_of_year(k));
    const auto pred = step(model, s.zone_temps, in.u_dis, distributor_disturbance(p, d));
    err.push_back(measure_error(next.zone_temps, pred)[zone]);
  }
  return err;
}

}  // namespace

TEST_CASE("degenerate twin reproduces the distributor and battery models")
{
  const auto p = BuildingParameters::offenbach2021();
  const auto cfg = PlantConfig::degenerate();
  const auto dis_model = discretize(build_distributor_model(p), kStepHours);
  const auto agg_model = discretize(build_aggregator_model(p), kStepHours);
  const auto data = generate_disturbances("2021", 3, 5);

  SplitMix64 g(17);
  PlantState s;
  s.battery_energy = 50.0;
  Eigen::VectorXd x_model = s.zone_temps;
  double max_err = 0.0;
  for (long k = 0; k < static_cast<long>(data.size()); ++k) {
    const auto in = random_inputs(g, p);
    const auto d = data.at_step(k);
    const auto next = plant_step(p, cfg, s, in.u_dis, in.u_agg, d, time_of_day(k), day_of_year(k));

    x_model = step(dis_model, x_model, in.u_dis, distributor_disturbance(p, d));
    max_err = std::max(max_err, (next.zone_temps - x_model).cwiseAbs().maxCoeff());

    // The battery row of the aggregator is exact while no limit is active.
    Eigen::VectorXd xa(agg::nx);
    xa << s.battery_energy, 0.0, 0.0;
    const auto pred = step(agg_model, xa, in.u_agg, aggregator_disturbance(p, d));
    if (next.clip_events == 0) { CHECK(next.battery_energy == doctest::Approx(pred[agg::E]).epsilon(1e-12)); }
    CHECK(measure_error(next.zone_temps, step(dis_model, s.zone_temps, in.u_dis, distributor_disturbance(p, d)))
            .cwiseAbs()
            .maxCoeff() < 1e-9);
    s = next;
  }
  CHECK(max_err < 1e-9);
}

TEST_CASE("CHP cannot run below its modulation floor")
{
  const auto p = BuildingParameters::offenbach2021();
  const PlantConfig cfg;
  const DisturbanceRow d{5.0, 250.0, 0.0};
  for (double start : {0.0, 99.5, 150.0, 199.0}) {
    for (double timer : {0.0, 0.5, 5.0}) {
      PlantState s;
      s.chp_power_actual = start;
      s.chp_on_timer = timer;
      Inputs in;
      in.u_agg[agg::Pchp] = 50.0;
      for (int k = 0; k < 6; ++k) {
        s = plant_step(p, cfg, s, in.u_dis, in.u_agg, d, 10.0, 4);
        CHECK((s.chp_power_actual == 0.0 || s.chp_power_actual == doctest::Approx(99.5)));
        CHECK(s.chp_power_actual != doctest::Approx(50.0));
      }
    }
  }
}

TEST_CASE("CHP switches respect the minimum dwell and output set")
{
  const auto p = BuildingParameters::offenbach2021();
  const PlantConfig cfg;
  const DisturbanceRow d{5.0, 250.0, 0.0};
  SplitMix64 g(3);
  PlantState s;
  long last_switch = -100;
  int switches = 0;
  for (long k = 0; k < 400; ++k) {
    Inputs in;
    in.u_agg[agg::Pchp] = (g.uniform() < 0.5) ? 0.0 : g.uniform(0.0, 199.0);
    const bool was_on = s.chp_power_actual > 0.0;
    s = plant_step(p, cfg, s, in.u_dis, in.u_agg, d, time_of_day(k), day_of_year(k));
    const bool on = s.chp_power_actual > 0.0;
    CHECK((s.chp_power_actual == 0.0 || (s.chp_power_actual >= 99.5 - 1e-12 && s.chp_power_actual <= 199.0)));
    if (on != was_on) {
      // Switches are at least ten substeps apart, i.e. two observed steps.
      CHECK(k - last_switch >= 2);
      last_switch = k;
      ++switches;
    }
  }
  CHECK(switches > 10);
}

TEST_CASE("ventilation contributes nothing at zero temperature difference")
{
  // Without internal sources a uniform state equal to the ambient stays put,
  // so the ventilation flow is zero over the whole step.
  auto p = BuildingParameters::offenbach2021();
  p.q_other.fill(0.0);
  const auto cfg = only([](PlantConfig & c) { c.ventilation_ua = 25.0; });
  const auto base = PlantConfig::degenerate();
  PlantState s;
  s.zone_temps.setConstant(18.0);
  const Inputs in;
  const DisturbanceRow d{18.0, 0.0, 0.0};
  REQUIRE(is_occupied(10.0, 4));
  const auto with = plant_step(p, cfg, s, in.u_dis, in.u_agg, d, 10.0, 4);
  const auto without = plant_step(p, base, s, in.u_dis, in.u_agg, d, 10.0, 4);
  CHECK((with.zone_temps - without.zone_temps).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("single occupancy gain gives the closed-form one-step error")
{
  const auto p = BuildingParameters::offenbach2021();
  const double peak = 100.0;
  const auto cfg = only([](PlantConfig & c) { c.occupancy_gain_peak = 100.0; });
  const auto model = discretize(build_distributor_model(p), kStepHours);
  PlantState s;
  const Inputs in;
  const DisturbanceRow d{22.0, 0.0, 0.0};
  const double tod = 10.0;
  const int doy = 4;  // Monday
  REQUIRE(occupancy_level(cfg, tod, doy) == 1.0);

  const auto next = plant_step(p, cfg, s, in.u_dis, in.u_agg, d, tod, doy);
  const auto err = measure_error(next.zone_temps, step(model, s.zone_temps, in.u_dis, distributor_disturbance(p, d)));

  // Zone 1 has no couplings, so its response to a constant gain g is
  // g (1 - exp(-H ts / C)) / H; the first-order term is ts g / C.
  const double g = peak * p.cth[0] / p.cth_building();
  const double exact = g * (1.0 - std::exp(-p.hair[0] * kStepHours / p.cth[0])) / p.hair[0];
  CHECK(err[0] == doctest::Approx(exact).epsilon(1e-10));
  CHECK(err[0] == doctest::Approx(kStepHours * g / p.cth[0]).epsilon(1e-2));

  // All zones against the series oracle with the gain as an extra input.
  const auto m = build_distributor_model(p);
  Eigen::MatrixXd b_gain = Eigen::MatrixXd::Zero(kZones, 1);
  for (int i = 0; i < kBuildingZones; ++i) { b_gain(i, 0) = peak / p.cth_building(); }
  const auto ref = oracle::zoh_series(m.a, b_gain, Eigen::MatrixXd::Zero(kZones, 1), kStepHours);
  CHECK(oracle::max_rel_diff(err, ref.bd.col(0)) < 1e-9);
}

TEST_CASE("each augmentation correlates with its explanatory feature")
{
  const auto data = generate_disturbances("2021", 30, 11);
  std::vector<double> theta_air, p_dem, occupied;
  std::vector<double> vent_err, dem_err, occ_err;
  const auto vent = one_step_errors(only([](PlantConfig & c) { c.ventilation_ua = 10.0; }), data, 0);
  const auto dem = one_step_errors(only([](PlantConfig & c) { c.demand_to_heat_fraction = 0.3; }), data, 0);
  const auto occ = one_step_errors(only([](PlantConfig & c) { c.occupancy_gain_peak = 100.0; }), data, 0);
  for (long k = 0; k < static_cast<long>(data.size()); ++k) {
    const auto d = data.at_step(k);
    p_dem.push_back(d.p_dem);
    occupied.push_back(is_occupied(time_of_day(k), day_of_year(k)) ? 1.0 : 0.0);
    if (is_occupied(time_of_day(k), day_of_year(k))) {
      theta_air.push_back(d.theta_air);
      vent_err.push_back(vent[static_cast<std::size_t>(k)]);
    }
  }
  CHECK(std::abs(correlation(theta_air, vent_err)) > 0.8);
  CHECK(std::abs(correlation(p_dem, dem)) > 0.8);
  CHECK(std::abs(correlation(occupied, occ)) > 0.8);
}

TEST_CASE("battery stays within physical bounds under absurd requests")
{
  const auto p = BuildingParameters::offenbach2021();
  const PlantConfig cfg;
  SplitMix64 g(9);
  PlantState s;
  int clips = 0;
  for (long k = 0; k < 500; ++k) {
    Inputs in;
    in.u_agg[agg::Pgrid] = g.uniform(-5000.0, 5000.0);
    in.u_agg[agg::Pchp] = g.uniform(-100.0, 400.0);
    const DisturbanceRow d{10.0, g.uniform(0.0, 500.0), g.uniform(0.0, 750.0)};
    s = plant_step(p, cfg, s, in.u_dis, in.u_agg, d, time_of_day(k), day_of_year(k));
    CHECK(s.battery_energy >= 0.0);
    CHECK(s.battery_energy <= kBatteryCapacity);
    clips += s.clip_events;
  }
  CHECK(clips > 0);
}

TEST_CASE("plant_step rejects non-finite input")
{
  const auto p = BuildingParameters::offenbach2021();
  Inputs in;
  in.u_dis[3] = std::nan("");
  CHECK_THROWS_AS(plant_step(p, PlantConfig{}, PlantState{}, in.u_dis, in.u_agg, {}, 0.0, 1), std::invalid_argument);
  const Inputs ok;
  CHECK_THROWS_AS(plant_step(p, PlantConfig{}, PlantState{}, ok.u_dis, ok.u_agg, {INFINITY, 0.0, 0.0}, 0.0, 1),
                  std::invalid_argument);
}

TEST_CASE("measure_error")
{
  const Eigen::Vector3d x(1.0, 2.0, 3.0);
  CHECK(measure_error(x, x).isZero(0.0));
  CHECK_THROWS_AS(measure_error(x, Eigen::VectorXd::Zero(9)), std::invalid_argument);
}

TEST_CASE("calendar conventions")
{
  CHECK(weekday(1) == 4);  // Friday
  CHECK_FALSE(is_workday(2));
  CHECK_FALSE(is_workday(3));
  CHECK(is_workday(4));
  CHECK(is_occupied(7.0, 4));
  CHECK_FALSE(is_occupied(19.0, 4));
  CHECK_FALSE(is_occupied(10.0, 2));
  CHECK(time_of_day(47) == 23.5);
  CHECK(day_of_year(48) == 2);
  CHECK(day_of_year(365 * 48) == 1);
}

TEST_CASE("generated disturbances")
{
  const auto a = generate_disturbances("2021", 365, 42);
  const auto b = generate_disturbances("2021", 365, 42);
  CHECK(a == b);
  CHECK_FALSE(a == generate_disturbances("2021", 365, 43));
  REQUIRE(a.size() == 365u * 48u);
  a.validate();

  const double mean_dem = std::accumulate(a.p_dem.begin(), a.p_dem.end(), 0.0) / a.size();
  CHECK(std::abs(mean_dem - 250.0) <= 25.0);
  CHECK(*std::max_element(a.p_pv.begin(), a.p_pv.end()) <= 750.0);
  CHECK(*std::max_element(a.p_pv.begin(), a.p_pv.end()) > 300.0);
  const double mean_air = std::accumulate(a.theta_air.begin(), a.theta_air.end(), 0.0) / a.size();
  CHECK(std::abs(mean_air - 10.0) < 1.0);

  // January is colder than July and PV is zero at midnight.
  const double jan = std::accumulate(a.theta_air.begin(), a.theta_air.begin() + 31 * 48, 0.0) / (31 * 48);
  const double jul = std::accumulate(a.theta_air.begin() + 181 * 48, a.theta_air.begin() + 212 * 48, 0.0) / (31 * 48);
  CHECK(jul - jan > 12.0);
  for (std::size_t k = 0; k < a.size(); k += 48) { CHECK(a.p_pv[k] == 0.0); }

  // The 2022 analog draws more power.
  const auto c = generate_disturbances("2022", 365, 42);
  const double mean_dem_2022 = std::accumulate(c.p_dem.begin(), c.p_dem.end(), 0.0) / c.size();
  CHECK(mean_dem_2022 > 1.05 * mean_dem);

  CHECK_THROWS_AS(generate_disturbances("2021", 0, 1), std::invalid_argument);
  CHECK_THROWS_AS(generate_disturbances("1999", 1, 1), std::invalid_argument);
}

TEST_CASE("disturbance CSV")
{
  const auto dir = std::filesystem::temp_directory_path() / "hemsim_test_plant";
  std::filesystem::create_directories(dir);
  auto write = [&](const std::string & name, const std::string & text) {
    const auto path = dir / name;
    std::ofstream(path) << text;
    return path;
  };

  const auto three = load_disturbances_csv(
    write("three.csv", "step,theta_air_C,p_dem_kW,p_pv_kW\n0,1.5,200,0\n1,1.0,210,0\n2,0.5,220,3.5\n"));
  CHECK(three.size() == 3u);
  CHECK(three.p_pv[2] == 3.5);

  try {
    load_disturbances_csv(write("missing.csv", "step,p_dem_kW,p_pv_kW\n0,200,0\n"));
    FAIL("expected a schema error");
  } catch (const std::runtime_error & e) {
    CHECK(std::string(e.what()).find("theta_air_C") != std::string::npos);
  }

  try {
    load_disturbances_csv(write("bad.csv", "step,theta_air_C,p_dem_kW,p_pv_kW\n0,1,2,3\n1,x,2,3\n"));
    FAIL("expected a parse error");
  } catch (const std::runtime_error & e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }

  CHECK_THROWS_AS(load_disturbances_csv(write("gap.csv", "step,theta_air_C,p_dem_kW,p_pv_kW\n0,1,2,3\n2,1,2,3\n")),
                  std::runtime_error);
  CHECK_THROWS_AS(load_disturbances_csv(write("back.csv", "step,theta_air_C,p_dem_kW,p_pv_kW\n1,1,2,3\n0,1,2,3\n")),
                  std::runtime_error);
  CHECK_THROWS_AS(load_disturbances_csv(write("neg.csv", "step,theta_air_C,p_dem_kW,p_pv_kW\n0,1,-2,3\n")),
                  std::runtime_error);
  CHECK_THROWS_AS(load_disturbances_csv(dir / "does_not_exist.csv"), std::runtime_error);

  const auto gen = generate_disturbances("2022", 20, 7);
  write_disturbances_csv(gen, dir / "roundtrip.csv");
  CHECK(load_disturbances_csv(dir / "roundtrip.csv") == gen);

  std::filesystem::remove_all(dir);
}
