#include "hemsim/harness.hpp"

#include "hemsim/calendar.hpp"

#include <yaml-cpp/yaml.h>

#include <cmath>
#include <set>

namespace hemsim {

namespace {

/// Rejects keys outside `allowed` so that typos do not silently fall back to defaults.
void check_keys(const YAML::Node & node, const std::string & where, const std::set<std::string> & allowed)
{
  if (!node.IsMap()) { throw ConfigError(where + ": expected a mapping"); }
  for (const auto & kv : node) {
    const auto key = kv.first.as<std::string>();
    if (!allowed.contains(key)) { throw ConfigError(where + ": unknown key '" + key + "'"); }
  }
}

template <typename T>
void read(const YAML::Node & node, const char * key, T & out, const std::string & where)
{
  if (!node[key]) { return; }
  try {
    out = node[key].as<T>();
  } catch (const YAML::Exception &) {
    throw ConfigError(where + "." + key + ": invalid value");
  }
}

std::filesystem::path resolve(const std::filesystem::path & base, const std::string & p)
{
  const std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

DataSource parse_data(const YAML::Node & node, const std::filesystem::path & base, const std::string & where)
{
  check_keys(node, where, {"source", "year", "seed", "path"});
  DataSource d;
  std::string source = "generated";
  read(node, "source", source, where);
  if (source == "generated") {
    d.kind = DataSource::Kind::Generated;
    read(node, "year", d.year, where);
    read(node, "seed", d.seed, where);
  } else if (source == "csv") {
    d.kind = DataSource::Kind::Csv;
    std::string path;
    read(node, "path", path, where);
    if (path.empty()) { throw ConfigError(where + ".path: required for csv data"); }
    d.path = resolve(base, path);
  } else {
    throw ConfigError(where + ".source: expected generated or csv, got '" + source + "'");
  }
  return d;
}

void parse_plant(const YAML::Node & node, PlantConfig & p)
{
  const std::string where = "plant";
  check_keys(node, where,
             {"preset", "occupancy_gain_peak", "ventilation_ua", "demand_to_heat_fraction", "chp_efficiency_curve",
              "seasonal_envelope_drift", "chp_min_load_fraction", "chp_min_dwell_h", "occupancy_noise", "noise_seed"});
  std::string preset = "default";
  read(node, "preset", preset, where);
  if (preset == "degenerate") {
    p = PlantConfig::degenerate();
  } else if (preset != "default") {
    throw ConfigError("plant.preset: expected default or degenerate, got '" + preset + "'");
  }
  read(node, "occupancy_gain_peak", p.occupancy_gain_peak, where);
  read(node, "ventilation_ua", p.ventilation_ua, where);
  read(node, "demand_to_heat_fraction", p.demand_to_heat_fraction, where);
  read(node, "seasonal_envelope_drift", p.seasonal_envelope_drift, where);
  read(node, "chp_min_load_fraction", p.chp_min_load_fraction, where);
  read(node, "chp_min_dwell_h", p.chp_min_dwell_h, where);
  read(node, "occupancy_noise", p.occupancy_noise, where);
  read(node, "noise_seed", p.noise_seed, where);
  if (const auto curve = node["chp_efficiency_curve"]) {
    p.chp_efficiency_curve.clear();
    for (const auto & point : curve) {
      if (!point.IsSequence() || point.size() != 2) {
        throw ConfigError("plant.chp_efficiency_curve: expected [load, multiplier] pairs");
      }
      p.chp_efficiency_curve.emplace_back(point[0].as<double>(), point[1].as<double>());
    }
  }
}

ScenarioConfig parse_scenario(const YAML::Node & root, const std::filesystem::path & base, const std::set<std::string> & extra)
{
  std::set<std::string> keys{"schema_version", "name", "data", "start_day", "duration_days", "capacity",
                             "estimator", "mpc", "plant", "price", "gbt", "split"};
  keys.insert(extra.begin(), extra.end());
  check_keys(root, "config", keys);
  if (!root["schema_version"]) { throw ConfigError("config: schema_version is required"); }

  ScenarioConfig c;
  read(root, "schema_version", c.schema_version, "config");
  if (c.schema_version != kScenarioSchemaVersion) {
    throw ConfigError("config: schema_version " + std::to_string(c.schema_version) + " is not supported (expected " +
                      std::to_string(kScenarioSchemaVersion) + ")");
  }
  read(root, "name", c.name, "config");
  read(root, "start_day", c.start_day, "config");
  read(root, "duration_days", c.duration_days, "config");
  if (root["data"]) { c.data = parse_data(root["data"], base, "data"); }

  if (const auto cap = root["capacity"]) {
    check_keys(cap, "capacity", {"mode", "factor", "seed"});
    std::string mode = "exact";
    read(cap, "mode", mode, "capacity");
    if (mode == "exact") {
      c.capacity.mode = CapacityScenario::Mode::Exact;
    } else if (mode == "scale") {
      c.capacity.mode = CapacityScenario::Mode::Scale;
      if (!cap["factor"]) { throw ConfigError("capacity.factor: required for scale mode"); }
    } else if (mode == "shifted") {
      c.capacity.mode = CapacityScenario::Mode::Shifted;
    } else {
      throw ConfigError("capacity.mode: expected exact, scale or shifted, got '" + mode + "'");
    }
    read(cap, "factor", c.capacity.factor, "capacity");
    read(cap, "seed", c.capacity.seed, "capacity");
  }

  if (const auto est = root["estimator"]) {
    check_keys(est, "estimator", {"kind", "bundle"});
    std::string kind = "none";
    read(est, "kind", kind, "estimator");
    if (kind != "none") {
      try {
        c.estimator.kind = parse_estimator_kind(kind);
      } catch (const std::invalid_argument & e) {
        throw ConfigError(std::string("estimator.kind: ") + e.what());
      }
    }
    std::string bundle;
    read(est, "bundle", bundle, "estimator");
    if (!bundle.empty()) { c.estimator.bundle = resolve(base, bundle); }
  }

  if (const auto mpc = root["mpc"]) {
    check_keys(mpc, "mpc", {"np", "ts"});
    read(mpc, "np", c.np, "mpc");
    read(mpc, "ts", c.ts, "mpc");
  }
  if (const auto plant = root["plant"]) { parse_plant(plant, c.plant); }
  if (const auto price = root["price"]) {
    check_keys(price, "price", {"p_buy", "p_sell", "p_peak", "p_gas", "eta_boiler", "chp_electrical_efficiency"});
    read(price, "p_buy", c.price.p_buy, "price");
    read(price, "p_sell", c.price.p_sell, "price");
    read(price, "p_peak", c.price.p_peak, "price");
    read(price, "p_gas", c.price.p_gas, "price");
    read(price, "eta_boiler", c.price.eta_boiler, "price");
    read(price, "chp_electrical_efficiency", c.price.chp_electrical_efficiency, "price");
  }
  if (const auto gbt = root["gbt"]) {
    check_keys(gbt, "gbt", {"n_trees", "max_depth", "shrinkage", "min_leaf", "subsample", "seed"});
    read(gbt, "n_trees", c.gbt.n_trees, "gbt");
    read(gbt, "max_depth", c.gbt.max_depth, "gbt");
    read(gbt, "shrinkage", c.gbt.shrinkage, "gbt");
    read(gbt, "min_leaf", c.gbt.min_leaf, "gbt");
    read(gbt, "subsample", c.gbt.subsample, "gbt");
    read(gbt, "seed", c.gbt.seed, "gbt");
  }
  if (const auto split = root["split"]) {
    check_keys(split, "split", {"ratio", "mode", "seed"});
    read(split, "ratio", c.split_ratio, "split");
    read(split, "seed", c.split_seed, "split");
    std::string mode = "chronological";
    read(split, "mode", mode, "split");
    if (mode == "chronological") {
      c.split_mode = SplitMode::Chronological;
    } else if (mode == "shuffled") {
      c.split_mode = SplitMode::Shuffled;
    } else {
      throw ConfigError("split.mode: expected chronological or shuffled, got '" + mode + "'");
    }
  }
  c.validate();
  return c;
}

YAML::Node load_yaml(const std::filesystem::path & path)
{
  try {
    return YAML::LoadFile(path.string());
  } catch (const YAML::BadFile &) {
    throw ConfigError("cannot open config " + path.string());
  } catch (const YAML::Exception & e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

}  // namespace

std::string CapacityScenario::label() const
{
  switch (mode) {
    case Mode::Exact: return "exact";
    case Mode::Scale: {
      const long percent = std::lround(factor * 100.0);
      return std::to_string(percent) + "%";
    }
    case Mode::Shifted: return "shifted";
  }
  return "exact";
}

void ScenarioConfig::validate() const
{
  auto check = [](bool ok, const std::string & msg) {
    if (!ok) { throw ConfigError(msg); }
  };
  check(schema_version == kScenarioSchemaVersion, "config: unsupported schema_version");
  check(!name.empty(), "config: name must not be empty");
  check(np >= 1, "mpc.np must be >= 1");
  check(ts == kStepHours, "mpc.ts must be 0.5 h, the sampling time of the disturbance data");
  check(start_day >= 0, "start_day must be >= 0");
  check(duration_days >= 2, "duration_days must be >= 2 (lag warm-up)");
  check(capacity.mode != CapacityScenario::Mode::Scale || (std::isfinite(capacity.factor) && capacity.factor > 0.0),
        "capacity.factor must be positive");
  check(split_ratio > 0.0 && split_ratio < 1.0, "split.ratio must lie in (0, 1)");
  check(data.kind != DataSource::Kind::Generated || data.year == "2021" || data.year == "2022",
        "data.year must be 2021 or 2022");
  try {
    plant.validate();
    price.validate();
    gbt.validate();
  } catch (const std::invalid_argument & e) {
    throw ConfigError(e.what());
  }
}

long ScenarioConfig::start_step() const { return static_cast<long>(start_day) * kStepsPerDay; }

long ScenarioConfig::steps() const { return static_cast<long>(duration_days) * kStepsPerDay; }

ScenarioConfig load_scenario_config(const std::filesystem::path & path)
{
  return parse_scenario(load_yaml(path), path.parent_path(), {});
}

MatrixConfig load_matrix_config(const std::filesystem::path & path)
{
  const auto root = load_yaml(path);
  MatrixConfig m;
  m.base = parse_scenario(root, path.parent_path(), {"matrix"});
  if (m.base.estimator.kind) { throw ConfigError("matrix: the base scenario must not set an estimator"); }
  if (m.base.capacity.mode != CapacityScenario::Mode::Exact) {
    throw ConfigError("matrix: the base scenario must use exact capacities");
  }
  if (const auto mx = root["matrix"]) {
    check_keys(mx, "matrix", {"generalization", "scale_factors", "shift_seed", "threads"});
    if (mx["generalization"]) { m.generalization = parse_data(mx["generalization"], path.parent_path(), "matrix.generalization"); }
    read(mx, "scale_factors", m.scale_factors, "matrix");
    read(mx, "shift_seed", m.shift_seed, "matrix");
    read(mx, "threads", m.threads, "matrix");
  }
  if (m.scale_factors.size() != 2) { throw ConfigError("matrix.scale_factors: expected two factors"); }
  for (const double f : m.scale_factors) {
    if (!(std::isfinite(f) && f > 0.0)) { throw ConfigError("matrix.scale_factors: factors must be positive"); }
  }
  if (m.threads < 1) { throw ConfigError("matrix.threads must be >= 1"); }
  return m;
}

}  // namespace hemsim
