#include "hemsim/ssmodel.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace hemsim {

namespace {

bool is_server(int zone) { return zone >= kBuildingZones; }

void require_dims(const Eigen::VectorXd & v, Eigen::Index n, const char * what)
{
  if (v.size() != n) {
    std::ostringstream os;
    os << "dimension mismatch for " << what << ": expected " << n << ", got " << v.size();
    throw std::invalid_argument(os.str());
  }
}

}  // namespace

const std::vector<std::pair<int, int>> & coupling_pairs()
{
  static const std::vector<std::pair<int, int>> pairs{{1, 8}, {2, 3}, {4, 5}, {4, 7}, {5, 7}};
  return pairs;
}

BuildingParameters BuildingParameters::offenbach2021()
{
  BuildingParameters p;
  p.cth = {230.88, 476.29, 214.27, 103.68, 330.14, 330.14, 99.456, 2.40, 4.80};
  p.hair = {3.69, 9.82, 3.65, 2.79, 4.79, 6.19, 3.19, 0.03, 0.04};
  p.couplings = {{1, 8, 48.40}, {2, 3, 345.60}, {4, 5, 1100.48}, {4, 7, 23.40}, {5, 7, 8.00}};
  p.c_chp = 0.55;
  p.eps_c = 3.0;
  p.q_other = {-2.0, -2.0, -2.0, -2.0, -2.0, -2.0, -2.0, 20.0, 40.0};
  return p;
}

void BuildingParameters::validate() const
{
  for (int i = 0; i < kZones; ++i) {
    if (!(cth[i] > 0.0) || !std::isfinite(cth[i])) {
      throw std::invalid_argument("zone " + std::to_string(i + 1) + ": thermal capacity must be positive");
    }
    if (!(hair[i] >= 0.0) || !std::isfinite(hair[i])) {
      throw std::invalid_argument("zone " + std::to_string(i + 1) + ": hair must be non-negative");
    }
    if (!std::isfinite(q_other[i])) {
      throw std::invalid_argument("zone " + std::to_string(i + 1) + ": q_other must be finite");
    }
  }
  for (const auto & c : couplings) {
    if (c.i < 0 || c.j >= kZones || c.i >= c.j) {
      throw std::invalid_argument("coupling indices must satisfy 0 <= i < j < 9");
    }
    if (!(c.beta >= 0.0) || !std::isfinite(c.beta)) {
      throw std::invalid_argument("coupling coefficients must be non-negative");
    }
  }
  for (std::size_t a = 0; a < couplings.size(); ++a) {
    for (std::size_t b = a + 1; b < couplings.size(); ++b) {
      if (couplings[a].i == couplings[b].i && couplings[a].j == couplings[b].j) {
        throw std::invalid_argument("duplicate coupling entry");
      }
    }
  }
  if (!(c_chp > 0.0) || !std::isfinite(c_chp)) { throw std::invalid_argument("c_chp must be positive"); }
  if (!(eps_c > 0.0) || !std::isfinite(eps_c)) { throw std::invalid_argument("eps_c must be positive"); }
}

double BuildingParameters::beta(int i, int j) const
{
  if (i > j) { std::swap(i, j); }
  for (const auto & c : couplings) {
    if (c.i == i && c.j == j) { return c.beta; }
  }
  return 0.0;
}

double BuildingParameters::cth_building() const
{
  double s = 0.0;
  for (int i = 0; i < kBuildingZones; ++i) { s += cth[i]; }
  return s;
}

double BuildingParameters::cth_server() const { return cth[7] + cth[8]; }

double BuildingParameters::hair_building() const
{
  double s = 0.0;
  for (int i = 0; i < kBuildingZones; ++i) { s += hair[i]; }
  return s;
}

double BuildingParameters::hair_server() const { return hair[7] + hair[8]; }

double BuildingParameters::beta_bs() const
{
  double s = 0.0;
  for (const auto & c : couplings) {
    if (is_server(c.i) != is_server(c.j)) { s += c.beta; }
  }
  return s;
}

double BuildingParameters::qother_building() const
{
  double s = 0.0;
  for (int i = 0; i < kBuildingZones; ++i) { s += q_other[i]; }
  return s;
}

double BuildingParameters::qother_server() const { return q_other[7] + q_other[8]; }

ZoneArray BuildingParameters::capacity_weights() const
{
  double total = 0.0;
  for (double c : cth) { total += c; }
  ZoneArray w{};
  for (int i = 0; i < kZones; ++i) { w[i] = cth[i] / total; }
  return w;
}

ContinuousStateSpace build_aggregator_model(const BuildingParameters & params)
{
  params.validate();
  const double cb = params.cth_building(), cs = params.cth_server();
  const double hb = params.hair_building(), hs = params.hair_server();
  const double bbs = params.beta_bs();

  ContinuousStateSpace m;
  m.a = Eigen::MatrixXd::Zero(agg::nx, agg::nx);
  m.b = Eigen::MatrixXd::Zero(agg::nx, agg::nu);
  m.s = Eigen::MatrixXd::Zero(agg::nx, agg::nd);

  // Diagonal uses -(H + beta)/C so that equal zone temperatures carry no
  // coupling flow.
  m.a(agg::ThetaB, agg::ThetaB) = -(hb + bbs) / cb;
  m.a(agg::ThetaB, agg::ThetaS) = bbs / cb;
  m.a(agg::ThetaS, agg::ThetaB) = bbs / cs;
  m.a(agg::ThetaS, agg::ThetaS) = -(hs + bbs) / cs;

  m.b(agg::E, agg::Pgrid) = 1.0;
  m.b(agg::E, agg::Pchp) = 1.0;
  m.b(agg::E, agg::QcoolB) = 1.0 / params.eps_c;
  m.b(agg::E, agg::QcoolS) = 1.0 / params.eps_c;
  m.b(agg::ThetaB, agg::Pchp) = 1.0 / (params.c_chp * cb);
  m.b(agg::ThetaB, agg::Qrad) = 1.0 / cb;
  m.b(agg::ThetaB, agg::QcoolB) = 1.0 / cb;
  m.b(agg::ThetaS, agg::QcoolS) = 1.0 / cs;

  m.s(agg::E, agg::Pren) = 1.0;
  m.s(agg::E, agg::Pdem) = 1.0;
  m.s(agg::ThetaB, agg::ThetaAir) = hb / cb;
  m.s(agg::ThetaB, agg::QotherB) = 1.0 / cb;
  m.s(agg::ThetaS, agg::ThetaAir) = hs / cs;
  m.s(agg::ThetaS, agg::QotherS) = 1.0 / cs;

  m.state_labels = {"E [kWh]", "theta_b [degC]", "theta_s [degC]"};
  m.input_labels = {"Pgrid [kW]", "Pchp [kW]", "Qrad [kW]", "Qcool_b [kW]", "Qcool_s [kW]"};
  m.disturbance_labels = {"Pren [kW]", "Pdem [kW]", "theta_air [degC]", "Qother_b [kW]", "Qother_s [kW]"};
  return m;
}

ContinuousStateSpace build_distributor_model(const BuildingParameters & params)
{
  params.validate();
  ContinuousStateSpace m;
  m.a = Eigen::MatrixXd::Zero(dis::nx, dis::nx);
  m.b = Eigen::MatrixXd::Zero(dis::nx, dis::nu);
  m.s = Eigen::MatrixXd::Zero(dis::nx, dis::nd);

  for (int i = 0; i < kZones; ++i) {
    const double c = params.cth[i];
    double coupled = 0.0;
    for (int j = 0; j < kZones; ++j) {
      if (j == i) { continue; }
      const double b = params.beta(i, j);
      m.a(i, j) = b / c;
      coupled += b;
    }
    m.a(i, i) = -(params.hair[i] + coupled) / c;
    m.b(i, dis::qheat(i)) = 1.0 / c;
    m.b(i, dis::qcool(i)) = 1.0 / c;
    m.s(i, dis::theta_air) = params.hair[i] / c;
    m.s(i, dis::qother(i)) = 1.0 / c;

    m.state_labels.push_back("theta_" + std::to_string(i + 1) + " [degC]");
  }
  for (int i = 0; i < kZones; ++i) { m.input_labels.push_back("Qheat_" + std::to_string(i + 1) + " [kW]"); }
  for (int i = 0; i < kZones; ++i) { m.input_labels.push_back("Qcool_" + std::to_string(i + 1) + " [kW]"); }
  m.disturbance_labels.push_back("theta_air [degC]");
  for (int i = 0; i < kZones; ++i) { m.disturbance_labels.push_back("Qother_" + std::to_string(i + 1) + " [kW]"); }
  return m;
}

DiscreteStateSpace discretize(const ContinuousStateSpace & model, double ts)
{
  if (!(ts > 0.0) || !std::isfinite(ts)) { throw std::invalid_argument("sampling time must be positive"); }
  const Eigen::Index n = model.nx(), m = model.nu(), p = model.nd();
  if (model.a.cols() != n || model.b.rows() != n || model.s.rows() != n) {
    throw std::invalid_argument("inconsistent state-space dimensions");
  }

  const Eigen::Index total = n + m + p;
  Eigen::MatrixXd aug = Eigen::MatrixXd::Zero(total, total);
  aug.block(0, 0, n, n) = model.a * ts;
  aug.block(0, n, n, m) = model.b * ts;
  aug.block(0, n + m, n, p) = model.s * ts;
  const Eigen::MatrixXd e = aug.exp();

  DiscreteStateSpace d;
  d.ad_ = e.block(0, 0, n, n);
  d.bd_ = e.block(0, n, n, m);
  d.sd_ = e.block(0, n + m, n, p);
  d.ts_ = ts;
  return d;
}

Eigen::VectorXd step(
  const DiscreteStateSpace & model,
  const Eigen::VectorXd & x,
  const Eigen::VectorXd & u,
  const Eigen::VectorXd & d,
  const Eigen::VectorXd & eps)
{
  require_dims(x, model.nx(), "state");
  require_dims(u, model.nu(), "input");
  require_dims(d, model.nd(), "disturbance");
  require_dims(eps, model.nx(), "error");
  return model.ad() * x + model.bd() * u + model.sd() * d + eps;
}

Eigen::VectorXd step(
  const DiscreteStateSpace & model,
  const Eigen::VectorXd & x,
  const Eigen::VectorXd & u,
  const Eigen::VectorXd & d)
{
  return step(model, x, u, d, Eigen::VectorXd::Zero(model.nx()));
}

std::pair<double, double> aggregate_temperatures(
  const BuildingParameters & params, const Eigen::VectorXd & zone_temps)
{
  require_dims(zone_temps, kZones, "zone temperatures");
  double tb = 0.0, ts = 0.0;
  for (int i = 0; i < kBuildingZones; ++i) { tb += params.cth[i] * zone_temps[i]; }
  for (int i = kBuildingZones; i < kZones; ++i) { ts += params.cth[i] * zone_temps[i]; }
  return {tb / params.cth_building(), ts / params.cth_server()};
}

}  // namespace hemsim
