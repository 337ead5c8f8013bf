#include "hemsim/mpc.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

namespace hemsim {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

using Triplets = std::vector<Eigen::Triplet<double>>;

void check(bool ok, const std::string & msg)
{
  if (!ok) { throw std::invalid_argument(msg); }
}

void require_forecast(const std::vector<DisturbanceRow> & forecast, int np)
{
  if (static_cast<int>(forecast.size()) < np) {
    throw std::invalid_argument(
      "forecast has " + std::to_string(forecast.size()) + " rows, horizon needs " + std::to_string(np));
  }
}

void require_plan(const CompensationPlan & comp, int np)
{
  if (comp.zones.rows() < np || comp.zones.cols() != kZones || comp.aggregate.rows() < np || comp.aggregate.cols() != 2) {
    throw std::invalid_argument("compensation plan does not cover the horizon");
  }
}

SparseMatrix from_triplets(Eigen::Index rows, Eigen::Index cols, const Triplets & t)
{
  SparseMatrix m(rows, cols);
  m.setFromTriplets(t.begin(), t.end());
  return m;
}

/// Shift a per-step vector by one step for warm starting; the last block and
/// any trailing entries are kept.
Eigen::VectorXd shift_blocks(const Eigen::VectorXd & v, int np, Eigen::Index block)
{
  Eigen::VectorXd out = v;
  const Eigen::Index moved = (np - 1) * block;
  if (moved > 0) { out.head(moved) = v.segment(block, moved); }
  return out;
}

double elapsed_ms(std::chrono::steady_clock::time_point start)
{
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
}

void fill_diagnostics(OcpSolution & sol, const QpSolution & qp)
{
  sol.status = qp.status;
  sol.iterations = qp.iterations;
  sol.primal_residual = qp.primal_residual;
  sol.dual_residual = qp.dual_residual;
  sol.polished = qp.polished;
}

void raise_on_infeasible(const QpSolution & qp, const char * layer)
{
  if (qp.status == QpStatus::PrimalInfeasible || qp.status == QpStatus::DualInfeasible) {
    throw MpcError(std::string(layer) + " OCP is " + to_string(qp.status));
  }
}

/// Euclidean projection of w onto {lo <= v <= hi, sum v = target}, with
/// target clamped to the attainable range. The solution is
/// v = clamp(w - lambda, lo, hi) for the lambda found by bisection.
template <typename Eval>
double bisect_shift(Eval && total, double target, double lo, double hi)
{
  for (int it = 0; it < 200 && hi - lo > 0.0; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) { break; }
    if (total(mid) > target) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

Eigen::VectorXd project_sum(const Eigen::VectorXd & w, const Eigen::VectorXd & lo, const Eigen::VectorXd & hi, double target)
{
  target = std::clamp(target, lo.sum(), hi.sum());
  auto at = [&](double lambda) { return (w.array() - lambda).max(lo.array()).min(hi.array()).matrix().eval(); };
  const double lam_lo = (w - hi).minCoeff() - 1.0, lam_hi = (w - lo).maxCoeff() + 1.0;
  const double lambda = bisect_shift([&](double l) { return at(l).sum(); }, target, lam_lo, lam_hi);
  return at(lambda);
}

}  // namespace

QpSettings mpc_qp_settings()
{
  QpSettings s;
  s.method = QpMethod::InteriorPoint;
  s.eps_abs = 1e-6;
  s.eps_rel = 1e-6;
  return s;
}

void PriceModel::validate() const
{
  check(std::isfinite(p_buy) && std::isfinite(p_sell) && p_buy >= p_sell && p_sell >= 0.0,
        "price: need p_buy >= p_sell >= 0");
  check(std::isfinite(p_peak) && p_peak >= 0.0, "price: p_peak must be >= 0");
  check(std::isfinite(p_gas) && p_gas >= 0.0, "price: p_gas must be >= 0");
  check(eta_boiler > 0.0 && eta_boiler <= 1.0, "price: eta_boiler must lie in (0, 1]");
  check(chp_electrical_efficiency > 0.0 && chp_electrical_efficiency <= 1.0,
        "price: chp_electrical_efficiency must lie in (0, 1]");
}

void AggregatorOcpSpec::validate() const
{
  check(np >= 1, "aggregator: np must be >= 1");
  check(ts > 0.0 && std::isfinite(ts), "aggregator: ts must be positive");
  check(w_comf >= 0.0 && w_mon >= 0.0 && w_s >= 0.0, "aggregator: weights must be >= 0");
  price.validate();
  for (const Range & r : {bounds.p_grid, bounds.p_chp, bounds.q_rad, bounds.q_cool_b, bounds.q_cool_s, bounds.energy}) {
    check(r.lo <= r.hi, "aggregator: empty bound range");
  }
  check(bounds.battery_power > 0.0, "aggregator: battery power limit must be positive");
}

void DistributorOcpSpec::validate() const
{
  check(np >= 1, "distributor: np must be >= 1");
  check(ts > 0.0 && std::isfinite(ts), "distributor: ts must be positive");
  check(q_heat_max >= 0.0, "distributor: q_heat_max must be >= 0");
  check(q_cool_group_a <= 0.0 && q_cool_group_b <= 0.0 && q_cool_zone8 <= 0.0 && q_cool_zone9 <= 0.0,
        "distributor: cooling limits must be <= 0");
  check(w_s >= 0.0, "distributor: w_s must be >= 0");
}

CompensationPlan CompensationPlan::zero(int np)
{
  CompensationPlan c;
  c.zones = Eigen::MatrixXd::Zero(np, kZones);
  c.aggregate = Eigen::MatrixXd::Zero(np, 2);
  return c;
}

CompensationPlan CompensationPlan::from_zones(const BuildingParameters & params, const Eigen::MatrixXd & zones)
{
  if (zones.cols() != kZones) { throw std::invalid_argument("compensation: expected 9 zone columns"); }
  CompensationPlan c;
  c.zones = zones;
  c.aggregate = Eigen::MatrixXd::Zero(zones.rows(), 2);
  const double cb = params.cth_building(), cs = params.cth_server();
  for (int i = 0; i < kZones; ++i) {
    if (i < kBuildingZones) {
      c.aggregate.col(0) += params.cth[i] / cb * zones.col(i);
    } else {
      c.aggregate.col(1) += params.cth[i] / cs * zones.col(i);
    }
  }
  return c;
}

// Aggregator -----------------------------------------------------------------

namespace {

// Per-step variable block: inputs, next state, step cost, server slack.
constexpr int kAggU = 0, kAggX = agg::nu, kAggCost = agg::nu + agg::nx, kAggSlack = kAggCost + 1;
constexpr int kAggBlock = kAggSlack + 1;
// Per-step constraint rows.
constexpr int kAggDyn = 0, kAggUBox = agg::nx, kAggEBox = kAggUBox + agg::nu, kAggRate = kAggEBox + 1;
constexpr int kAggEpiBuy = kAggRate + 1, kAggEpiSell = kAggEpiBuy + 1, kAggPeak = kAggEpiSell + 1;
constexpr int kAggSlackLo = kAggPeak + 1, kAggSlackHi = kAggSlackLo + 1, kAggSlackPos = kAggSlackHi + 1;
constexpr int kAggRows = kAggSlackPos + 1;

}  // namespace

struct AggregatorController::Impl
{
  AggregatorOcpSpec spec;
  BuildingParameters params;
  DiscreteStateSpace model;
  QpProblem problem;
  std::unique_ptr<QpSolver> solver;
  std::optional<WarmStart> previous;

  Impl(const AggregatorOcpSpec & s, const BuildingParameters & p, const QpSettings & qp)
    : spec(s), params(p), model(discretize(build_aggregator_model(p), s.ts))
  {
    spec.validate();
    problem = build();
    solver = std::make_unique<QpSolver>(problem, qp);
  }

  int np() const { return spec.np; }
  Eigen::Index var(int n, int offset) const { return static_cast<Eigen::Index>(n) * kAggBlock + offset; }
  Eigen::Index peak_var() const { return static_cast<Eigen::Index>(np()) * kAggBlock; }
  Eigen::Index row(int n, int offset) const { return static_cast<Eigen::Index>(n) * kAggRows + offset; }
  Eigen::Index peak_row() const { return static_cast<Eigen::Index>(np()) * kAggRows; }

  QpProblem build() const
  {
    const Eigen::Index nvar = peak_var() + 1, nrow = peak_row() + 1;
    const auto & b = spec.bounds;
    const auto & price = spec.price;
    Triplets pt, at;
    Eigen::VectorXd q = Eigen::VectorXd::Zero(nvar);
    Eigen::VectorXd l = Eigen::VectorXd::Zero(nrow), u = Eigen::VectorXd::Zero(nrow);

    const double gas_chp = price.p_gas * spec.ts / price.chp_electrical_efficiency;
    const double gas_rad = price.p_gas * spec.ts / price.eta_boiler;
    const Range input_ranges[agg::nu] = {b.p_grid, b.p_chp, b.q_rad, b.q_cool_b, b.q_cool_s};

    for (int n = 0; n < np(); ++n) {
      // x(n+1) - Ad x(n) - Bd u(n) = Sd d(n) + eps(n); bounds are set per solve.
      for (int i = 0; i < agg::nx; ++i) {
        const Eigen::Index r = row(n, kAggDyn + i);
        at.emplace_back(r, var(n, kAggX + i), 1.0);
        if (n > 0) {
          for (int j = 0; j < agg::nx; ++j) {
            if (model.ad()(i, j) != 0.0) { at.emplace_back(r, var(n - 1, kAggX + j), -model.ad()(i, j)); }
          }
        }
        for (int j = 0; j < agg::nu; ++j) {
          if (model.bd()(i, j) != 0.0) { at.emplace_back(r, var(n, kAggU + j), -model.bd()(i, j)); }
        }
      }
      for (int j = 0; j < agg::nu; ++j) {
        const Eigen::Index r = row(n, kAggUBox + j);
        at.emplace_back(r, var(n, kAggU + j), 1.0);
        l[r] = input_ranges[j].lo;
        u[r] = input_ranges[j].hi;
      }
      at.emplace_back(row(n, kAggEBox), var(n, kAggX + agg::E), 1.0);
      at.emplace_back(row(n, kAggRate), var(n, kAggX + agg::E), 1.0);
      if (n > 0) { at.emplace_back(row(n, kAggRate), var(n - 1, kAggX + agg::E), -1.0); }
      l[row(n, kAggRate)] = -b.battery_power * spec.ts;
      u[row(n, kAggRate)] = b.battery_power * spec.ts;

      // Step cost epigraph: c >= price * ts * Pgrid + gas for both prices.
      for (const auto & [offset, p] : {std::pair{kAggEpiBuy, price.p_buy}, std::pair{kAggEpiSell, price.p_sell}}) {
        const Eigen::Index r = row(n, offset);
        at.emplace_back(r, var(n, kAggCost), 1.0);
        if (p != 0.0) { at.emplace_back(r, var(n, kAggU + agg::Pgrid), -p * spec.ts); }
        if (gas_chp != 0.0) { at.emplace_back(r, var(n, kAggU + agg::Pchp), -gas_chp); }
        if (gas_rad != 0.0) { at.emplace_back(r, var(n, kAggU + agg::Qrad), -gas_rad); }
        u[r] = kInf;
      }
      at.emplace_back(row(n, kAggPeak), peak_var(), 1.0);
      at.emplace_back(row(n, kAggPeak), var(n, kAggU + agg::Pgrid), -1.0);
      u[row(n, kAggPeak)] = kInf;

      // Server band slack: s >= lo - theta_s, s >= theta_s - hi, s >= 0.
      const Eigen::Index ts_var = var(n, kAggX + agg::ThetaS), s_var = var(n, kAggSlack);
      at.emplace_back(row(n, kAggSlackLo), s_var, 1.0);
      at.emplace_back(row(n, kAggSlackLo), ts_var, 1.0);
      l[row(n, kAggSlackLo)] = b.theta_s.lo;
      u[row(n, kAggSlackLo)] = kInf;
      at.emplace_back(row(n, kAggSlackHi), s_var, 1.0);
      at.emplace_back(row(n, kAggSlackHi), ts_var, -1.0);
      l[row(n, kAggSlackHi)] = -b.theta_s.hi;
      u[row(n, kAggSlackHi)] = kInf;
      at.emplace_back(row(n, kAggSlackPos), s_var, 1.0);
      u[row(n, kAggSlackPos)] = kInf;

      const Eigen::Index tb = var(n, kAggX + agg::ThetaB);
      pt.emplace_back(tb, tb, 2.0 * spec.w_comf);
      q[tb] = -2.0 * spec.w_comf * spec.theta_ref;
      q[var(n, kAggCost)] = spec.w_mon;
      q[s_var] = spec.w_s;
    }
    at.emplace_back(peak_row(), peak_var(), 1.0);
    u[peak_row()] = kInf;
    q[peak_var()] = spec.w_mon * price.p_peak;

    // Placeholder equality bounds; the real values are set before each solve.
    for (int n = 0; n < np(); ++n) {
      l[row(n, kAggEBox)] = b.energy.lo;
      u[row(n, kAggEBox)] = b.energy.hi;
    }
    auto p = QpProblem::create(from_triplets(nvar, nvar, pt), q, from_triplets(nrow, nvar, at), l, u);
    p.variable_names.resize(static_cast<std::size_t>(nvar));
    const char * names[kAggBlock] = {"Pgrid", "Pchp", "Qrad", "Qcool_b", "Qcool_s", "E", "theta_b", "theta_s", "cost", "slack"};
    for (int n = 0; n < np(); ++n) {
      for (int k = 0; k < kAggBlock; ++k) {
        p.variable_names[static_cast<std::size_t>(var(n, k))] = std::string(names[k]) + "[" + std::to_string(n) + "]";
      }
    }
    p.variable_names.back() = "peak";
    return p;
  }

  OcpSolution solve(const Eigen::VectorXd & x0, const std::vector<DisturbanceRow> & forecast, const CompensationPlan & comp)
  {
    if (x0.size() != agg::nx || !x0.allFinite()) { throw std::invalid_argument("aggregator: x0 must be 3 finite values"); }
    require_forecast(forecast, np());
    require_plan(comp, np());
    const auto start = std::chrono::steady_clock::now();
    const auto & b = spec.bounds;

    // Sd d(n) + eps(n) per step.
    std::vector<Eigen::VectorXd> offsets(static_cast<std::size_t>(np()));
    Eigen::VectorXd l = problem.l, u = problem.u;
    // A battery outside the admissible band may stay where it is rather than
    // making the problem infeasible.
    const double e_lo = std::min(b.energy.lo, x0[agg::E]), e_hi = std::max(b.energy.hi, x0[agg::E]);
    for (int n = 0; n < np(); ++n) {
      Eigen::VectorXd & off = offsets[static_cast<std::size_t>(n)];
      off = model.sd() * aggregator_disturbance(params, forecast[static_cast<std::size_t>(n)]);
      off[agg::ThetaB] += comp.aggregate(n, 0);
      off[agg::ThetaS] += comp.aggregate(n, 1);
      const Eigen::VectorXd rhs = n == 0 ? Eigen::VectorXd(off + model.ad() * x0) : off;
      for (int i = 0; i < agg::nx; ++i) { l[row(n, kAggDyn + i)] = u[row(n, kAggDyn + i)] = rhs[i]; }
      l[row(n, kAggEBox)] = e_lo;
      u[row(n, kAggEBox)] = e_hi;
    }
    const double step_limit = b.battery_power * spec.ts;
    l[row(0, kAggRate)] = x0[agg::E] - step_limit;
    u[row(0, kAggRate)] = x0[agg::E] + step_limit;
    solver->update_bounds(l, u);

    std::optional<WarmStart> warm;
    if (previous) {
      warm = WarmStart{shift_blocks(previous->z, np(), kAggBlock), shift_blocks(previous->y, np(), kAggRows)};
    }
    const QpSolution qp = solver->solve(warm);
    raise_on_infeasible(qp, "aggregator");
    previous = WarmStart{qp.z, qp.y};

    // Inputs are clipped to their boxes and the states recomputed from the
    // model, so the returned trajectory is exactly consistent with the
    // dynamics regardless of the solver tolerance.
    const Range ranges[agg::nu] = {b.p_grid, b.p_chp, b.q_rad, b.q_cool_b, b.q_cool_s};
    OcpSolution sol;
    fill_diagnostics(sol, qp);
    sol.inputs.resize(np(), agg::nu);
    sol.states.resize(np() + 1, agg::nx);
    sol.slacks.resize(np(), 1);
    sol.step_costs.resize(np());
    sol.states.row(0) = x0.transpose();
    const auto & price = spec.price;
    double peak = 0.0;
    for (int n = 0; n < np(); ++n) {
      Eigen::VectorXd un = qp.z.segment(var(n, kAggU), agg::nu);
      for (int j = 0; j < agg::nu; ++j) { un[j] = std::clamp(un[j], ranges[j].lo, ranges[j].hi); }
      sol.inputs.row(n) = un.transpose();
      const Eigen::VectorXd xn = sol.states.row(n).transpose();
      sol.states.row(n + 1) = (model.ad() * xn + model.bd() * un + offsets[static_cast<std::size_t>(n)]).transpose();

      const double ts_temp = sol.states(n + 1, agg::ThetaS);
      sol.slacks(n, 0) = std::max({0.0, b.theta_s.lo - ts_temp, ts_temp - b.theta_s.hi});
      const double grid = un[agg::Pgrid];
      const double gas = price.p_gas * spec.ts * (un[agg::Pchp] / price.chp_electrical_efficiency + un[agg::Qrad] / price.eta_boiler);
      sol.step_costs[n] = std::max(price.p_buy * spec.ts * grid, price.p_sell * spec.ts * grid) + gas;
      peak = std::max(peak, grid);
    }
    sol.peak = peak;
    sol.costs = breakdown(sol);
    sol.objective = spec.w_comf * sol.costs.comfort + spec.w_mon * sol.costs.monetary + spec.w_s * sol.costs.slack;
    sol.solve_ms = elapsed_ms(start);
    return sol;
  }

  /// Cost terms evaluated from the returned trajectory itself.
  CostBreakdown breakdown(const OcpSolution & sol) const
  {
    const auto & price = spec.price;
    CostBreakdown c;
    for (int n = 0; n < np(); ++n) {
      const double tb = sol.states(n + 1, agg::ThetaB) - spec.theta_ref;
      c.comfort += tb * tb;
      c.slack += sol.slacks(n, 0);
      c.monetary += sol.step_costs[n];
    }
    c.monetary += price.p_peak * sol.peak;
    return c;
  }
};

AggregatorController::AggregatorController(
  const AggregatorOcpSpec & spec, const BuildingParameters & params, const QpSettings & qp)
  : impl_(std::make_unique<Impl>(spec, params, qp))
{
}

AggregatorController::~AggregatorController() = default;
AggregatorController::AggregatorController(AggregatorController &&) noexcept = default;
AggregatorController & AggregatorController::operator=(AggregatorController &&) noexcept = default;

OcpSolution AggregatorController::solve(
  const Eigen::VectorXd & x0, const std::vector<DisturbanceRow> & forecast, const CompensationPlan & comp)
{
  return impl_->solve(x0, forecast, comp);
}

const DiscreteStateSpace & AggregatorController::model() const { return impl_->model; }
const QpProblem & AggregatorController::problem() const { return impl_->solver->problem(); }
const AggregatorOcpSpec & AggregatorController::spec() const { return impl_->spec; }

// Distributor ----------------------------------------------------------------

namespace {

constexpr int kDisU = 0, kDisX = dis::nu, kDisSlack = dis::nu + dis::nx;
constexpr int kDisBlock = kDisSlack + kServerZones;
constexpr int kDisDyn = 0, kDisHeatBox = kZones, kDisCoolBox = 2 * kZones, kDisGroupA = 3 * kZones;
constexpr int kDisGroupB = kDisGroupA + 1, kDisAllocHeat = kDisGroupB + 1, kDisAllocCoolB = kDisAllocHeat + 1;
constexpr int kDisAllocCoolS = kDisAllocCoolB + 1, kDisSlackRows = kDisAllocCoolS + 1;
constexpr int kDisRows = kDisSlackRows + 3 * kServerZones;

constexpr int kGroupA[] = {0, 1, 2, 3, 6};
constexpr int kGroupB[] = {4, 5};

}  // namespace

struct DistributorController::Impl
{
  DistributorOcpSpec spec;
  BuildingParameters params;
  DiscreteStateSpace model;
  QpProblem problem;
  std::unique_ptr<QpSolver> solver;
  std::optional<WarmStart> previous;

  Impl(const DistributorOcpSpec & s, const BuildingParameters & p, const QpSettings & qp)
    : spec(s), params(p), model(discretize(build_distributor_model(p), s.ts))
  {
    spec.validate();
    problem = build();
    solver = std::make_unique<QpSolver>(problem, qp);
  }

  int np() const { return spec.np; }
  Eigen::Index var(int n, int offset) const { return static_cast<Eigen::Index>(n) * kDisBlock + offset; }
  Eigen::Index row(int n, int offset) const { return static_cast<Eigen::Index>(n) * kDisRows + offset; }

  double cool_lower(int zone) const
  {
    if (zone == 7) { return spec.q_cool_zone8; }
    if (zone == 8) { return spec.q_cool_zone9; }
    return (zone == 4 || zone == 5) ? spec.q_cool_group_b : spec.q_cool_group_a;
  }

  QpProblem build() const
  {
    const Eigen::Index nvar = static_cast<Eigen::Index>(np()) * kDisBlock;
    const Eigen::Index nrow = static_cast<Eigen::Index>(np()) * kDisRows;
    Triplets pt, at;
    Eigen::VectorXd q = Eigen::VectorXd::Zero(nvar);
    Eigen::VectorXd l = Eigen::VectorXd::Zero(nrow), u = Eigen::VectorXd::Zero(nrow);
    const ZoneArray w = params.capacity_weights();

    for (int n = 0; n < np(); ++n) {
      for (int i = 0; i < kZones; ++i) {
        const Eigen::Index r = row(n, kDisDyn + i);
        at.emplace_back(r, var(n, kDisX + i), 1.0);
        if (n > 0) {
          for (int j = 0; j < kZones; ++j) {
            if (model.ad()(i, j) != 0.0) { at.emplace_back(r, var(n - 1, kDisX + j), -model.ad()(i, j)); }
          }
        }
        for (int j = 0; j < dis::nu; ++j) {
          if (model.bd()(i, j) != 0.0) { at.emplace_back(r, var(n, kDisU + j), -model.bd()(i, j)); }
        }
      }
      for (int i = 0; i < kZones; ++i) {
        const Eigen::Index rh = row(n, kDisHeatBox + i);
        at.emplace_back(rh, var(n, kDisU + dis::qheat(i)), 1.0);
        u[rh] = i < kBuildingZones ? spec.q_heat_max : 0.0;
        const Eigen::Index rc = row(n, kDisCoolBox + i);
        at.emplace_back(rc, var(n, kDisU + dis::qcool(i)), 1.0);
        l[rc] = cool_lower(i);
      }
      for (int i : kGroupA) { at.emplace_back(row(n, kDisGroupA), var(n, kDisU + dis::qcool(i)), 1.0); }
      l[row(n, kDisGroupA)] = spec.q_cool_group_a;
      for (int i : kGroupB) { at.emplace_back(row(n, kDisGroupB), var(n, kDisU + dis::qcool(i)), 1.0); }
      l[row(n, kDisGroupB)] = spec.q_cool_group_b;
      for (int i = 0; i < kBuildingZones; ++i) {
        at.emplace_back(row(n, kDisAllocHeat), var(n, kDisU + dis::qheat(i)), 1.0);
        at.emplace_back(row(n, kDisAllocCoolB), var(n, kDisU + dis::qcool(i)), 1.0);
      }
      for (int i = kBuildingZones; i < kZones; ++i) {
        at.emplace_back(row(n, kDisAllocCoolS), var(n, kDisU + dis::qcool(i)), 1.0);
      }

      for (int k = 0; k < kServerZones; ++k) {
        const Eigen::Index s = var(n, kDisSlack + k), x = var(n, kDisX + kBuildingZones + k);
        const Eigen::Index r = row(n, kDisSlackRows + 3 * k);
        at.emplace_back(r, s, 1.0);
        at.emplace_back(r, x, 1.0);
        l[r] = spec.theta_s.lo;
        u[r] = kInf;
        at.emplace_back(r + 1, s, 1.0);
        at.emplace_back(r + 1, x, -1.0);
        l[r + 1] = -spec.theta_s.hi;
        u[r + 1] = kInf;
        at.emplace_back(r + 2, s, 1.0);
        u[r + 2] = kInf;
        q[s] = spec.w_s;
      }
      for (int i = 0; i < kBuildingZones; ++i) {
        const Eigen::Index x = var(n, kDisX + i);
        pt.emplace_back(x, x, 2.0 * w[i]);
        q[x] = -2.0 * w[i] * spec.theta_ref;
      }
    }
    auto p = QpProblem::create(from_triplets(nvar, nvar, pt), q, from_triplets(nrow, nvar, at), l, u);
    return p;
  }

  OcpSolution solve(
    const Eigen::VectorXd & x0,
    const std::vector<DisturbanceRow> & forecast,
    const OcpSolution & aggregator,
    const CompensationPlan & comp)
  {
    if (x0.size() != kZones || !x0.allFinite()) { throw std::invalid_argument("distributor: x0 must be 9 finite values"); }
    require_forecast(forecast, np());
    require_plan(comp, np());
    if (aggregator.inputs.rows() < np() || aggregator.inputs.cols() != agg::nu) {
      throw std::invalid_argument("distributor: aggregator solution does not cover the horizon");
    }
    const auto start = std::chrono::steady_clock::now();

    std::vector<Eigen::VectorXd> offsets(static_cast<std::size_t>(np()));
    Eigen::MatrixXd totals(np(), 3);
    Eigen::VectorXd l = problem.l, u = problem.u;
    const double heat_cap = spec.q_heat_max * kBuildingZones;
    const double cool_b_cap = spec.q_cool_group_a + spec.q_cool_group_b;
    const double cool_s_cap = spec.q_cool_zone8 + spec.q_cool_zone9;
    for (int n = 0; n < np(); ++n) {
      Eigen::VectorXd & off = offsets[static_cast<std::size_t>(n)];
      off = model.sd() * distributor_disturbance(params, forecast[static_cast<std::size_t>(n)]);
      off += comp.zones.row(n).transpose();
      const Eigen::VectorXd rhs = n == 0 ? Eigen::VectorXd(off + model.ad() * x0) : off;
      for (int i = 0; i < kZones; ++i) { l[row(n, kDisDyn + i)] = u[row(n, kDisDyn + i)] = rhs[i]; }

      // Totals are clamped to what the zones can absorb so that solver
      // round-off in the aggregator plan never makes the allocation infeasible.
      const auto a = aggregator.inputs.row(n);
      totals(n, 0) = std::clamp(a[agg::Qrad] + a[agg::Pchp] / params.c_chp, 0.0, heat_cap);
      totals(n, 1) = std::clamp(a[agg::QcoolB], cool_b_cap, 0.0);
      totals(n, 2) = std::clamp(a[agg::QcoolS], cool_s_cap, 0.0);
      l[row(n, kDisAllocHeat)] = u[row(n, kDisAllocHeat)] = totals(n, 0);
      l[row(n, kDisAllocCoolB)] = u[row(n, kDisAllocCoolB)] = totals(n, 1);
      l[row(n, kDisAllocCoolS)] = u[row(n, kDisAllocCoolS)] = totals(n, 2);
    }
    solver->update_bounds(l, u);

    std::optional<WarmStart> warm;
    if (previous) {
      warm = WarmStart{shift_blocks(previous->z, np(), kDisBlock), shift_blocks(previous->y, np(), kDisRows)};
    }
    const QpSolution qp = solver->solve(warm);
    if (qp.status == QpStatus::PrimalInfeasible || qp.status == QpStatus::DualInfeasible) {
      throw MpcError(std::string("internal error: distributor OCP is ") + to_string(qp.status) +
                     " although the aggregator totals lie within the zone capacities");
    }
    previous = WarmStart{qp.z, qp.y};

    // Each step's allocation is projected onto its exact feasible set and the
    // zone temperatures are recomputed from the model.
    OcpSolution sol;
    fill_diagnostics(sol, qp);
    sol.inputs.resize(np(), dis::nu);
    sol.states.resize(np() + 1, kZones);
    sol.slacks.resize(np(), kServerZones);
    sol.states.row(0) = x0.transpose();
    const ZoneArray w = params.capacity_weights();
    for (int n = 0; n < np(); ++n) {
      const Eigen::VectorXd un = allocate(qp.z.segment(var(n, kDisU), dis::nu), totals.row(n).transpose());
      sol.inputs.row(n) = un.transpose();
      const Eigen::VectorXd xn = sol.states.row(n).transpose();
      sol.states.row(n + 1) = (model.ad() * xn + model.bd() * un + offsets[static_cast<std::size_t>(n)]).transpose();
      for (int i = 0; i < kBuildingZones; ++i) {
        const double dev = sol.states(n + 1, i) - spec.theta_ref;
        sol.costs.comfort += w[i] * dev * dev;
      }
      for (int k = 0; k < kServerZones; ++k) {
        const double t = sol.states(n + 1, kBuildingZones + k);
        sol.slacks(n, k) = std::max({0.0, spec.theta_s.lo - t, t - spec.theta_s.hi});
        sol.costs.slack += sol.slacks(n, k);
      }
    }
    sol.objective = sol.costs.comfort + spec.w_s * sol.costs.slack;
    sol.solve_ms = elapsed_ms(start);
    return sol;
  }

  /// Closest allocation (Euclidean) to `raw` meeting the totals and every
  /// zone and group limit exactly.
  Eigen::VectorXd allocate(const Eigen::VectorXd & raw, const Eigen::Vector3d & totals) const
  {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(dis::nu);

    Eigen::VectorXd w(kBuildingZones), lo(kBuildingZones), hi(kBuildingZones);
    for (int i = 0; i < kBuildingZones; ++i) {
      w[i] = raw[dis::qheat(i)];
      lo[i] = 0.0;
      hi[i] = spec.q_heat_max;
    }
    const Eigen::VectorXd heat = project_sum(w, lo, hi, totals[0]);
    for (int i = 0; i < kBuildingZones; ++i) { out[dis::qheat(i)] = heat[i]; }

    // Building cooling: for a common shift lambda each circuit is clamped to
    // its zone limits and, if it exceeds its capacity, projected onto it.
    for (int i = 0; i < kBuildingZones; ++i) {
      w[i] = raw[dis::qcool(i)];
      lo[i] = cool_lower(i);
      hi[i] = 0.0;
    }
    auto cool_at = [&](double lambda) {
      Eigen::VectorXd v = (w.array() - lambda).max(lo.array()).min(hi.array()).matrix();
      for (const auto & [members, cap] : {std::pair{std::vector<int>(std::begin(kGroupA), std::end(kGroupA)), spec.q_cool_group_a},
                                          std::pair{std::vector<int>(std::begin(kGroupB), std::end(kGroupB)), spec.q_cool_group_b}}) {
        double sum = 0.0;
        for (int i : members) { sum += v[i]; }
        if (sum < cap) {
          Eigen::VectorXd gw(members.size()), glo(members.size()), ghi(members.size());
          for (std::size_t k = 0; k < members.size(); ++k) {
            gw[static_cast<Eigen::Index>(k)] = w[members[k]] - lambda;
            glo[static_cast<Eigen::Index>(k)] = lo[members[k]];
            ghi[static_cast<Eigen::Index>(k)] = hi[members[k]];
          }
          const Eigen::VectorXd g = project_sum(gw, glo, ghi, cap);
          for (std::size_t k = 0; k < members.size(); ++k) { v[members[k]] = g[static_cast<Eigen::Index>(k)]; }
        }
      }
      return v;
    };
    const double target_b = std::clamp(totals[1], spec.q_cool_group_a + spec.q_cool_group_b, 0.0);
    const double lambda = bisect_shift([&](double l) { return cool_at(l).sum(); }, target_b, (w - hi).minCoeff() - 1.0,
                                       (w - lo).maxCoeff() + 1.0);
    const Eigen::VectorXd cool = cool_at(lambda);
    for (int i = 0; i < kBuildingZones; ++i) { out[dis::qcool(i)] = cool[i]; }

    const Eigen::Vector2d sw(raw[dis::qcool(7)], raw[dis::qcool(8)]);
    const Eigen::Vector2d slo(spec.q_cool_zone8, spec.q_cool_zone9);
    const Eigen::VectorXd server = project_sum(sw, slo, Eigen::Vector2d::Zero(), totals[2]);
    out[dis::qcool(7)] = server[0];
    out[dis::qcool(8)] = server[1];
    return out;
  }
};

DistributorController::DistributorController(
  const DistributorOcpSpec & spec, const BuildingParameters & params, const QpSettings & qp)
  : impl_(std::make_unique<Impl>(spec, params, qp))
{
}

DistributorController::~DistributorController() = default;
DistributorController::DistributorController(DistributorController &&) noexcept = default;
DistributorController & DistributorController::operator=(DistributorController &&) noexcept = default;

OcpSolution DistributorController::solve(
  const Eigen::VectorXd & zone_temps,
  const std::vector<DisturbanceRow> & forecast,
  const OcpSolution & aggregator,
  const CompensationPlan & comp)
{
  return impl_->solve(zone_temps, forecast, aggregator, comp);
}

const DiscreteStateSpace & DistributorController::model() const { return impl_->model; }
const QpProblem & DistributorController::problem() const { return impl_->solver->problem(); }
const DistributorOcpSpec & DistributorController::spec() const { return impl_->spec; }

OcpSolution solve_aggregator(
  const AggregatorOcpSpec & spec,
  const BuildingParameters & params,
  const Eigen::VectorXd & x0,
  const std::vector<DisturbanceRow> & forecast,
  const CompensationPlan & comp)
{
  AggregatorController c(spec, params);
  return c.solve(x0, forecast, comp);
}

OcpSolution solve_distributor(
  const DistributorOcpSpec & spec,
  const BuildingParameters & params,
  const Eigen::VectorXd & zone_temps,
  const std::vector<DisturbanceRow> & forecast,
  const OcpSolution & aggregator,
  const CompensationPlan & comp)
{
  DistributorController c(spec, params);
  return c.solve(zone_temps, forecast, aggregator, comp);
}

}  // namespace hemsim
