#pragma once

/**
 * @file
 * @brief Hierarchical model predictive control: the aggregator plans the
 * energy flows of the whole building on the 3-state model, the distributor
 * splits its heating and cooling totals over the 9 zones.
 *
 * Both optimal control problems are posed as sparse QPs over inputs, states
 * and auxiliary variables. The constraint matrix and Hessian do not change
 * between control steps, so each controller keeps one solver workspace and
 * only updates bounds. With the ADMM backend the previous solution, shifted
 * by one step, is the warm start.
 */

#include "hemsim/plant.hpp"
#include "hemsim/qp.hpp"
#include "hemsim/ssmodel.hpp"

#include <memory>
#include <stdexcept>
#include <vector>

namespace hemsim {

struct PriceModel
{
  double p_buy = 0.20;    ///< EUR/kWh
  double p_sell = 0.08;   ///< EUR/kWh
  double p_peak = 10.0;   ///< EUR/kW on the horizon peak import
  double p_gas = 0.06;    ///< EUR/kWh
  double eta_boiler = 0.9;
  double chp_electrical_efficiency = 0.35;

  void validate() const;
};

struct Range
{
  double lo;
  double hi;
};

struct AggregatorBounds
{
  Range p_grid{-1000.0, 1000.0};
  Range p_chp{0.0, 199.0};
  Range q_rad{0.0, 1500.0};
  /// The lower limit is the distributor's total building cooling capacity
  /// (800 + 330 kW), tighter than the 1353 kW nameplate, so every aggregator
  /// plan can be allocated.
  Range q_cool_b{-1130.0, 0.0};
  Range q_cool_s{-197.0, 0.0};
  Range energy{0.15 * 98.0, 0.85 * 98.0};
  double battery_power = 32.9;  ///< |dE|/ts limit, kW
  Range theta_s{15.0, 21.0};     ///< penalized band of the server zone
};

struct AggregatorOcpSpec
{
  int np = 48;
  double ts = 0.5;
  double w_comf = 0.99;
  double w_mon = 0.01;
  double w_s = 0.99;
  double theta_ref = 22.0;
  PriceModel price;
  AggregatorBounds bounds;

  void validate() const;
};

struct DistributorOcpSpec
{
  int np = 48;
  double ts = 0.5;
  double theta_ref = 22.0;
  double q_heat_max = 893.95;
  /// Shared cooling circuit of zones 1, 2, 3, 4 and 7.
  double q_cool_group_a = -800.0;
  /// Shared cooling circuit of zones 5 and 6.
  double q_cool_group_b = -330.0;
  double q_cool_zone8 = -53.0;
  double q_cool_zone9 = -144.0;
  Range theta_s{15.0, 21.0};
  double w_s = 1.0;

  void validate() const;
};

/// Predicted model errors over the horizon.
struct CompensationPlan
{
  Eigen::MatrixXd zones;      ///< np x 9, K per step
  Eigen::MatrixXd aggregate;  ///< np x 2 (building, server)
  bool missing_history = false;

  static CompensationPlan zero(int np);
  /// Aggregates zone predictions with the renormalized capacity weights.
  static CompensationPlan from_zones(const BuildingParameters & params, const Eigen::MatrixXd & zones);

  int np() const { return static_cast<int>(zones.rows()); }
};

struct CostBreakdown
{
  double comfort = 0.0;    ///< sum of squared deviations from the reference
  double monetary = 0.0;   ///< sum of step costs plus peak charge, EUR
  double slack = 0.0;      ///< sum of temperature-band slacks
};

struct OcpSolution
{
  QpStatus status = QpStatus::MaxIter;
  Eigen::MatrixXd inputs;      ///< np x nu
  Eigen::MatrixXd states;      ///< (np + 1) x nx, row 0 is the initial state
  Eigen::MatrixXd slacks;      ///< np x number of slacked zones
  Eigen::VectorXd step_costs;  ///< aggregator only, EUR per step
  double peak = 0.0;           ///< aggregator only, kW
  double objective = 0.0;
  CostBreakdown costs;
  int iterations = 0;
  double primal_residual = 0.0;
  double dual_residual = 0.0;
  bool polished = false;
  double solve_ms = 0.0;

  Eigen::VectorXd first_input() const { return inputs.row(0).transpose(); }
};

/// Solver settings used by the controllers: interior point at 1e-6. The OCPs
/// are nearly linear in the inputs and have flat directions (heating and
/// cooling the same zone), on which ADMM needs thousands of iterations.
/// Returned inputs are still projected onto their exact feasible sets and
/// states recomputed, so constraint and dynamics residuals are at round-off
/// whatever the solver accuracy.
QpSettings mpc_qp_settings();

class MpcError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

class AggregatorController
{
public:
  AggregatorController(const AggregatorOcpSpec & spec, const BuildingParameters & params, const QpSettings & qp = mpc_qp_settings());
  ~AggregatorController();
  AggregatorController(AggregatorController &&) noexcept;
  AggregatorController & operator=(AggregatorController &&) noexcept;

  /// x0 = (E, theta_b, theta_s); forecast needs at least np rows.
  OcpSolution solve(const Eigen::VectorXd & x0, const std::vector<DisturbanceRow> & forecast, const CompensationPlan & comp);

  const DiscreteStateSpace & model() const;
  const QpProblem & problem() const;
  const AggregatorOcpSpec & spec() const;

private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

class DistributorController
{
public:
  DistributorController(const DistributorOcpSpec & spec, const BuildingParameters & params, const QpSettings & qp = mpc_qp_settings());
  ~DistributorController();
  DistributorController(DistributorController &&) noexcept;
  DistributorController & operator=(DistributorController &&) noexcept;

  /// Allocates the aggregator's heating and cooling totals to the zones.
  OcpSolution solve(
    const Eigen::VectorXd & zone_temps,
    const std::vector<DisturbanceRow> & forecast,
    const OcpSolution & aggregator,
    const CompensationPlan & comp);

  const DiscreteStateSpace & model() const;
  const QpProblem & problem() const;
  const DistributorOcpSpec & spec() const;

private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// One-shot solves without a persistent workspace.
OcpSolution solve_aggregator(
  const AggregatorOcpSpec & spec,
  const BuildingParameters & params,
  const Eigen::VectorXd & x0,
  const std::vector<DisturbanceRow> & forecast,
  const CompensationPlan & comp);

OcpSolution solve_distributor(
  const DistributorOcpSpec & spec,
  const BuildingParameters & params,
  const Eigen::VectorXd & zone_temps,
  const std::vector<DisturbanceRow> & forecast,
  const OcpSolution & aggregator,
  const CompensationPlan & comp);

}  // namespace hemsim
