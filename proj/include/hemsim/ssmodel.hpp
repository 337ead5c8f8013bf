#pragma once

/**
 * @file
 * @brief Gray-box thermal models of the building: a 3-state aggregator model
 * (battery, building zone, server zone) and a 9-zone distributor model, with
 * exact zero-order-hold discretization.
 *
 * Units throughout: capacities kWh/K, heat-transfer coefficients kW/K,
 * powers kW, temperatures degC, time h.
 */

#include <Eigen/Dense>

#include <array>
#include <string>
#include <vector>

namespace hemsim {

inline constexpr int kZones = 9;
inline constexpr int kBuildingZones = 7;  // zones 1..7, index 0..6
inline constexpr int kServerZones = 2;    // zones 8..9, index 7..8

using ZoneArray = std::array<double, kZones>;

/// Heat-transfer coefficient between two zones (0-based indices, i < j).
struct Coupling
{
  int i;
  int j;
  double beta;
};

struct BuildingParameters
{
  ZoneArray cth{};      ///< thermal capacity per zone, kWh/K
  ZoneArray hair{};     ///< zone-to-ambient coefficient, kW/K
  std::vector<Coupling> couplings;
  double c_chp = 0.55;  ///< CHP electrical / thermal power
  double eps_c = 3.0;   ///< cooling coefficient of performance
  ZoneArray q_other{};  ///< constant disturbance heat flow per zone, kW

  /// Building parameter set of the Offenbach facility, with default values
  /// for the quantities that are configuration rather than measured data.
  static BuildingParameters offenbach2021();

  /// Throws std::invalid_argument if any invariant is violated.
  void validate() const;

  /// Symmetric lookup, zero for uncoupled pairs.
  double beta(int i, int j) const;

  double cth_building() const;
  double cth_server() const;
  double hair_building() const;
  double hair_server() const;
  /// Sum of all couplings crossing the building/server boundary.
  double beta_bs() const;
  double qother_building() const;
  double qother_server() const;

  /// wth_i = cth_i / sum_j cth_j.
  ZoneArray capacity_weights() const;
};

/// Canonical coupling order of the facility: (2,9), (3,4), (5,6), (5,8), (6,8).
const std::vector<std::pair<int, int>> & coupling_pairs();

struct ContinuousStateSpace
{
  Eigen::MatrixXd a;
  Eigen::MatrixXd b;
  Eigen::MatrixXd s;
  std::vector<std::string> state_labels;
  std::vector<std::string> input_labels;
  std::vector<std::string> disturbance_labels;

  Eigen::Index nx() const { return a.rows(); }
  Eigen::Index nu() const { return b.cols(); }
  Eigen::Index nd() const { return s.cols(); }
};

class DiscreteStateSpace
{
public:
  const Eigen::MatrixXd & ad() const { return ad_; }
  const Eigen::MatrixXd & bd() const { return bd_; }
  const Eigen::MatrixXd & sd() const { return sd_; }
  double ts() const { return ts_; }

  Eigen::Index nx() const { return ad_.rows(); }
  Eigen::Index nu() const { return bd_.cols(); }
  Eigen::Index nd() const { return sd_.cols(); }

private:
  friend DiscreteStateSpace discretize(const ContinuousStateSpace &, double);
  DiscreteStateSpace() = default;

  Eigen::MatrixXd ad_, bd_, sd_;
  double ts_ = 0.0;
};

// Aggregator layout.
namespace agg {
enum State : int { E = 0, ThetaB = 1, ThetaS = 2 };
enum Input : int { Pgrid = 0, Pchp = 1, Qrad = 2, QcoolB = 3, QcoolS = 4 };
enum Disturbance : int { Pren = 0, Pdem = 1, ThetaAir = 2, QotherB = 3, QotherS = 4 };
inline constexpr int nx = 3, nu = 5, nd = 5;
}  // namespace agg

// Distributor layout: inputs are Qheat_1..9 then Qcool_1..9; disturbances are
// theta_air then Qother_1..9.
namespace dis {
inline constexpr int nx = kZones, nu = 2 * kZones, nd = 1 + kZones;
constexpr int qheat(int zone) { return zone; }
constexpr int qcool(int zone) { return kZones + zone; }
inline constexpr int theta_air = 0;
constexpr int qother(int zone) { return 1 + zone; }
}  // namespace dis

ContinuousStateSpace build_aggregator_model(const BuildingParameters & params);
ContinuousStateSpace build_distributor_model(const BuildingParameters & params);

/// Exact zero-order-hold sampling via the exponential of the augmented matrix
/// [[A B S]; [0 0 0]] * ts.
DiscreteStateSpace discretize(const ContinuousStateSpace & model, double ts);

/// x+ = Ad x + Bd u + Sd d + eps.
Eigen::VectorXd step(
  const DiscreteStateSpace & model,
  const Eigen::VectorXd & x,
  const Eigen::VectorXd & u,
  const Eigen::VectorXd & d,
  const Eigen::VectorXd & eps);

Eigen::VectorXd step(
  const DiscreteStateSpace & model,
  const Eigen::VectorXd & x,
  const Eigen::VectorXd & u,
  const Eigen::VectorXd & d);

/// Capacity-weighted averages (theta_b, theta_s) of the 9 zone temperatures.
std::pair<double, double> aggregate_temperatures(
  const BuildingParameters & params, const Eigen::VectorXd & zone_temps);

}  // namespace hemsim
