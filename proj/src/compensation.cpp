#include "hemsim/compensation.hpp"

#include "hemsim/calendar.hpp"

#include <stdexcept>

namespace hemsim {

FeatureVector features_at(const DisturbanceSeries & series, long k, bool & missing)
{
  const long last = series.first_step + static_cast<long>(series.size()) - 1;
  if (k < series.first_step || k > last) {
    throw std::out_of_range("features_at: step " + std::to_string(k) + " outside the disturbance data");
  }
  FeatureVector f;
  const auto row = series.at_step(k);
  f.theta_air_now = row.theta_air;
  f.p_dem = row.p_dem;
  f.tod = time_of_day(k);
  f.doy = day_of_year(k);
  for (int lag = 1; lag <= kHistory; ++lag) {
    if (k - lag < series.first_step) {
      missing = true;
      f.theta_air_lags[static_cast<std::size_t>(lag - 1)] = 0.0;
    } else {
      f.theta_air_lags[static_cast<std::size_t>(lag - 1)] = series.at_step(k - lag).theta_air;
    }
  }
  return f;
}

CompensationPlan build_compensation(
  const EstimatorBundle * estimator,
  const BuildingParameters & params,
  const DisturbanceSeries & series,
  long k,
  int np)
{
  if (np < 1) { throw std::invalid_argument("build_compensation: np must be >= 1"); }
  if (estimator == nullptr) { return CompensationPlan::zero(np); }
  Eigen::MatrixXd zones(np, kZones);
  bool missing = false;
  for (int n = 0; n < np; ++n) {
    const auto eps = predict(*estimator, features_at(series, k + n, missing));
    for (int i = 0; i < kZones; ++i) { zones(n, i) = eps[static_cast<std::size_t>(i)]; }
  }
  auto plan = CompensationPlan::from_zones(params, zones);
  plan.missing_history = missing;
  return plan;
}

}  // namespace hemsim
