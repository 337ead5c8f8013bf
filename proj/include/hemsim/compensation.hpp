#pragma once

/**
 * @file
 * @brief Horizon compensation plans from a trained error estimator.
 */

#include "hemsim/estimators.hpp"
#include "hemsim/mpc.hpp"
#include "hemsim/plant.hpp"

namespace hemsim {

/// Features for absolute step k. Lags before the first data row are zero
/// and set `missing` to true.
FeatureVector features_at(const DisturbanceSeries & series, long k, bool & missing);

/// Queries the 9 zone estimators at steps k..k+np-1 and aggregates them with
/// the capacity weights of `params` (the controller's model). Disturbances are
/// taken from `series` as perfect forecasts. A null estimator gives the zero
/// plan. Throws std::out_of_range if the series ends before k+np-1.
CompensationPlan build_compensation(
  const EstimatorBundle * estimator,
  const BuildingParameters & params,
  const DisturbanceSeries & series,
  long k,
  int np);

}  // namespace hemsim
