#pragma once

/**
 * @file
 * @brief Per-zone model-error estimators: features, a linear least-squares
 * model with cyclic time encoding and gradient-boosted regression trees on
 * the raw features, bundled as 9 zone models with JSON persistence.
 */

#include "hemsim/ssmodel.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace hemsim {

/// Number of past ambient temperatures used as features.
inline constexpr int kHistory = 2;
inline constexpr int kFeatureSchemaVersion = 1;
inline constexpr int kLinearParameters = 9;
/// theta_air, its two lags, p_dem, tod, doy
inline constexpr int kTreeFeatures = 6;

class EstimatorError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

struct FeatureVector
{
  double theta_air_now = 0.0;
  std::array<double, kHistory> theta_air_lags{};  ///< k-1, k-2
  double p_dem = 0.0;                             ///< kW, non-negative magnitude
  double tod = 0.0;                               ///< h in [0, 24)
  int doy = 1;                                    ///< [1, 365]

  /// Throws std::invalid_argument on non-finite values or out-of-range time.
  void validate() const;
};

/// Day 366 of a leap year maps to 365.
int clamp_day_of_year(int doy);

struct CyclicTime
{
  double sin_tod, cos_tod, sin_doy, cos_doy;
};

CyclicTime cyclic_transform(double tod, int doy);

/// Raw tree inputs: theta_air, lag1, lag2, p_dem, tod, doy.
std::array<double, kTreeFeatures> tree_features(const FeatureVector & f);

struct TrainingSample
{
  long step = 0;
  FeatureVector features;
  ZoneArray eps{};  ///< K, measured model error per zone
};

struct LinearZoneModel
{
  double alpha = 0.0;                     ///< on p_dem
  std::array<double, kHistory + 1> beta{};  ///< on theta_air(k), (k-1), (k-2)
  std::array<double, 2> gamma{};          ///< on sin, cos of the time of day
  std::array<double, 2> delta{};          ///< on sin, cos of the day of year
  double kappa = 0.0;

  double predict(const FeatureVector & f) const;

  /// Order: alpha, beta0..2, gamma1..2, delta1..2, kappa.
  std::array<double, kLinearParameters> coefficients() const;
  static LinearZoneModel from_coefficients(const std::array<double, kLinearParameters> & c);
  /// Regressor row in coefficient order.
  static std::array<double, kLinearParameters> regressors(const FeatureVector & f);
  static const std::array<const char *, kLinearParameters> & regressor_names();
};

struct RegressionTree
{
  struct Node
  {
    int feature = -1;  ///< -1 for leaves
    double threshold = 0.0;  ///< x[feature] <= threshold goes left
    int left = -1;
    int right = -1;
    double value = 0.0;  ///< leaf output
  };
  std::vector<Node> nodes;  ///< nodes[0] is the root

  double predict(const std::array<double, kTreeFeatures> & x) const;
  int depth() const;
};

struct GbtHyperparameters
{
  int n_trees = 200;
  int max_depth = 4;
  double shrinkage = 0.1;
  int min_leaf = 5;
  double subsample = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct GbtZoneModel
{
  std::vector<RegressionTree> trees;
  double shrinkage = 0.1;
  double base_score = 0.0;

  double predict(const FeatureVector & f) const;
  /// Prediction of the ensemble truncated to its first `tree_count` trees.
  double predict(const std::array<double, kTreeFeatures> & x, std::size_t tree_count) const;
};

/// Least squares via column-pivoted Householder QR on column-normalized
/// regressors. Throws EstimatorError naming the collinear columns if the
/// design is rank deficient.
LinearZoneModel fit_linear(std::span<const TrainingSample> samples, int zone);

/// Squared-loss gradient boosting with exact greedy variance-reduction splits.
GbtZoneModel fit_gbt(std::span<const TrainingSample> samples, int zone, const GbtHyperparameters & hyper = {});

enum class EstimatorKind { Linear, Gbt };

const char * to_string(EstimatorKind kind);
EstimatorKind parse_estimator_kind(const std::string & text);

struct BundleMetadata
{
  std::string training_span;  ///< e.g. "steps 2..4319"
  std::string scenario;
  int feature_schema_version = kFeatureSchemaVersion;
};

struct EstimatorBundle
{
  EstimatorKind kind = EstimatorKind::Linear;
  std::vector<LinearZoneModel> linear;  ///< 9 models when kind is Linear
  std::vector<GbtZoneModel> gbt;        ///< 9 models when kind is Gbt
  BundleMetadata metadata;

  /// Throws EstimatorError unless exactly 9 models of the bundle's kind.
  void validate() const;
};

ZoneArray predict(const EstimatorBundle & bundle, const FeatureVector & features);

/// Fits the 9 zone models, up to `threads` at a time.
EstimatorBundle train_bundle(
  EstimatorKind kind,
  std::span<const TrainingSample> samples,
  const GbtHyperparameters & hyper = {},
  BundleMetadata metadata = {},
  int threads = 1);

std::string bundle_to_json(const EstimatorBundle & bundle);
EstimatorBundle bundle_from_json(const std::string & text);
void save_bundle(const EstimatorBundle & bundle, const std::filesystem::path & path);
EstimatorBundle load_bundle(const std::filesystem::path & path);

enum class SplitMode { Chronological, Shuffled };

struct TrainTestSplit
{
  std::vector<TrainingSample> train;
  std::vector<TrainingSample> test;
};

/// The first round(ratio * n) samples by step (or by seeded shuffle) train.
TrainTestSplit train_test_split(
  std::span<const TrainingSample> samples,
  double ratio = 0.7,
  SplitMode mode = SplitMode::Chronological,
  std::uint64_t seed = 0);

/// Mean |eps_i - prediction_i| per zone; a null bundle predicts zero.
ZoneArray mean_abs_residual(const EstimatorBundle * bundle, std::span<const TrainingSample> samples);

/// sum_i w_i * per_zone_i
double weighted_sum(const ZoneArray & weights, const ZoneArray & per_zone);

void write_training_csv(std::span<const TrainingSample> samples, const std::filesystem::path & path);
std::vector<TrainingSample> load_training_csv(const std::filesystem::path & path);

}  // namespace hemsim
