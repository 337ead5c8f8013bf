#include "hemsim/estimators.hpp"

#include "hemsim/csv.hpp"
#include "hemsim/rng.hpp"

#include <nlohmann/json.hpp>

#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <future>
#include <iomanip>
#include <numbers>
#include <numeric>
#include <sstream>

namespace hemsim {

namespace {

using nlohmann::json;

constexpr const char * kBundleSchema = "hemsim.estimator_bundle";
constexpr int kBundleVersion = 1;

void check_zone(int zone)
{
  if (zone < 0 || zone >= kZones) { throw std::invalid_argument("zone index must be in [0, 9)"); }
}

}  // namespace

void FeatureVector::validate() const
{
  const bool finite = std::isfinite(theta_air_now) && std::isfinite(theta_air_lags[0]) &&
                      std::isfinite(theta_air_lags[1]) && std::isfinite(p_dem) && std::isfinite(tod);
  if (!finite) { throw std::invalid_argument("features must be finite"); }
  if (tod < 0.0 || tod >= 24.0) { throw std::invalid_argument("time of day must lie in [0, 24)"); }
  if (doy < 1 || doy > 365) { throw std::invalid_argument("day of year must lie in [1, 365]"); }
}

int clamp_day_of_year(int doy) { return std::clamp(doy, 1, 365); }

CyclicTime cyclic_transform(double tod, int doy)
{
  constexpr double two_pi = 2.0 * std::numbers::pi;
  const double a = two_pi * tod / 24.0;
  const double b = two_pi * static_cast<double>(doy) / 365.0;
  return {std::sin(a), std::cos(a), std::sin(b), std::cos(b)};
}

std::array<double, kTreeFeatures> tree_features(const FeatureVector & f)
{
  return {f.theta_air_now, f.theta_air_lags[0], f.theta_air_lags[1], f.p_dem, f.tod, static_cast<double>(f.doy)};
}

// ---------------------------------------------------------------- linear

std::array<double, kLinearParameters> LinearZoneModel::regressors(const FeatureVector & f)
{
  const auto c = cyclic_transform(f.tod, f.doy);
  return {f.p_dem, f.theta_air_now, f.theta_air_lags[0], f.theta_air_lags[1], c.sin_tod, c.cos_tod, c.sin_doy, c.cos_doy,
          1.0};
}

const std::array<const char *, kLinearParameters> & LinearZoneModel::regressor_names()
{
  static const std::array<const char *, kLinearParameters> names{
    "p_dem", "theta_air", "theta_air_lag1", "theta_air_lag2", "sin_tod", "cos_tod", "sin_doy", "cos_doy", "intercept"};
  return names;
}

std::array<double, kLinearParameters> LinearZoneModel::coefficients() const
{
  return {alpha, beta[0], beta[1], beta[2], gamma[0], gamma[1], delta[0], delta[1], kappa};
}

LinearZoneModel LinearZoneModel::from_coefficients(const std::array<double, kLinearParameters> & c)
{
  LinearZoneModel m;
  m.alpha = c[0];
  m.beta = {c[1], c[2], c[3]};
  m.gamma = {c[4], c[5]};
  m.delta = {c[6], c[7]};
  m.kappa = c[8];
  return m;
}

double LinearZoneModel::predict(const FeatureVector & f) const
{
  const auto r = regressors(f);
  const auto c = coefficients();
  double sum = 0.0;
  for (int j = 0; j < kLinearParameters; ++j) { sum += c[j] * r[j]; }
  return sum;
}

LinearZoneModel fit_linear(std::span<const TrainingSample> samples, int zone)
{
  check_zone(zone);
  const auto n = static_cast<Eigen::Index>(samples.size());
  if (n < kLinearParameters) {
    throw EstimatorError("linear estimator needs at least 9 samples, got " + std::to_string(n));
  }
  Eigen::MatrixXd design(n, kLinearParameters);
  Eigen::VectorXd target(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    const auto & s = samples[static_cast<std::size_t>(k)];
    const auto r = LinearZoneModel::regressors(s.features);
    for (int j = 0; j < kLinearParameters; ++j) { design(k, j) = r[j]; }
    target[k] = s.eps[static_cast<std::size_t>(zone)];
  }
  // Unit column norms make the rank threshold meaningful across units.
  Eigen::VectorXd norms = design.colwise().norm().transpose();
  for (int j = 0; j < kLinearParameters; ++j) {
    if (norms[j] == 0.0) {
      throw EstimatorError(std::string("linear estimator: design matrix is rank deficient; column ") +
                           LinearZoneModel::regressor_names()[j] + " is identically zero");
    }
  }
  design = design * norms.cwiseInverse().asDiagonal();
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
  qr.setThreshold(1e-10);
  if (qr.rank() < kLinearParameters) {
    std::string names;
    const auto & perm = qr.colsPermutation().indices();
    for (Eigen::Index j = qr.rank(); j < kLinearParameters; ++j) {
      if (!names.empty()) { names += ", "; }
      names += LinearZoneModel::regressor_names()[static_cast<std::size_t>(perm[j])];
    }
    throw EstimatorError("linear estimator: design matrix is rank deficient (rank " + std::to_string(qr.rank()) +
                         " of 9); collinear columns: " + names);
  }
  const Eigen::VectorXd scaled = qr.solve(target);
  std::array<double, kLinearParameters> c{};
  for (int j = 0; j < kLinearParameters; ++j) { c[j] = scaled[j] / norms[j]; }
  return LinearZoneModel::from_coefficients(c);
}

// ---------------------------------------------------------------- trees

double RegressionTree::predict(const std::array<double, kTreeFeatures> & x) const
{
  int i = 0;
  while (nodes[static_cast<std::size_t>(i)].feature >= 0) {
    const auto & nd = nodes[static_cast<std::size_t>(i)];
    i = x[static_cast<std::size_t>(nd.feature)] <= nd.threshold ? nd.left : nd.right;
  }
  return nodes[static_cast<std::size_t>(i)].value;
}

int RegressionTree::depth() const
{
  std::vector<int> level(nodes.size(), 0);
  int deepest = 0;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    deepest = std::max(deepest, level[i]);
    if (nodes[i].feature >= 0) {
      level[static_cast<std::size_t>(nodes[i].left)] = level[i] + 1;
      level[static_cast<std::size_t>(nodes[i].right)] = level[i] + 1;
    }
  }
  return deepest;
}

void GbtHyperparameters::validate() const
{
  if (n_trees < 0) { throw std::invalid_argument("n_trees must be >= 0"); }
  if (max_depth < 0) { throw std::invalid_argument("max_depth must be >= 0"); }
  if (!(shrinkage > 0.0 && shrinkage <= 1.0)) { throw std::invalid_argument("shrinkage must lie in (0, 1]"); }
  if (min_leaf < 1) { throw std::invalid_argument("min_leaf must be >= 1"); }
  if (!(subsample > 0.0 && subsample <= 1.0)) { throw std::invalid_argument("subsample must lie in (0, 1]"); }
}

double GbtZoneModel::predict(const FeatureVector & f) const { return predict(tree_features(f), trees.size()); }

double GbtZoneModel::predict(const std::array<double, kTreeFeatures> & x, std::size_t tree_count) const
{
  double sum = 0.0;
  const std::size_t count = std::min(tree_count, trees.size());
  for (std::size_t t = 0; t < count; ++t) { sum += trees[t].predict(x); }
  return base_score + shrinkage * sum;
}

namespace {

/// Grows one tree level by level. Every level scans each feature's global
/// sort order once and routes rows to their node's running split search, so
/// the cost per level is O(features * rows) independent of the node count.
class TreeBuilder
{
public:
  TreeBuilder(const std::vector<std::vector<double>> & columns, const std::vector<std::vector<int>> & order, int max_depth,
              int min_leaf)
      : columns_(columns), order_(order), max_depth_(max_depth), min_leaf_(min_leaf)
  {}

  /// `in_sample` rows carry residual `gradient`; returns the fitted tree.
  RegressionTree build(const std::vector<double> & residual, const std::vector<char> & in_sample)
  {
    const std::size_t rows = residual.size();
    node_of_.assign(rows, -1);
    RegressionTree tree;
    tree.nodes.emplace_back();
    std::vector<Stats> stats(1);
    for (std::size_t i = 0; i < rows; ++i) {
      if (!in_sample[i]) { continue; }
      node_of_[i] = 0;
      stats[0].sum += residual[i];
      ++stats[0].count;
    }

    std::vector<int> level{0};
    for (int depth = 0; depth < max_depth_ && !level.empty(); ++depth) {
      // Local slot of each node on this level.
      std::vector<int> slot(tree.nodes.size(), -1);
      for (std::size_t s = 0; s < level.size(); ++s) { slot[static_cast<std::size_t>(level[s])] = static_cast<int>(s); }
      std::vector<Split> best(level.size());
      std::vector<Scan> scan(level.size());
      for (int f = 0; f < kTreeFeatures; ++f) {
        std::fill(scan.begin(), scan.end(), Scan{});
        const auto & col = columns_[static_cast<std::size_t>(f)];
        for (const int i : order_[static_cast<std::size_t>(f)]) {
          const int node = node_of_[static_cast<std::size_t>(i)];
          if (node < 0 || slot[static_cast<std::size_t>(node)] < 0) { continue; }
          const auto s = static_cast<std::size_t>(slot[static_cast<std::size_t>(node)]);
          auto & sc = scan[s];
          const double v = col[static_cast<std::size_t>(i)];
          const auto & total = stats[static_cast<std::size_t>(node)];
          if (sc.count > 0 && v > sc.last) {
            const long right = total.count - sc.count;
            if (sc.count >= min_leaf_ && right >= min_leaf_) {
              const double rsum = total.sum - sc.sum;
              const double gain = sc.sum * sc.sum / static_cast<double>(sc.count) +
                                  rsum * rsum / static_cast<double>(right) -
                                  total.sum * total.sum / static_cast<double>(total.count);
              if (gain > best[s].gain) {
                double threshold = sc.last + 0.5 * (v - sc.last);
                if (!(threshold < v)) { threshold = sc.last; }
                best[s] = Split{gain, f, threshold};
              }
            }
          }
          sc.sum += residual[static_cast<std::size_t>(i)];
          ++sc.count;
          sc.last = v;
        }
      }

      std::vector<int> next;
      for (std::size_t s = 0; s < level.size(); ++s) {
        if (best[s].feature < 0) { continue; }
        const int parent = level[s];
        const int left = static_cast<int>(tree.nodes.size());
        tree.nodes.emplace_back();
        tree.nodes.emplace_back();
        stats.resize(tree.nodes.size());
        auto & p = tree.nodes[static_cast<std::size_t>(parent)];
        p.feature = best[s].feature;
        p.threshold = best[s].threshold;
        p.left = left;
        p.right = left + 1;
        next.push_back(left);
        next.push_back(left + 1);
      }
      if (next.empty()) { break; }
      for (std::size_t i = 0; i < rows; ++i) {
        const int node = node_of_[i];
        if (node < 0) { continue; }
        const auto & nd = tree.nodes[static_cast<std::size_t>(node)];
        if (nd.feature < 0 || slot[static_cast<std::size_t>(node)] < 0) { continue; }
        const int child = columns_[static_cast<std::size_t>(nd.feature)][i] <= nd.threshold ? nd.left : nd.right;
        node_of_[i] = child;
        stats[static_cast<std::size_t>(child)].sum += residual[i];
        ++stats[static_cast<std::size_t>(child)].count;
      }
      level = std::move(next);
    }

    for (std::size_t k = 0; k < tree.nodes.size(); ++k) {
      if (tree.nodes[k].feature < 0 && stats[k].count > 0) {
        tree.nodes[k].value = stats[k].sum / static_cast<double>(stats[k].count);
      }
    }
    return tree;
  }

private:
  struct Stats
  {
    double sum = 0.0;
    long count = 0;
  };
  struct Scan
  {
    double sum = 0.0;
    long count = 0;
    double last = 0.0;
  };
  struct Split
  {
    double gain = 0.0;
    int feature = -1;
    double threshold = 0.0;
  };

  const std::vector<std::vector<double>> & columns_;
  const std::vector<std::vector<int>> & order_;
  int max_depth_;
  int min_leaf_;
  std::vector<int> node_of_;
};

}  // namespace

GbtZoneModel fit_gbt(std::span<const TrainingSample> samples, int zone, const GbtHyperparameters & hyper)
{
  check_zone(zone);
  hyper.validate();
  if (samples.empty()) { throw EstimatorError("gradient boosting needs a non-empty sample set"); }
  if (static_cast<long>(samples.size()) < hyper.min_leaf) {
    throw EstimatorError("gradient boosting needs at least min_leaf samples");
  }
  const std::size_t rows = samples.size();
  std::vector<std::vector<double>> columns(kTreeFeatures, std::vector<double>(rows));
  std::vector<double> target(rows);
  std::vector<std::array<double, kTreeFeatures>> x(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    x[i] = tree_features(samples[i].features);
    for (int f = 0; f < kTreeFeatures; ++f) { columns[static_cast<std::size_t>(f)][i] = x[i][static_cast<std::size_t>(f)]; }
    target[i] = samples[i].eps[static_cast<std::size_t>(zone)];
  }
  std::vector<std::vector<int>> order(kTreeFeatures, std::vector<int>(rows));
  for (int f = 0; f < kTreeFeatures; ++f) {
    auto & o = order[static_cast<std::size_t>(f)];
    std::iota(o.begin(), o.end(), 0);
    const auto & col = columns[static_cast<std::size_t>(f)];
    std::stable_sort(o.begin(), o.end(), [&](int a, int b) { return col[static_cast<std::size_t>(a)] < col[static_cast<std::size_t>(b)]; });
  }

  GbtZoneModel model;
  model.shrinkage = hyper.shrinkage;
  model.base_score = std::accumulate(target.begin(), target.end(), 0.0) / static_cast<double>(rows);
  std::vector<double> prediction(rows, model.base_score);
  std::vector<double> residual(rows);
  std::vector<char> in_sample(rows, 1);
  const auto draw = static_cast<std::size_t>(std::max(1.0, std::floor(hyper.subsample * static_cast<double>(rows))));
  std::vector<std::size_t> pool(rows);
  TreeBuilder builder(columns, order, hyper.max_depth, hyper.min_leaf);

  for (int t = 0; t < hyper.n_trees; ++t) {
    for (std::size_t i = 0; i < rows; ++i) { residual[i] = target[i] - prediction[i]; }
    if (draw < rows) {
      // Partial Fisher-Yates: the first `draw` entries are a uniform subset.
      SplitMix64 rng(derive_seed(hyper.seed, static_cast<std::uint64_t>(t)));
      std::iota(pool.begin(), pool.end(), std::size_t{0});
      std::fill(in_sample.begin(), in_sample.end(), 0);
      for (std::size_t k = 0; k < draw; ++k) {
        const std::size_t j = k + static_cast<std::size_t>(rng.next() % (rows - k));
        std::swap(pool[k], pool[j]);
        in_sample[pool[k]] = 1;
      }
    }
    RegressionTree tree = builder.build(residual, in_sample);
    for (std::size_t i = 0; i < rows; ++i) { prediction[i] += model.shrinkage * tree.predict(x[i]); }
    model.trees.push_back(std::move(tree));
  }
  return model;
}

// ---------------------------------------------------------------- bundle

const char * to_string(EstimatorKind kind) { return kind == EstimatorKind::Linear ? "linear" : "gbt"; }

EstimatorKind parse_estimator_kind(const std::string & text)
{
  if (text == "linear") { return EstimatorKind::Linear; }
  if (text == "gbt") { return EstimatorKind::Gbt; }
  throw std::invalid_argument("unknown estimator kind '" + text + "' (expected linear or gbt)");
}

void EstimatorBundle::validate() const
{
  const bool linear_ok = kind == EstimatorKind::Linear && linear.size() == kZones && gbt.empty();
  const bool gbt_ok = kind == EstimatorKind::Gbt && gbt.size() == kZones && linear.empty();
  if (!linear_ok && !gbt_ok) { throw EstimatorError("estimator bundle must hold exactly 9 models of its kind"); }
  if (metadata.feature_schema_version != kFeatureSchemaVersion) {
    throw EstimatorError("estimator bundle feature schema " + std::to_string(metadata.feature_schema_version) +
                         " does not match this build (" + std::to_string(kFeatureSchemaVersion) + ")");
  }
}

ZoneArray predict(const EstimatorBundle & bundle, const FeatureVector & features)
{
  ZoneArray out{};
  if (bundle.kind == EstimatorKind::Linear) {
    for (int i = 0; i < kZones; ++i) { out[static_cast<std::size_t>(i)] = bundle.linear.at(static_cast<std::size_t>(i)).predict(features); }
  } else {
    const auto x = tree_features(features);
    for (int i = 0; i < kZones; ++i) {
      const auto & m = bundle.gbt.at(static_cast<std::size_t>(i));
      out[static_cast<std::size_t>(i)] = m.predict(x, m.trees.size());
    }
  }
  return out;
}

EstimatorBundle train_bundle(
  EstimatorKind kind,
  std::span<const TrainingSample> samples,
  const GbtHyperparameters & hyper,
  BundleMetadata metadata,
  int threads)
{
  EstimatorBundle bundle;
  bundle.kind = kind;
  bundle.metadata = std::move(metadata);
  if (kind == EstimatorKind::Linear) {
    bundle.linear.resize(kZones);
  } else {
    hyper.validate();
    bundle.gbt.resize(kZones);
  }
  const auto fit_zone = [&](int zone) {
    if (kind == EstimatorKind::Linear) {
      bundle.linear[static_cast<std::size_t>(zone)] = fit_linear(samples, zone);
    } else {
      GbtHyperparameters h = hyper;
      h.seed = derive_seed(hyper.seed, static_cast<std::uint64_t>(zone));
      bundle.gbt[static_cast<std::size_t>(zone)] = fit_gbt(samples, zone, h);
    }
  };
  const int workers = std::clamp(threads, 1, kZones);
  for (int first = 0; first < kZones; first += workers) {
    std::vector<std::future<void>> jobs;
    for (int zone = first; zone < std::min(kZones, first + workers); ++zone) {
      jobs.push_back(std::async(workers > 1 ? std::launch::async : std::launch::deferred, fit_zone, zone));
    }
    for (auto & j : jobs) { j.get(); }
  }
  return bundle;
}

std::string bundle_to_json(const EstimatorBundle & bundle)
{
  bundle.validate();
  json doc;
  doc["schema"] = kBundleSchema;
  doc["version"] = kBundleVersion;
  doc["kind"] = to_string(bundle.kind);
  doc["metadata"] = {{"training_span", bundle.metadata.training_span},
                     {"scenario", bundle.metadata.scenario},
                     {"feature_schema_version", bundle.metadata.feature_schema_version}};
  json zones = json::array();
  if (bundle.kind == EstimatorKind::Linear) {
    for (const auto & m : bundle.linear) {
      zones.push_back({{"alpha", m.alpha}, {"beta", m.beta}, {"gamma", m.gamma}, {"delta", m.delta}, {"kappa", m.kappa}});
    }
  } else {
    for (const auto & m : bundle.gbt) {
      json trees = json::array();
      for (const auto & t : m.trees) {
        json feature = json::array(), threshold = json::array(), left = json::array(), right = json::array(),
             value = json::array();
        for (const auto & nd : t.nodes) {
          feature.push_back(nd.feature);
          threshold.push_back(nd.threshold);
          left.push_back(nd.left);
          right.push_back(nd.right);
          value.push_back(nd.value);
        }
        trees.push_back(
          {{"feature", feature}, {"threshold", threshold}, {"left", left}, {"right", right}, {"value", value}});
      }
      zones.push_back({{"base_score", m.base_score}, {"shrinkage", m.shrinkage}, {"trees", trees}});
    }
  }
  doc["zones"] = zones;
  return doc.dump();
}

EstimatorBundle bundle_from_json(const std::string & text)
{
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception & e) {
    throw EstimatorError(std::string("estimator bundle is not valid JSON: ") + e.what());
  }
  try {
    if (doc.value("schema", std::string{}) != kBundleSchema) { throw EstimatorError("not an estimator bundle (schema tag missing)"); }
    const int version = doc.at("version").get<int>();
    if (version != kBundleVersion) {
      throw EstimatorError("estimator bundle version " + std::to_string(version) + " is not supported (expected " +
                           std::to_string(kBundleVersion) + ")");
    }
    EstimatorBundle b;
    b.kind = parse_estimator_kind(doc.at("kind").get<std::string>());
    const auto & meta = doc.at("metadata");
    b.metadata.training_span = meta.value("training_span", std::string{});
    b.metadata.scenario = meta.value("scenario", std::string{});
    b.metadata.feature_schema_version = meta.at("feature_schema_version").get<int>();
    for (const auto & z : doc.at("zones")) {
      if (b.kind == EstimatorKind::Linear) {
        LinearZoneModel m;
        m.alpha = z.at("alpha").get<double>();
        m.beta = z.at("beta").get<std::array<double, kHistory + 1>>();
        m.gamma = z.at("gamma").get<std::array<double, 2>>();
        m.delta = z.at("delta").get<std::array<double, 2>>();
        m.kappa = z.at("kappa").get<double>();
        b.linear.push_back(m);
      } else {
        GbtZoneModel m;
        m.base_score = z.at("base_score").get<double>();
        m.shrinkage = z.at("shrinkage").get<double>();
        for (const auto & t : z.at("trees")) {
          const auto feature = t.at("feature").get<std::vector<int>>();
          const auto threshold = t.at("threshold").get<std::vector<double>>();
          const auto left = t.at("left").get<std::vector<int>>();
          const auto right = t.at("right").get<std::vector<int>>();
          const auto value = t.at("value").get<std::vector<double>>();
          const std::size_t count = feature.size();
          if (count == 0 || threshold.size() != count || left.size() != count || right.size() != count ||
              value.size() != count) {
            throw EstimatorError("estimator bundle: tree arrays have inconsistent lengths");
          }
          RegressionTree tree;
          for (std::size_t k = 0; k < count; ++k) {
            const bool split = feature[k] >= 0;
            const bool children_ok = !split || (left[k] > static_cast<int>(k) && right[k] > static_cast<int>(k) &&
                                                left[k] < static_cast<int>(count) && right[k] < static_cast<int>(count));
            if (feature[k] >= kTreeFeatures || !children_ok) {
              throw EstimatorError("estimator bundle: malformed tree node " + std::to_string(k));
            }
            tree.nodes.push_back({feature[k], threshold[k], left[k], right[k], value[k]});
          }
          m.trees.push_back(std::move(tree));
        }
        b.gbt.push_back(std::move(m));
      }
    }
    b.validate();
    return b;
  } catch (const json::exception & e) {
    throw EstimatorError(std::string("estimator bundle schema violation: ") + e.what());
  }
}

void save_bundle(const EstimatorBundle & bundle, const std::filesystem::path & path)
{
  std::ofstream out(path);
  if (!out) { throw std::runtime_error("cannot write " + path.string()); }
  out << bundle_to_json(bundle) << '\n';
}

EstimatorBundle load_bundle(const std::filesystem::path & path)
{
  std::ifstream in(path);
  if (!in) { throw std::runtime_error("cannot open estimator bundle " + path.string()); }
  std::stringstream ss;
  ss << in.rdbuf();
  return bundle_from_json(ss.str());
}

// ---------------------------------------------------------------- data

TrainTestSplit train_test_split(std::span<const TrainingSample> samples, double ratio, SplitMode mode, std::uint64_t seed)
{
  if (samples.size() < 10) { throw std::invalid_argument("train/test split needs at least 10 samples"); }
  if (!(ratio > 0.0 && ratio < 1.0)) { throw std::invalid_argument("split ratio must lie in (0, 1)"); }
  std::vector<std::size_t> idx(samples.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (mode == SplitMode::Chronological) {
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return samples[a].step < samples[b].step; });
  } else {
    SplitMix64 rng(seed);
    for (std::size_t k = idx.size() - 1; k > 0; --k) {
      std::swap(idx[k], idx[static_cast<std::size_t>(rng.next() % (k + 1))]);
    }
  }
  const auto n_train = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(samples.size())));
  TrainTestSplit out;
  for (std::size_t k = 0; k < idx.size(); ++k) { (k < n_train ? out.train : out.test).push_back(samples[idx[k]]); }
  return out;
}

ZoneArray mean_abs_residual(const EstimatorBundle * bundle, std::span<const TrainingSample> samples)
{
  ZoneArray sum{};
  if (samples.empty()) { return sum; }
  for (const auto & s : samples) {
    const ZoneArray pred = bundle ? predict(*bundle, s.features) : ZoneArray{};
    for (int i = 0; i < kZones; ++i) { sum[static_cast<std::size_t>(i)] += std::abs(s.eps[static_cast<std::size_t>(i)] - pred[static_cast<std::size_t>(i)]); }
  }
  for (auto & v : sum) { v /= static_cast<double>(samples.size()); }
  return sum;
}

double weighted_sum(const ZoneArray & weights, const ZoneArray & per_zone)
{
  double sum = 0.0;
  for (int i = 0; i < kZones; ++i) { sum += weights[static_cast<std::size_t>(i)] * per_zone[static_cast<std::size_t>(i)]; }
  return sum;
}

void write_training_csv(std::span<const TrainingSample> samples, const std::filesystem::path & path)
{
  std::ofstream out(path);
  if (!out) { throw std::runtime_error("cannot write " + path.string()); }
  out << "step,tod,doy,theta_air,theta_air_lag1,theta_air_lag2,p_dem";
  for (int i = 1; i <= kZones; ++i) { out << ",eps_" << i; }
  out << '\n' << std::setprecision(17);
  for (const auto & s : samples) {
    const auto & f = s.features;
    out << s.step << ',' << f.tod << ',' << f.doy << ',' << f.theta_air_now << ',' << f.theta_air_lags[0] << ','
        << f.theta_air_lags[1] << ',' << f.p_dem;
    for (const double e : s.eps) { out << ',' << e; }
    out << '\n';
  }
}

std::vector<TrainingSample> load_training_csv(const std::filesystem::path & path)
{
  const auto table = csv::read(path);
  const std::size_t c_step = table.column("step"), c_tod = table.column("tod"), c_doy = table.column("doy"),
                    c_air = table.column("theta_air"), c_lag1 = table.column("theta_air_lag1"),
                    c_lag2 = table.column("theta_air_lag2"), c_dem = table.column("p_dem");
  std::array<std::size_t, kZones> c_eps{};
  for (int i = 0; i < kZones; ++i) { c_eps[static_cast<std::size_t>(i)] = table.column("eps_" + std::to_string(i + 1)); }

  std::vector<TrainingSample> out;
  out.reserve(table.rows.size());
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    TrainingSample s;
    const double step = table.number(r, c_step);
    const double doy = table.number(r, c_doy);
    if (step != std::floor(step) || doy != std::floor(doy)) {
      throw std::runtime_error(table.source + " line " + std::to_string(table.line_numbers[r]) +
                               ": step and doy must be integers");
    }
    s.step = static_cast<long>(step);
    s.features.tod = table.number(r, c_tod);
    s.features.doy = clamp_day_of_year(static_cast<int>(doy));
    s.features.theta_air_now = table.number(r, c_air);
    s.features.theta_air_lags = {table.number(r, c_lag1), table.number(r, c_lag2)};
    s.features.p_dem = table.number(r, c_dem);
    for (int i = 0; i < kZones; ++i) { s.eps[static_cast<std::size_t>(i)] = table.number(r, c_eps[static_cast<std::size_t>(i)]); }
    try {
      s.features.validate();
    } catch (const std::invalid_argument & e) {
      throw std::runtime_error(table.source + " line " + std::to_string(table.line_numbers[r]) + ": " + e.what());
    }
    for (const double e : s.eps) {
      if (!std::isfinite(e)) {
        throw std::runtime_error(table.source + " line " + std::to_string(table.line_numbers[r]) + ": non-finite target");
      }
    }
    out.push_back(s);
  }
  return out;
}

}  // namespace hemsim
