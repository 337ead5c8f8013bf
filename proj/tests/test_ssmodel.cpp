#include <doctest.h>

#include "hemsim/rng.hpp"
#include "hemsim/ssmodel.hpp"
#include "oracles.hpp"

#include <cmath>

using namespace hemsim;

TEST_CASE("offenbach preset satisfies the aggregate identities")
{
  const auto p = BuildingParameters::offenbach2021();
  CHECK(p.cth_building() == doctest::Approx(1784.856).epsilon(1e-12));
  CHECK(p.cth_server() == doctest::Approx(7.2).epsilon(1e-12));
  CHECK(p.hair_building() == doctest::Approx(34.12).epsilon(1e-12));
  CHECK(p.hair_server() == doctest::Approx(0.07).epsilon(1e-12));
  CHECK(p.beta_bs() == doctest::Approx(48.40 + 23.40 + 8.00).epsilon(1e-12));

  // Couplings are exactly the five listed pairs.
  int nonzero = 0;
  for (int i = 0; i < kZones; ++i) {
    for (int j = 0; j < kZones; ++j) {
      CHECK(p.beta(i, j) == p.beta(j, i));
      if (i < j && p.beta(i, j) > 0.0) { ++nonzero; }
    }
  }
  CHECK(nonzero == 5);
  CHECK(p.beta(0, 1) == 0.0);
  CHECK(p.beta(8, 1) == 48.40);

  double wsum = 0.0;
  for (double w : p.capacity_weights()) { wsum += w; }
  CHECK(wsum == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("aggregator model entries")
{
  const auto p = BuildingParameters::offenbach2021();
  const auto m = build_aggregator_model(p);
  REQUIRE(m.nx() == 3);
  REQUIRE(m.nu() == 5);
  REQUIRE(m.nd() == 5);
  CHECK(m.a.row(agg::E).isZero(0.0));

  const double cb = 1784.856, cs = 7.2, bbs = 79.8;
  CHECK(m.a(agg::ThetaS, agg::ThetaB) == doctest::Approx(79.8 / 7.2).epsilon(1e-12));
  CHECK(m.a(agg::ThetaS, agg::ThetaB) == doctest::Approx(11.0833).epsilon(1e-5));
  CHECK(m.a(agg::ThetaB, agg::ThetaB) == doctest::Approx(-(34.12 + bbs) / cb).epsilon(1e-12));
  CHECK(m.a(agg::ThetaS, agg::ThetaS) == doctest::Approx(-(0.07 + bbs) / cs).epsilon(1e-12));
  CHECK(m.b(agg::ThetaB, agg::Pchp) == doctest::Approx(1.0 / (0.55 * cb)).epsilon(1e-12));
  CHECK(m.b(agg::E, agg::QcoolB) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(m.b(agg::E, agg::QcoolS) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(m.b(agg::ThetaS, agg::QcoolS) == doctest::Approx(1.0 / cs).epsilon(1e-12));
  CHECK(m.s(agg::E, agg::Pren) == 1.0);
  CHECK(m.s(agg::E, agg::Pdem) == 1.0);

  // Uniform temperature equal to ambient is an equilibrium of the thermal rows.
  for (int r : {agg::ThetaB, agg::ThetaS}) {
    CHECK(m.a(r, agg::ThetaB) + m.a(r, agg::ThetaS) + m.s(r, agg::ThetaAir) == doctest::Approx(0.0).epsilon(1e-14));
  }
}

TEST_CASE("distributor model entries")
{
  const auto p = BuildingParameters::offenbach2021();
  const auto m = build_distributor_model(p);
  REQUIRE(m.nx() == 9);
  REQUIRE(m.nu() == 18);
  REQUIRE(m.nd() == 10);
  CHECK(m.a(0, 0) == doctest::Approx(-3.69 / 230.88).epsilon(1e-12));
  CHECK(m.a(0, 0) == doctest::Approx(-0.015982).epsilon(1e-4));
  CHECK(m.a(3, 2) == doctest::Approx(345.60 / 103.68).epsilon(1e-12));
  CHECK(m.a(3, 2) == doctest::Approx(3.3333).epsilon(1e-4));
  for (int i = 0; i < kZones; ++i) {
    CHECK(m.a.row(i).sum() + m.s(i, dis::theta_air) == doctest::Approx(0.0).scale(1.0).epsilon(1e-13));
    CHECK(m.b(i, dis::qheat(i)) == doctest::Approx(1.0 / p.cth[i]));
    CHECK(m.b(i, dis::qcool(i)) == doctest::Approx(1.0 / p.cth[i]));
    CHECK(m.s(i, dis::qother(i)) == doctest::Approx(1.0 / p.cth[i]));
    CHECK(m.s(i, dis::theta_air) == doctest::Approx(p.hair[i] / p.cth[i]));
  }
}

TEST_CASE("invalid parameters are rejected")
{
  auto p = BuildingParameters::offenbach2021();
  p.cth[3] = 0.0;
  CHECK_THROWS_AS(build_aggregator_model(p), std::invalid_argument);
  CHECK_THROWS_AS(build_distributor_model(p), std::invalid_argument);

  p = BuildingParameters::offenbach2021();
  p.c_chp = std::nan("");
  CHECK_THROWS_AS(build_aggregator_model(p), std::invalid_argument);

  p = BuildingParameters::offenbach2021();
  p.eps_c = 0.0;
  CHECK_THROWS_AS(build_aggregator_model(p), std::invalid_argument);

  p = BuildingParameters::offenbach2021();
  p.couplings.push_back({3, 2, 1.0});
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);

  p = BuildingParameters::offenbach2021();
  p.hair[0] = -1.0;
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
}

TEST_CASE("discretize scalar cases")
{
  ContinuousStateSpace integrator;
  integrator.a = Eigen::MatrixXd::Zero(1, 1);
  integrator.b = Eigen::MatrixXd::Ones(1, 1);
  integrator.s = Eigen::MatrixXd::Zero(1, 0);
  const auto d = discretize(integrator, 0.5);
  CHECK(d.ad()(0, 0) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(d.bd()(0, 0) == doctest::Approx(0.5).epsilon(1e-15));

  ContinuousStateSpace decay;
  decay.a = Eigen::MatrixXd::Constant(1, 1, -2.0);
  decay.b = Eigen::MatrixXd::Zero(1, 0);
  decay.s = Eigen::MatrixXd::Zero(1, 0);
  CHECK(discretize(decay, 0.5).ad()(0, 0) == doctest::Approx(std::exp(-1.0)).epsilon(1e-14));
  CHECK(discretize(decay, 0.5).ad()(0, 0) == doctest::Approx(0.367879).epsilon(1e-6));

  CHECK_THROWS_AS(discretize(decay, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(discretize(decay, -1.0), std::invalid_argument);
}

TEST_CASE("discretization matches the series oracle")
{
  const auto p = BuildingParameters::offenbach2021();
  for (const auto & model : {build_aggregator_model(p), build_distributor_model(p)}) {
    for (double ts : {0.1, 0.5, 1.0}) {
      const auto d = discretize(model, ts);
      const auto ref = oracle::zoh_series(model.a, model.b, model.s, ts);
      CHECK(oracle::max_rel_diff(d.ad(), ref.ad) <= 1e-9);
      CHECK(oracle::max_rel_diff(d.bd(), ref.bd) <= 1e-9);
      CHECK(oracle::max_rel_diff(d.sd(), ref.sd) <= 1e-9);
    }
  }
  // Battery row is an exact integrator.
  const auto da = discretize(build_aggregator_model(p), 0.5);
  CHECK(da.ad().row(agg::E).isApprox(Eigen::RowVector3d(1, 0, 0), 1e-15));
}

TEST_CASE("discretization is permutation equivariant")
{
  const auto p = BuildingParameters::offenbach2021();
  const auto model = build_distributor_model(p);
  Eigen::PermutationMatrix<Eigen::Dynamic> perm(kZones);
  perm.indices() << 4, 8, 0, 2, 6, 1, 7, 3, 5;
  ContinuousStateSpace permuted = model;
  permuted.a = perm * model.a * perm.transpose();
  permuted.b = perm * model.b;
  permuted.s = perm * model.s;
  const auto d = discretize(model, 0.5);
  const auto dp = discretize(permuted, 0.5);
  CHECK(oracle::max_rel_diff(perm * d.ad() * perm.transpose(), dp.ad()) <= 1e-12);
  CHECK(oracle::max_rel_diff(perm * d.bd(), dp.bd()) <= 1e-12);
}

TEST_CASE("step structure")
{
  const auto p = BuildingParameters::offenbach2021();
  const auto da = discretize(build_aggregator_model(p), 0.5);

  SUBCASE("equilibrium is a fixed point")
  {
    const Eigen::Vector3d x(49.0, 0.0, 0.0);
    const Eigen::VectorXd next = step(da, x, Eigen::VectorXd::Zero(5), Eigen::VectorXd::Zero(5));
    CHECK((next - x).norm() <= 1e-12);

    const auto dd = discretize(build_distributor_model(p), 0.5);
    Eigen::VectorXd xz = Eigen::VectorXd::Constant(9, 18.5);
    Eigen::VectorXd d = Eigen::VectorXd::Zero(10);
    d[dis::theta_air] = 18.5;
    CHECK((step(dd, xz, Eigen::VectorXd::Zero(18), d) - xz).lpNorm<Eigen::Infinity>() <= 1e-12);
  }

  SUBCASE("battery balance")
  {
    Eigen::Vector3d x(40.0, 21.0, 19.0);
    Eigen::VectorXd u(5), d(5);
    u << 30.0, 150.0, 200.0, -90.0, -60.0;
    d << 120.0, -260.0, 5.0, -14.0, 60.0;
    const Eigen::VectorXd next = step(da, x, u, d);
    const double expected = 40.0 + 0.5 * (30.0 + 150.0 + 120.0 - 260.0 + (-90.0 - 60.0) / 3.0);
    CHECK(next[agg::E] == doctest::Approx(expected).epsilon(1e-13));

    // Thermal states are untouched by E.
    Eigen::Vector3d x2 = x;
    x2[agg::E] = 80.0;
    const Eigen::VectorXd next2 = step(da, x2, u, d);
    CHECK(next2[agg::ThetaB] == next[agg::ThetaB]);
    CHECK(next2[agg::ThetaS] == next[agg::ThetaS]);
  }

  SUBCASE("error term is additive")
  {
    Eigen::Vector3d x(40.0, 21.0, 19.0);
    Eigen::VectorXd u = Eigen::VectorXd::Zero(5), d = Eigen::VectorXd::Zero(5);
    Eigen::Vector3d eps(0.0, 0.01, -0.02);
    CHECK((step(da, x, u, d, eps) - step(da, x, u, d) - eps).norm() <= 1e-14);
  }

  SUBCASE("dimension mismatch")
  {
    CHECK_THROWS_AS(step(da, Eigen::VectorXd::Zero(2), Eigen::VectorXd::Zero(5), Eigen::VectorXd::Zero(5)),
                    std::invalid_argument);
    CHECK_THROWS_AS(step(da, Eigen::VectorXd::Zero(3), Eigen::VectorXd::Zero(4), Eigen::VectorXd::Zero(5)),
                    std::invalid_argument);
  }
}

TEST_CASE("zero-order hold agrees with explicit Euler to second order")
{
  const auto p = BuildingParameters::offenbach2021();
  const auto model = build_distributor_model(p);
  Eigen::VectorXd x(9), u = Eigen::VectorXd::Zero(18), d(10);
  x << 20, 21, 22, 23, 21.5, 22.5, 19, 18, 17;
  u[dis::qheat(0)] = 100.0;
  u[dis::qcool(8)] = -50.0;
  d << 5, -2, -2, -2, -2, -2, -2, -2, 20, 40;
  const Eigen::VectorXd f = model.a * x + model.b * u + model.s * d;

  double prev = 0.0;
  for (double ts : {0.005, 0.0025}) {
    const Eigen::VectorXd zoh = step(discretize(model, ts), x, u, d);
    const Eigen::VectorXd euler = x + ts * f;
    const double diff = (zoh - euler).lpNorm<Eigen::Infinity>();
    // Leading term is ts^2/2 * A f.
    const double bound = ts * ts * (model.a * f).lpNorm<Eigen::Infinity>();
    CHECK(diff <= bound);
    if (prev > 0.0) { CHECK(prev / diff == doctest::Approx(4.0).epsilon(0.05)); }
    prev = diff;
  }
}

TEST_CASE("aggregator equals capacity-weighted distributor under uniform loss ratios")
{
  // Parameter family where aggregation is exact: hair_i / cth_i identical and
  // server zones decoupled, so equal building zones stay equal.
  SplitMix64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    BuildingParameters p = BuildingParameters::offenbach2021();
    const double ratio = rng.uniform(0.005, 0.05);
    for (int i = 0; i < kZones; ++i) { p.hair[i] = ratio * p.cth[i]; }
    p.couplings = {{2, 3, 345.6}, {4, 5, 1100.48}};
    const double qob = rng.uniform(-20, 0);
    for (int i = 0; i < kBuildingZones; ++i) { p.q_other[i] = qob * p.cth[i] / p.cth_building(); }

    const auto da = discretize(build_aggregator_model(p), 0.5);
    const auto dd = discretize(build_distributor_model(p), 0.5);
    const double t0 = rng.uniform(15, 25);
    Eigen::VectorXd xa(3), xd = Eigen::VectorXd::Constant(9, t0);
    xa << 50.0, t0, t0;
    xd[7] = xd[8] = t0;
    for (int k = 0; k < 30; ++k) {
      const double qheat = rng.uniform(0, 1500), qcool = rng.uniform(-800, 0), tair = rng.uniform(-10, 30);
      Eigen::VectorXd ua = Eigen::VectorXd::Zero(5), da_in = Eigen::VectorXd::Zero(5);
      ua[agg::Qrad] = qheat;
      ua[agg::QcoolB] = qcool;
      da_in[agg::ThetaAir] = tair;
      da_in[agg::QotherB] = p.qother_building();
      da_in[agg::QotherS] = p.qother_server();
      Eigen::VectorXd ud = Eigen::VectorXd::Zero(18), dd_in = Eigen::VectorXd::Zero(10);
      for (int i = 0; i < kBuildingZones; ++i) {
        const double share = p.cth[i] / p.cth_building();
        ud[dis::qheat(i)] = share * qheat;
        ud[dis::qcool(i)] = share * qcool;
      }
      dd_in[dis::theta_air] = tair;
      for (int i = 0; i < kZones; ++i) { dd_in[dis::qother(i)] = p.q_other[i]; }
      xa = step(da, xa, ua, da_in);
      xd = step(dd, xd, ud, dd_in);
      const auto [tb, ts] = aggregate_temperatures(p, xd);
      CHECK(std::abs(tb - xa[agg::ThetaB]) <= 1e-6);
      CHECK(std::abs(ts - xa[agg::ThetaS]) <= 1e-6);
    }
  }
}

TEST_CASE("stored heat is conserved without losses")
{
  auto p = BuildingParameters::offenbach2021();
  p.hair.fill(0.0);
  p.q_other.fill(0.0);
  const auto dd = discretize(build_distributor_model(p), 0.5);
  Eigen::VectorXd x(9);
  x << 18, 19, 20, 21, 22, 23, 24, 25, 26;
  const auto energy = [&](const Eigen::VectorXd & v) {
    double s = 0.0;
    for (int i = 0; i < kZones; ++i) { s += p.cth[i] * v[i]; }
    return s;
  };
  const double e0 = energy(x);
  for (int k = 0; k < 200; ++k) {
    x = step(dd, x, Eigen::VectorXd::Zero(18), Eigen::VectorXd::Zero(10));
    CHECK(std::abs(energy(x) - e0) / e0 <= 1e-9);
  }
}
