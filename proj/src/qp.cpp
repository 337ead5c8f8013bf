#include "hemsim/qp.hpp"

#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace hemsim {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kRhoMin = 1e-6;
constexpr double kRhoMax = 1e6;
constexpr double kRhoEqualityScale = 1e3;
constexpr double kMinScaling = 1e-4;
constexpr double kMaxScaling = 1e4;

enum class Kind { Free, Inequality, Equality };

double inf_norm(const Eigen::VectorXd & v) { return v.size() == 0 ? 0.0 : v.lpNorm<Eigen::Infinity>(); }

Kind classify(double l, double u)
{
  if (l == -kInf && u == kInf) { return Kind::Free; }
  if (u - l < 1e-12 * std::max(1.0, std::abs(l))) { return Kind::Equality; }
  return Kind::Inequality;
}

Eigen::VectorXd clamp(const Eigen::VectorXd & v, const Eigen::VectorXd & lo, const Eigen::VectorXd & hi)
{
  return v.cwiseMax(lo).cwiseMin(hi);
}

/// Column infinity norms of a column-major sparse matrix.
Eigen::VectorXd col_inf_norms(const SparseMatrix & m)
{
  Eigen::VectorXd r = Eigen::VectorXd::Zero(m.cols());
  for (int k = 0; k < m.outerSize(); ++k) {
    for (SparseMatrix::InnerIterator it(m, k); it; ++it) { r[k] = std::max(r[k], std::abs(it.value())); }
  }
  return r;
}

Eigen::VectorXd row_inf_norms(const SparseMatrix & m)
{
  Eigen::VectorXd r = Eigen::VectorXd::Zero(m.rows());
  for (int k = 0; k < m.outerSize(); ++k) {
    for (SparseMatrix::InnerIterator it(m, k); it; ++it) {
      r[it.row()] = std::max(r[it.row()], std::abs(it.value()));
    }
  }
  return r;
}

double limit_scaling(double v)
{
  if (v < kMinScaling) { return 1.0; }
  return std::min(v, kMaxScaling);
}

using Ldlt = Eigen::SimplicialLDLT<SparseMatrix, Eigen::Lower, Eigen::AMDOrdering<int>>;

/// Lower triangle of [P + sigma I, A'; A, -diag(reg)].
SparseMatrix assemble_kkt(const SparseMatrix & p, const SparseMatrix & a, double sigma, const Eigen::VectorXd & reg)
{
  const int n = static_cast<int>(p.rows());
  const int m = static_cast<int>(a.rows());
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(static_cast<std::size_t>(p.nonZeros() + a.nonZeros() + n + m));
  for (int k = 0; k < p.outerSize(); ++k) {
    for (SparseMatrix::InnerIterator it(p, k); it; ++it) {
      if (it.row() >= it.col()) { trip.emplace_back(it.row(), it.col(), it.value()); }
    }
  }
  for (int j = 0; j < n; ++j) { trip.emplace_back(j, j, sigma); }
  for (int k = 0; k < a.outerSize(); ++k) {
    for (SparseMatrix::InnerIterator it(a, k); it; ++it) { trip.emplace_back(n + it.row(), it.col(), it.value()); }
  }
  for (int i = 0; i < m; ++i) { trip.emplace_back(n + i, n + i, -reg[i]); }
  SparseMatrix kkt(n + m, n + m);
  kkt.setFromTriplets(trip.begin(), trip.end());
  kkt.makeCompressed();
  return kkt;
}

}  // namespace

const char * to_string(QpStatus status)
{
  switch (status) {
    case QpStatus::Solved: return "solved";
    case QpStatus::MaxIter: return "max_iter";
    case QpStatus::PrimalInfeasible: return "primal_infeasible";
    case QpStatus::DualInfeasible: return "dual_infeasible";
  }
  return "unknown";
}

QpProblem QpProblem::create(SparseMatrix p, Eigen::VectorXd q, SparseMatrix a, Eigen::VectorXd l, Eigen::VectorXd u)
{
  const auto n = q.size();
  const auto m = l.size();
  if (p.rows() != n || p.cols() != n) { throw std::invalid_argument("qp: P must be n x n"); }
  if (a.rows() != m || a.cols() != n) { throw std::invalid_argument("qp: A must be m x n"); }
  if (u.size() != m) { throw std::invalid_argument("qp: l and u must have the same length"); }
  for (Eigen::Index i = 0; i < m; ++i) {
    if (std::isnan(l[i]) || std::isnan(u[i]) || l[i] > u[i]) {
      throw std::invalid_argument("qp: bounds must satisfy l <= u (row " + std::to_string(i) + ")");
    }
  }
  if (!q.allFinite()) { throw std::invalid_argument("qp: q must be finite"); }

  QpProblem prob;
  SparseMatrix pt = p.transpose();
  prob.p = 0.5 * (p + pt);
  prob.p.prune(0.0);
  prob.p.makeCompressed();
  prob.q = std::move(q);
  prob.a = std::move(a);
  prob.a.makeCompressed();
  prob.l = std::move(l);
  prob.u = std::move(u);
  return prob;
}

QpProblem QpProblem::create(
  const Eigen::MatrixXd & p, Eigen::VectorXd q, const Eigen::MatrixXd & a, Eigen::VectorXd l, Eigen::VectorXd u)
{
  SparseMatrix ps = p.sparseView();
  SparseMatrix as = a.sparseView();
  return create(std::move(ps), std::move(q), std::move(as), std::move(l), std::move(u));
}

double QpProblem::objective(const Eigen::VectorXd & z) const { return 0.5 * z.dot(p * z) + q.dot(z); }

struct QpSolver::Impl
{
  QpProblem prob;
  QpSettings set;
  int n = 0;
  int m = 0;

  Eigen::VectorXd d, dinv, e, einv;
  double c = 1.0;
  double cinv = 1.0;

  SparseMatrix ps, as, ast;
  Eigen::VectorXd qs, ls, us;

  std::vector<Kind> kinds;
  double rho = 0.1;
  Eigen::VectorXd rho_vec, rho_inv;

  SparseMatrix kkt;
  Ldlt ldlt;
  int factorizations = 0;

  Impl(const QpProblem & problem, const QpSettings & settings) : prob(problem), set(settings)
  {
    n = static_cast<int>(prob.num_variables());
    m = static_cast<int>(prob.num_constraints());
    rho = std::clamp(set.rho, kRhoMin, kRhoMax);
    equilibrate();
    scale_vectors();
    classify_constraints();
    kkt = assemble_kkt(ps, as, set.sigma, rho_inv);
    ldlt.analyzePattern(kkt);
    factorize();
  }

  void equilibrate()
  {
    d = Eigen::VectorXd::Ones(n);
    e = Eigen::VectorXd::Ones(m);
    c = 1.0;
    ps = prob.p;
    as = prob.a;
    qs = prob.q;
    for (int it = 0; it < set.scaling_iterations; ++it) {
      Eigen::VectorXd dx = col_inf_norms(ps).cwiseMax(col_inf_norms(as));
      Eigen::VectorXd dz = row_inf_norms(as);
      for (int j = 0; j < n; ++j) { dx[j] = 1.0 / std::sqrt(limit_scaling(dx[j])); }
      for (int i = 0; i < m; ++i) { dz[i] = 1.0 / std::sqrt(limit_scaling(dz[i])); }
      ps = dx.asDiagonal() * ps * dx.asDiagonal();
      as = dz.asDiagonal() * as * dx.asDiagonal();
      qs = dx.cwiseProduct(qs);
      d = d.cwiseProduct(dx);
      e = e.cwiseProduct(dz);

      const Eigen::VectorXd pnorms = col_inf_norms(ps);
      const double mean_p = n > 0 ? pnorms.mean() : 0.0;
      const double gamma = 1.0 / limit_scaling(std::max(mean_p, inf_norm(qs)));
      ps *= gamma;
      qs *= gamma;
      c *= gamma;
    }
    dinv = d.cwiseInverse();
    einv = e.cwiseInverse();
    cinv = 1.0 / c;
    ps.makeCompressed();
    as.makeCompressed();
    ast = as.transpose();
  }

  void scale_vectors()
  {
    qs = c * d.cwiseProduct(prob.q);
    ls = e.cwiseProduct(prob.l);
    us = e.cwiseProduct(prob.u);
  }

  /// Returns true when the constraint classification changed.
  bool classify_constraints()
  {
    std::vector<Kind> next(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) { next[i] = classify(prob.l[i], prob.u[i]); }
    const bool changed = next != kinds;
    kinds = std::move(next);
    set_rho(rho);
    return changed;
  }

  void set_rho(double value)
  {
    rho = std::clamp(value, kRhoMin, kRhoMax);
    rho_vec.resize(m);
    for (int i = 0; i < m; ++i) {
      switch (kinds[i]) {
        case Kind::Free: rho_vec[i] = kRhoMin; break;
        case Kind::Equality: rho_vec[i] = kRhoEqualityScale * rho; break;
        case Kind::Inequality: rho_vec[i] = rho; break;
      }
    }
    rho_inv = rho_vec.cwiseInverse();
  }

  void factorize()
  {
    // Each constraint column of the lower-triangular KKT holds only its diagonal.
    for (int i = 0; i < m; ++i) {
      const int col = n + i;
      kkt.valuePtr()[kkt.outerIndexPtr()[col]] = -rho_inv[i];
    }
    ldlt.factorize(kkt);
    ++factorizations;
    if (ldlt.info() != Eigen::Success) { throw std::runtime_error("qp: KKT factorization failed"); }
  }

  struct Residuals
  {
    double prim = 0.0, dual = 0.0, eps_prim = 0.0, eps_dual = 0.0;
    double prim_scaled = 0.0, dual_scaled = 0.0;
    double ax_norm = 0.0, z_norm = 0.0, px_norm = 0.0, aty_norm = 0.0, q_norm = 0.0;
  };

  Residuals residuals(const Eigen::VectorXd & x, const Eigen::VectorXd & z, const Eigen::VectorXd & y) const
  {
    Residuals r;
    const Eigen::VectorXd ax = as * x;
    const Eigen::VectorXd px = ps * x;
    const Eigen::VectorXd aty = ast * y;
    r.prim = inf_norm(einv.cwiseProduct(ax - z));
    r.dual = cinv * inf_norm(dinv.cwiseProduct(px + qs + aty));
    r.eps_prim = set.eps_abs + set.eps_rel * std::max(inf_norm(einv.cwiseProduct(ax)), inf_norm(einv.cwiseProduct(z)));
    r.eps_dual = set.eps_abs + set.eps_rel * cinv *
                                 std::max({inf_norm(dinv.cwiseProduct(px)), inf_norm(dinv.cwiseProduct(aty)),
                                           inf_norm(dinv.cwiseProduct(qs))});
    r.prim_scaled = inf_norm(ax - z);
    r.dual_scaled = inf_norm(px + qs + aty);
    r.ax_norm = inf_norm(ax);
    r.z_norm = inf_norm(z);
    r.px_norm = inf_norm(px);
    r.aty_norm = inf_norm(aty);
    r.q_norm = inf_norm(qs);
    return r;
  }

  bool primal_infeasible(const Eigen::VectorXd & dy_scaled) const
  {
    const Eigen::VectorXd dy = e.cwiseProduct(dy_scaled);
    const double norm = inf_norm(dy);
    if (norm < 1e-12) { return false; }
    const double eps = set.eps_prim_inf * norm;
    if (inf_norm(dinv.cwiseProduct(ast * dy_scaled)) > eps) { return false; }
    double support = 0.0;
    for (int i = 0; i < m; ++i) {
      if (dy[i] > 0.0) {
        if (prob.u[i] == kInf) { return false; }
        support += prob.u[i] * dy[i];
      } else if (dy[i] < 0.0) {
        if (prob.l[i] == -kInf) { return false; }
        support += prob.l[i] * dy[i];
      }
    }
    return support < -eps;
  }

  bool dual_infeasible(const Eigen::VectorXd & dx_scaled) const
  {
    const Eigen::VectorXd dx = d.cwiseProduct(dx_scaled);
    const double norm = inf_norm(dx);
    if (norm < 1e-12) { return false; }
    const double eps = set.eps_dual_inf * norm;
    if (cinv * qs.dot(dx_scaled) >= -eps) { return false; }
    if (cinv * inf_norm(dinv.cwiseProduct(ps * dx_scaled)) > eps) { return false; }
    const Eigen::VectorXd adx = einv.cwiseProduct(as * dx_scaled);
    for (int i = 0; i < m; ++i) {
      if (prob.u[i] != kInf && adx[i] > eps) { return false; }
      if (prob.l[i] != -kInf && adx[i] < -eps) { return false; }
    }
    return true;
  }

  /// Solve the equality-constrained QP on the active set guessed from the
  /// ADMM iterate, then correct the guess: constraints whose multiplier has
  /// the wrong sign are released and violated ones are added, until the set
  /// is consistent. Works on scaled quantities; returns false if no
  /// consistent set improving on the ADMM residuals is found.
  bool polish(Eigen::VectorXd & x, Eigen::VectorXd & z, Eigen::VectorXd & y, const Residuals & admm) const
  {
    std::vector<int> side(static_cast<std::size_t>(m), 0);  // -1 lower, +1 upper, 0 inactive
    for (int i = 0; i < m; ++i) {
      if (kinds[i] == Kind::Equality || z[i] - ls[i] < -y[i]) {
        side[i] = -1;
      } else if (us[i] - z[i] < y[i]) {
        side[i] = +1;
      }
    }

    for (int round = 0; round < std::max(1, set.polish_active_set_rounds); ++round) {
      std::vector<int> rows;
      for (int i = 0; i < m; ++i) {
        if (side[i] != 0) { rows.push_back(i); }
      }
      const int k = static_cast<int>(rows.size());
      SparseMatrix ared(k, n);
      {
        std::vector<Eigen::Triplet<double>> at;
        for (int r = 0; r < k; ++r) {
          for (SparseMatrix::InnerIterator it(ast, rows[r]); it; ++it) { at.emplace_back(r, it.row(), it.value()); }
        }
        ared.setFromTriplets(at.begin(), at.end());
      }
      const Eigen::VectorXd reg = Eigen::VectorXd::Constant(k, set.polish_delta);
      const SparseMatrix kred = assemble_kkt(ps, ared, set.polish_delta, reg);
      const SparseMatrix k0 = assemble_kkt(ps, ared, 0.0, Eigen::VectorXd::Zero(k));
      const Ldlt solver(kred);
      if (solver.info() != Eigen::Success) { return false; }

      Eigen::VectorXd rhs(n + k);
      rhs.head(n) = -qs;
      for (int r = 0; r < k; ++r) { rhs[n + r] = side[rows[r]] < 0 ? ls[rows[r]] : us[rows[r]]; }
      Eigen::VectorXd sol = solver.solve(rhs);
      const SparseMatrix k0full = k0.selfadjointView<Eigen::Lower>();
      for (int it = 0; it < set.polish_refine_iter; ++it) {
        const Eigen::VectorXd res = rhs - k0full * sol;
        sol += solver.solve(res);
      }
      if (!sol.allFinite()) { return false; }

      Eigen::VectorXd xp = sol.head(n);
      Eigen::VectorXd yp = Eigen::VectorXd::Zero(m);
      bool changed = false;
      for (int r = 0; r < k; ++r) {
        const int i = rows[r];
        const double v = sol[n + r];
        yp[i] = v;
        if (kinds[i] == Kind::Equality) { continue; }
        const double tol = 1e-9 * std::max(1.0, std::abs(v));
        if ((side[i] < 0 && v > tol) || (side[i] > 0 && v < -tol)) {
          side[i] = 0;
          yp[i] = 0.0;
          changed = true;
        }
      }
      const Eigen::VectorXd ax = as * xp;
      if (!changed) {
        for (int i = 0; i < m; ++i) {
          if (side[i] != 0) { continue; }
          if (ax[i] < ls[i] - 1e-8 * (1.0 + std::abs(ls[i]))) {
            side[i] = -1;
            changed = true;
          } else if (ax[i] > us[i] + 1e-8 * (1.0 + std::abs(us[i]))) {
            side[i] = +1;
            changed = true;
          }
        }
      }
      if (changed) { continue; }

      Eigen::VectorXd zp = clamp(ax, ls, us);
      const Residuals pr = residuals(xp, zp, yp);
      const bool prim_ok = pr.prim <= std::max(admm.prim, admm.eps_prim);
      const bool dual_ok = pr.dual <= std::max(admm.dual, admm.eps_dual);
      if (!prim_ok || !dual_ok) { return false; }
      x = std::move(xp);
      z = std::move(zp);
      y = std::move(yp);
      return true;
    }
    return false;
  }

  QpSolution solve(const std::optional<WarmStart> & warm)
  {
    if (set.method == QpMethod::InteriorPoint) { return solve_interior_point(); }
    Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd z = Eigen::VectorXd::Zero(m);
    Eigen::VectorXd y = Eigen::VectorXd::Zero(m);
    if (warm) {
      if (warm->z.size() == n) { x = dinv.cwiseProduct(warm->z); }
      if (warm->y.size() == m) { y = c * einv.cwiseProduct(warm->y); }
      z = clamp(as * x, ls, us);
    }

    QpSolution sol;
    Eigen::VectorXd rhs(n + m), kkt_sol(n + m);
    Eigen::VectorXd x_prev, y_prev, z_tilde(m), z_relax(m);
    Residuals res;
    const int fact_before = factorizations;
    const int check = std::max(1, set.check_interval);
    const int adapt = set.adaptive_rho_interval;

    int iter = 0;
    for (iter = 1; iter <= set.max_iter; ++iter) {
      x_prev = x;
      y_prev = y;

      rhs.head(n) = set.sigma * x - qs;
      rhs.tail(m) = z - rho_inv.cwiseProduct(y);
      kkt_sol = ldlt.solve(rhs);
      const auto xt = kkt_sol.head(n);
      z_tilde = z + rho_inv.cwiseProduct(kkt_sol.tail(m) - y);

      x = set.alpha * xt + (1.0 - set.alpha) * x_prev;
      z_relax = set.alpha * z_tilde + (1.0 - set.alpha) * z;
      Eigen::VectorXd z_next = clamp(z_relax + rho_inv.cwiseProduct(y), ls, us);
      y += rho_vec.cwiseProduct(z_relax - z_next);
      z = std::move(z_next);

      const bool do_check = iter % check == 0 || iter == set.max_iter;
      const bool do_adapt = adapt > 0 && iter % adapt == 0;
      if (!do_check && !do_adapt) { continue; }

      res = residuals(x, z, y);
      if (do_check) {
        if (res.prim <= res.eps_prim && res.dual <= res.eps_dual) {
          sol.status = QpStatus::Solved;
          break;
        }
        if (m > 0 && primal_infeasible(y - y_prev)) {
          sol.status = QpStatus::PrimalInfeasible;
          break;
        }
        if (dual_infeasible(x - x_prev)) {
          sol.status = QpStatus::DualInfeasible;
          break;
        }
      }
      if (do_adapt && m > 0) {
        const double prim_n = res.prim_scaled / std::max({res.ax_norm, res.z_norm, 1e-30});
        const double dual_n = res.dual_scaled / std::max({res.px_norm, res.aty_norm, res.q_norm, 1e-30});
        double next = rho * std::sqrt(prim_n / std::max(dual_n, 1e-30));
        next = std::clamp(next, kRhoMin, kRhoMax);
        if (next > rho * set.adaptive_rho_tolerance || next < rho / set.adaptive_rho_tolerance) {
          set_rho(next);
          factorize();
        }
      }
    }
    sol.iterations = std::min(iter, set.max_iter);
    if (sol.status == QpStatus::MaxIter) { res = residuals(x, z, y); }

    if (sol.status == QpStatus::Solved && set.polish && m > 0) { sol.polished = polish(x, z, y, res); }
    if (sol.polished) { res = residuals(x, z, y); }

    if (sol.status == QpStatus::PrimalInfeasible) {
      sol.z = Eigen::VectorXd::Constant(n, std::numeric_limits<double>::quiet_NaN());
      sol.y = cinv * e.cwiseProduct(y - y_prev);
    } else if (sol.status == QpStatus::DualInfeasible) {
      sol.z = d.cwiseProduct(x - x_prev);
      sol.y = Eigen::VectorXd::Constant(m, std::numeric_limits<double>::quiet_NaN());
    } else {
      sol.z = d.cwiseProduct(x);
      sol.y = cinv * e.cwiseProduct(y);
      sol.objective = prob.objective(sol.z);
    }
    sol.primal_residual = res.prim;
    sol.dual_residual = res.dual;
    sol.factorizations = factorizations - fact_before;
    return sol;
  }

  // Interior point. Each row i of A z gets slacks s_l = a_i z - l_i and
  // s_u = u_i - a_i z with multipliers lam_l, lam_u >= 0 for its finite
  // bounds; y_i = lam_u - lam_l matches the ADMM sign convention. Eliminating
  // slacks and multipliers leaves the quasi-definite system
  //   [P + reg I, A'; A, -W] [dx; dy] = [-r_dual; rhs]
  // with W_i = 1 / (lam_l/s_l + lam_u/s_u) on inequality rows, which has the
  // same sparsity as the ADMM KKT matrix.
  SparseMatrix ipm_kkt;
  Ldlt ipm_ldlt;
  bool ipm_ready = false;

  /// Mehrotra-style starting point: a regularized least-squares solve that
  /// pulls each row towards its bounds, then slacks and multipliers shifted
  /// into the positive orthant and balanced.
  bool ipm_start(
    const std::vector<char> & lower,
    const std::vector<char> & upper,
    Eigen::VectorXd & x,
    Eigen::VectorXd & yeq,
    Eigen::VectorXd & sl,
    Eigen::VectorXd & su,
    Eigen::VectorXd & ll,
    Eigen::VectorXd & lu)
  {
    Eigen::VectorXd rhs(n + m);
    rhs.head(n) = -qs;
    for (int i = 0; i < m; ++i) {
      double w = 1.0;
      switch (kinds[i]) {
        case Kind::Equality: rhs[n + i] = ls[i]; w = set.ipm_regularization; break;
        case Kind::Free: rhs[n + i] = 0.0; w = 1e20; break;
        case Kind::Inequality:
          rhs[n + i] = lower[i] && upper[i] ? 0.5 * (ls[i] + us[i]) : (lower[i] ? ls[i] : us[i]);
          break;
      }
      ipm_kkt.valuePtr()[ipm_kkt.outerIndexPtr()[n + i]] = -w;
    }
    ipm_ldlt.factorize(ipm_kkt);
    ++factorizations;
    if (ipm_ldlt.info() != Eigen::Success) { return false; }
    const Eigen::VectorXd sol = ipm_ldlt.solve(rhs);
    x = sol.head(n);
    const Eigen::VectorXd r = as * x;
    double min_s = kInf, min_l = kInf;
    for (int i = 0; i < m; ++i) {
      const double y = sol[n + i];
      yeq[i] = kinds[i] == Kind::Equality ? y : 0.0;
      if (lower[i]) {
        sl[i] = r[i] - ls[i];
        ll[i] = std::max(-y, 0.0);
        min_s = std::min(min_s, sl[i]);
        min_l = std::min(min_l, ll[i]);
      }
      if (upper[i]) {
        su[i] = us[i] - r[i];
        lu[i] = std::max(y, 0.0);
        min_s = std::min(min_s, su[i]);
        min_l = std::min(min_l, lu[i]);
      }
    }
    if (min_s == kInf) { return true; }
    const double shift_s = std::max(-1.5 * min_s, 0.0) + 1e-2;
    const double shift_l = std::max(-1.5 * min_l, 0.0) + 1e-2;
    double dot = 0.0, sum_s = 0.0, sum_l = 0.0;
    for (int i = 0; i < m; ++i) {
      if (lower[i]) { sl[i] += shift_s; ll[i] += shift_l; }
      if (upper[i]) { su[i] += shift_s; lu[i] += shift_l; }
      dot += sl[i] * ll[i] + su[i] * lu[i];
      sum_s += sl[i] + su[i];
      sum_l += ll[i] + lu[i];
    }
    const double balance_s = 0.5 * dot / sum_l;
    const double balance_l = 0.5 * dot / sum_s;
    for (int i = 0; i < m; ++i) {
      if (lower[i]) { sl[i] += balance_s; ll[i] += balance_l; }
      if (upper[i]) { su[i] += balance_s; lu[i] += balance_l; }
    }
    return true;
  }

  QpSolution solve_interior_point()
  {
    const double reg = set.ipm_regularization;
    if (!ipm_ready) {
      ipm_kkt = assemble_kkt(ps, as, reg, Eigen::VectorXd::Ones(m));
      ipm_ldlt.analyzePattern(ipm_kkt);
      ipm_ready = true;
    }
    std::vector<char> lower(static_cast<std::size_t>(m)), upper(static_cast<std::size_t>(m));
    int ncomp = 0;
    for (int i = 0; i < m; ++i) {
      lower[i] = kinds[i] == Kind::Inequality && ls[i] > -kInf;
      upper[i] = kinds[i] == Kind::Inequality && us[i] < kInf;
      ncomp += lower[i] + upper[i];
    }

    Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd yeq = Eigen::VectorXd::Zero(m);
    Eigen::VectorXd sl = Eigen::VectorXd::Zero(m), su = Eigen::VectorXd::Zero(m);
    Eigen::VectorXd ll = Eigen::VectorXd::Zero(m), lu = Eigen::VectorXd::Zero(m);
    if (!ipm_start(lower, upper, x, yeq, sl, su, ll, lu)) {
      QpSolution failed;
      failed.z = Eigen::VectorXd::Zero(n);
      failed.y = Eigen::VectorXd::Zero(m);
      return failed;
    }

    Eigen::VectorXd r(m), y(m), rd(n), rpl(m), rpu(m), req(m), dd(m), rhs(n + m), step(n + m);
    Eigen::VectorXd dx(n), dyeq(m), dsl(m), dsu(m), dll(m), dlu(m);
    Eigen::VectorXd rcl(m), rcu(m), w_true(m);

    const auto multipliers = [&] {
      for (int i = 0; i < m; ++i) { y[i] = kinds[i] == Kind::Equality ? yeq[i] : lu[i] - ll[i]; }
    };
    double mu = 0.0;
    const auto newton = [&] {
      rhs.head(n) = -rd;
      for (int i = 0; i < m; ++i) {
        if (kinds[i] == Kind::Equality) {
          rhs[n + i] = -req[i];
        } else if (dd[i] > 0.0) {
          double c_i = 0.0;
          if (upper[i]) { c_i += (-rcu[i] + lu[i] * rpu[i]) / su[i]; }
          if (lower[i]) { c_i += (rcl[i] + ll[i] * rpl[i]) / sl[i]; }
          rhs[n + i] = -c_i / dd[i];
        } else {
          rhs[n + i] = 0.0;
        }
      }
      step = ipm_ldlt.solve(rhs);
      // Close to convergence the barrier terms make the system ill-conditioned;
      // refine against the unregularized matrix there.
      for (int refine = 0; refine < 3 && cinv * mu <= set.eps_abs; ++refine) {
        Eigen::VectorXd resid(n + m);
        resid.head(n) = rhs.head(n) - ps * step.head(n) - ast * step.tail(m);
        if (inf_norm(resid.head(n)) <= 1e-14 * (1.0 + inf_norm(rhs.head(n)))) { break; }
        resid.tail(m) = rhs.tail(m) - as * step.head(n) + w_true.cwiseProduct(step.tail(m));
        step += ipm_ldlt.solve(resid);
      }
      dx = step.head(n);
      const Eigen::VectorXd t = as * dx;
      for (int i = 0; i < m; ++i) {
        dyeq[i] = kinds[i] == Kind::Equality ? step[n + i] : 0.0;
        dsl[i] = dll[i] = dsu[i] = dlu[i] = 0.0;
        if (lower[i]) {
          dsl[i] = t[i] + rpl[i];
          dll[i] = (-rcl[i] - ll[i] * dsl[i]) / sl[i];
        }
        if (upper[i]) {
          dsu[i] = -t[i] - rpu[i];
          dlu[i] = (-rcu[i] - lu[i] * dsu[i]) / su[i];
        }
      }
    };
    const auto max_step = [&] {
      double alpha = 1.0;
      for (int i = 0; i < m; ++i) {
        if (lower[i]) {
          if (dsl[i] < 0.0) { alpha = std::min(alpha, -sl[i] / dsl[i]); }
          if (dll[i] < 0.0) { alpha = std::min(alpha, -ll[i] / dll[i]); }
        }
        if (upper[i]) {
          if (dsu[i] < 0.0) { alpha = std::min(alpha, -su[i] / dsu[i]); }
          if (dlu[i] < 0.0) { alpha = std::min(alpha, -lu[i] / dlu[i]); }
        }
      }
      return alpha;
    };

    QpSolution sol;
    Residuals res;
    const int fact_before = factorizations;
    int iter = 0;
    for (iter = 1; iter <= set.ipm_max_iter; ++iter) {
      r = as * x;
      multipliers();
      rd = ps * x + qs + ast * y;
      double comp = 0.0;
      for (int i = 0; i < m; ++i) {
        rpl[i] = lower[i] ? r[i] - sl[i] - ls[i] : 0.0;
        rpu[i] = upper[i] ? r[i] + su[i] - us[i] : 0.0;
        req[i] = kinds[i] == Kind::Equality ? r[i] - ls[i] : 0.0;
        comp += sl[i] * ll[i] + su[i] * lu[i];
      }
      mu = ncomp > 0 ? comp / ncomp : 0.0;

      res = residuals(x, clamp(r, ls, us), y);
      const double gap = cinv * comp;
      const double objective = cinv * (0.5 * x.dot(ps * x) + qs.dot(x));
      if (res.prim <= res.eps_prim && res.dual <= res.eps_dual &&
          gap <= set.eps_abs + set.eps_rel * std::abs(objective)) {
        sol.status = QpStatus::Solved;
        break;
      }
      if (iter == set.ipm_max_iter) { break; }

      for (int i = 0; i < m; ++i) {
        dd[i] = 0.0;
        w_true[i] = 0.0;
        if (kinds[i] == Kind::Inequality) {
          dd[i] = (lower[i] ? ll[i] / sl[i] : 0.0) + (upper[i] ? lu[i] / su[i] : 0.0);
          w_true[i] = dd[i] > 0.0 ? 1.0 / dd[i] : 1e20;
        } else if (kinds[i] == Kind::Free) {
          w_true[i] = 1e20;
        }
        ipm_kkt.valuePtr()[ipm_kkt.outerIndexPtr()[n + i]] = -(w_true[i] + reg);
      }
      ipm_ldlt.factorize(ipm_kkt);
      ++factorizations;
      if (ipm_ldlt.info() != Eigen::Success) { break; }

      // Predictor.
      rcl = sl.cwiseProduct(ll);
      rcu = su.cwiseProduct(lu);
      newton();
      const double alpha_aff = max_step();
      double comp_aff = 0.0;
      for (int i = 0; i < m; ++i) {
        if (lower[i]) { comp_aff += (sl[i] + alpha_aff * dsl[i]) * (ll[i] + alpha_aff * dll[i]); }
        if (upper[i]) { comp_aff += (su[i] + alpha_aff * dsu[i]) * (lu[i] + alpha_aff * dlu[i]); }
      }
      const double sigma = ncomp > 0 && mu > 0.0 ? std::pow(comp_aff / ncomp / mu, 3) : 0.0;

      // Corrector.
      rcl = sl.cwiseProduct(ll) + dsl.cwiseProduct(dll) - Eigen::VectorXd::Constant(m, sigma * mu);
      rcu = su.cwiseProduct(lu) + dsu.cwiseProduct(dlu) - Eigen::VectorXd::Constant(m, sigma * mu);
      newton();
      const double alpha = std::min(1.0, 0.99 * max_step());

      x += alpha * dx;
      yeq += alpha * dyeq;
      for (int i = 0; i < m; ++i) {
        if (lower[i]) { sl[i] += alpha * dsl[i]; ll[i] += alpha * dll[i]; }
        if (upper[i]) { su[i] += alpha * dsu[i]; lu[i] += alpha * dlu[i]; }
      }
    }
    sol.iterations = std::min(iter, set.ipm_max_iter);
    sol.z = d.cwiseProduct(x);
    sol.y = cinv * e.cwiseProduct(y);
    sol.objective = prob.objective(sol.z);
    sol.primal_residual = res.prim;
    sol.dual_residual = res.dual;
    sol.factorizations = factorizations - fact_before;
    return sol;
  }
};

QpSolver::QpSolver(const QpProblem & problem, const QpSettings & settings)
    : impl_(std::make_unique<Impl>(problem, settings))
{}

QpSolver::~QpSolver() = default;
QpSolver::QpSolver(QpSolver &&) noexcept = default;
QpSolver & QpSolver::operator=(QpSolver &&) noexcept = default;

void QpSolver::update_linear_cost(const Eigen::VectorXd & q)
{
  if (q.size() != impl_->n || !q.allFinite()) { throw std::invalid_argument("qp: bad linear cost update"); }
  impl_->prob.q = q;
  impl_->qs = impl_->c * impl_->d.cwiseProduct(q);
}

void QpSolver::update_bounds(const Eigen::VectorXd & l, const Eigen::VectorXd & u)
{
  auto & im = *impl_;
  if (l.size() != im.m || u.size() != im.m) { throw std::invalid_argument("qp: bad bound update"); }
  for (int i = 0; i < im.m; ++i) {
    if (std::isnan(l[i]) || std::isnan(u[i]) || l[i] > u[i]) {
      throw std::invalid_argument("qp: bounds must satisfy l <= u (row " + std::to_string(i) + ")");
    }
  }
  im.prob.l = l;
  im.prob.u = u;
  im.ls = im.e.cwiseProduct(l);
  im.us = im.e.cwiseProduct(u);
  if (im.classify_constraints()) { im.factorize(); }
}

QpSolution QpSolver::solve(const std::optional<WarmStart> & warm_start) { return impl_->solve(warm_start); }

const QpProblem & QpSolver::problem() const { return impl_->prob; }
const QpSettings & QpSolver::settings() const { return impl_->set; }

QpSolution solve(const QpProblem & problem, const QpSettings & settings, const std::optional<WarmStart> & warm_start)
{
  QpSolver solver(problem, settings);
  return solver.solve(warm_start);
}

KktReport check_kkt(const QpProblem & problem, const QpSolution & solution, double tol)
{
  KktReport r;
  r.tol = tol;
  const Eigen::VectorXd & z = solution.z;
  const Eigen::VectorXd & y = solution.y;
  const Eigen::VectorXd az = problem.a * z;
  r.stationarity = inf_norm(problem.p * z + problem.q + problem.a.transpose() * y);

  bool all_equality = problem.num_constraints() > 0;
  for (Eigen::Index i = 0; i < problem.num_constraints(); ++i) {
    const double l = problem.l[i], u = problem.u[i];
    r.primal_infeasibility = std::max({r.primal_infeasibility, l - az[i], az[i] - u});
    const bool equality = classify(l, u) == Kind::Equality;
    all_equality = all_equality && equality;
    if (equality) { continue; }
    if (y[i] > 0.0) {
      if (u == kInf) {
        r.dual_sign_violation = std::max(r.dual_sign_violation, y[i]);
      } else {
        r.complementarity = std::max(r.complementarity, y[i] * std::abs(u - az[i]));
      }
    } else if (y[i] < 0.0) {
      if (l == -kInf) {
        r.dual_sign_violation = std::max(r.dual_sign_violation, -y[i]);
      } else {
        r.complementarity = std::max(r.complementarity, -y[i] * std::abs(az[i] - l));
      }
    }
  }
  r.dual_sign_vacuous = all_equality;
  r.stationarity_ok = r.stationarity <= tol;
  r.primal_ok = r.primal_infeasibility <= tol;
  r.complementarity_ok = r.complementarity <= tol;
  r.dual_sign_ok = r.dual_sign_vacuous || r.dual_sign_violation <= tol;
  return r;
}

void write_problem_text(const QpProblem & problem, std::ostream & os)
{
  const Eigen::MatrixXd p = problem.p;
  const Eigen::MatrixXd a = problem.a;
  const auto write_vec = [&](const char * name, const Eigen::VectorXd & v) {
    os << name << '\n';
    for (Eigen::Index i = 0; i < v.size(); ++i) { os << (i ? " " : "") << v[i]; }
    os << '\n';
  };
  const auto write_mat = [&](const char * name, const Eigen::MatrixXd & mat) {
    os << name << '\n';
    for (Eigen::Index i = 0; i < mat.rows(); ++i) {
      for (Eigen::Index j = 0; j < mat.cols(); ++j) { os << (j ? " " : "") << mat(i, j); }
      os << '\n';
    }
  };
  os.precision(17);
  os << "n " << problem.num_variables() << " m " << problem.num_constraints() << '\n';
  write_mat("P", p);
  write_vec("q", problem.q);
  write_mat("A", a);
  write_vec("l", problem.l);
  write_vec("u", problem.u);
}

}  // namespace hemsim
