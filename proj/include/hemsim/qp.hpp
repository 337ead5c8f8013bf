#pragma once

/**
 * @file
 * @brief Convex quadratic program solver.
 *
 * Solves
 *
 *   minimize    1/2 z' P z + q' z
 *   subject to  l <= A z <= u
 *
 * with P positive semidefinite, using operator splitting (ADMM) on the
 * equality-constrained reformulation A z = w, l <= w <= u. Each iteration
 * solves one quasi-definite KKT system whose LDL' factorization is cached and
 * only refactored when the step size rho changes. The problem is Ruiz
 * equilibrated before iterating. An interior-point method on the same
 * equilibrated problem is available for problems where ADMM stalls.
 */

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace hemsim {

using SparseMatrix = Eigen::SparseMatrix<double, Eigen::ColMajor, int>;

struct QpProblem
{
  SparseMatrix p;  ///< full symmetric storage
  Eigen::VectorXd q;
  SparseMatrix a;
  Eigen::VectorXd l;
  Eigen::VectorXd u;
  std::vector<std::string> variable_names;

  /// Symmetrizes p as (p + p')/2 and validates dimensions and l <= u.
  static QpProblem create(SparseMatrix p, Eigen::VectorXd q, SparseMatrix a, Eigen::VectorXd l, Eigen::VectorXd u);
  static QpProblem create(
    const Eigen::MatrixXd & p,
    Eigen::VectorXd q,
    const Eigen::MatrixXd & a,
    Eigen::VectorXd l,
    Eigen::VectorXd u);

  Eigen::Index num_variables() const { return q.size(); }
  Eigen::Index num_constraints() const { return l.size(); }
  double objective(const Eigen::VectorXd & z) const;
};

enum class QpStatus { Solved, MaxIter, PrimalInfeasible, DualInfeasible };

enum class QpMethod
{
  /// Operator splitting; cheap iterations, warm-startable, slow on LP-like problems.
  Admm,
  /// Primal-dual interior point (Mehrotra predictor-corrector) on the same
  /// equilibrated problem; ignores warm starts, converges in tens of
  /// iterations regardless of conditioning.
  InteriorPoint,
};

const char * to_string(QpStatus status);

struct QpSettings
{
  QpMethod method = QpMethod::Admm;
  double eps_abs = 1e-6;
  double eps_rel = 1e-6;
  int max_iter = 20000;
  double rho = 0.1;
  double sigma = 1e-6;
  /// over-relaxation
  double alpha = 1.6;
  /// iterations between step-size updates; 0 disables
  int adaptive_rho_interval = 50;
  /// refactor only when rho moves by more than this factor
  double adaptive_rho_tolerance = 5.0;
  int scaling_iterations = 10;
  /// iterations between convergence checks
  int check_interval = 5;
  double eps_prim_inf = 1e-5;
  double eps_dual_inf = 1e-5;
  /// active-set refinement of a converged solution
  bool polish = true;
  double polish_delta = 1e-9;
  int polish_refine_iter = 5;
  /// corrections of the guessed active set before polishing gives up
  int polish_active_set_rounds = 10;
  /// interior point: Newton iterations before giving up
  int ipm_max_iter = 100;
  /// interior point: static regularization of the KKT diagonal
  double ipm_regularization = 1e-10;
};

struct WarmStart
{
  Eigen::VectorXd z;
  Eigen::VectorXd y;
};

struct QpSolution
{
  Eigen::VectorXd z;
  Eigen::VectorXd y;
  QpStatus status = QpStatus::MaxIter;
  int iterations = 0;
  double primal_residual = 0.0;
  double dual_residual = 0.0;
  double objective = 0.0;
  bool polished = false;
  int factorizations = 0;
};

/**
 * @brief Reusable solver workspace.
 *
 * Matrices P and A are fixed at construction; q, l and u may be updated
 * between solves without refactoring, which is what the receding-horizon
 * controllers rely on.
 */
class QpSolver
{
public:
  QpSolver(const QpProblem & problem, const QpSettings & settings = {});
  ~QpSolver();
  QpSolver(QpSolver &&) noexcept;
  QpSolver & operator=(QpSolver &&) noexcept;

  void update_linear_cost(const Eigen::VectorXd & q);
  void update_bounds(const Eigen::VectorXd & l, const Eigen::VectorXd & u);

  QpSolution solve(const std::optional<WarmStart> & warm_start = std::nullopt);

  const QpProblem & problem() const;
  const QpSettings & settings() const;

private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

QpSolution solve(
  const QpProblem & problem,
  const QpSettings & settings = {},
  const std::optional<WarmStart> & warm_start = std::nullopt);

struct KktReport
{
  double tol = 0.0;
  double stationarity = 0.0;          ///< ||P z + q + A' y||_inf
  double primal_infeasibility = 0.0;  ///< max bound violation of A z
  double complementarity = 0.0;       ///< max |y_i| * distance of (A z)_i to the matching bound
  double dual_sign_violation = 0.0;   ///< multiplier pushing against an infinite bound
  bool dual_sign_vacuous = false;     ///< every constraint is an equality
  bool stationarity_ok = false;
  bool primal_ok = false;
  bool complementarity_ok = false;
  bool dual_sign_ok = false;

  bool passed() const { return stationarity_ok && primal_ok && complementarity_ok && dual_sign_ok; }
};

KktReport check_kkt(const QpProblem & problem, const QpSolution & solution, double tol);

/// Text dump: dimensions, then P, q, A, l, u in row-major order.
void write_problem_text(const QpProblem & problem, std::ostream & os);

}  // namespace hemsim
