#pragma once

#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

/// Smooth equality-constrained minimization with box bounds:
///
///   minimize f(x)  subject to  c(x) = 0,  lower <= x <= upper.
///
/// Primal-dual interior point: log barrier on the finite bounds, Newton steps
/// on the KKT system with inertia-correcting regularization, fraction-to-the-
/// boundary clipping and a backtracking l1-merit line search with a second-
/// order correction. Callbacks are only ever evaluated strictly inside the
/// finite bounds.
namespace dsse::nlp {

using Eigen::VectorXd;
using Triplet = Eigen::Triplet<double>;

struct NlpProblem {
  int n = 0;
  int m = 0;
  VectorXd lower;  // -inf allowed
  VectorXd upper;  // +inf allowed
  VectorXd x0;

  std::function<double(const VectorXd& x)> objective;
  std::function<void(const VectorXd& x, VectorXd& grad)> gradient;
  std::function<void(const VectorXd& x, VectorXd& c)> constraints;
  /// m x n constraint Jacobian. The triplet structure must not depend on x.
  std::function<void(const VectorXd& x, std::vector<Triplet>& jac)> jacobian;
  /// Lower triangle of obj_factor * H_f(x) + sum_i lambda_i H_ci(x). The
  /// triplet structure must not depend on x or lambda.
  std::function<void(const VectorXd& x, double obj_factor, const VectorXd& lambda, std::vector<Triplet>& hess)>
      hessian;
};

enum class Status { optimal, max_iter, infeasible_point, singular };

const char* to_string(Status s);

enum class HessianMode {
  exact,
  /// Drop constraint curvature and keep only the objective Hessian, which
  /// is the Gauss-Newton matrix for squared-residual objectives.
  gauss_newton,
};

struct SolveOptions {
  double tol_stat = 1e-6;
  double tol_feas = 1e-8;
  int max_iterations = 300;
  double mu_init = 1e-2;
  HessianMode hessian = HessianMode::exact;
  /// KKT systems up to this order use a dense Bunch-Kaufman factorization;
  /// larger ones an unpivoted sparse LDL^T.
  int dense_kkt_limit = 2500;
  bool verbose = false;
};

struct SolveReport {
  Status status = Status::max_iter;
  int iterations = 0;
  /// Dual infeasibility, scaled by the average multiplier magnitude once it
  /// exceeds 100 (the usual interior-point convention).
  double stationarity = 0.0;
  double constraint_violation = 0.0;
  double complementarity = 0.0;
  double wall_time_s = 0.0;
  std::string message;
};

struct SolveResult {
  VectorXd x;
  VectorXd lambda;  // constraint multipliers, L = f + lambda' c
  double objective = 0.0;
  SolveReport report;
};

SolveResult solve(const NlpProblem& problem, const SolveOptions& options = {});

}  // namespace dsse::nlp
