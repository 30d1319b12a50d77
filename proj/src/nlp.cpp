#include "dsse/nlp.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>

#include <Eigen/Dense>
#include <Eigen/SparseCholesky>

extern "C" {
void dsytrf_(const char* uplo, const int* n, double* a, const int* lda, int* ipiv, double* work, const int* lwork,
             int* info);
void dsytrs_(const char* uplo, const int* n, const int* nrhs, const double* a, const int* lda, const int* ipiv,
             double* b, const int* ldb, int* info);
}

namespace dsse::nlp {

const char* to_string(Status s) {
  switch (s) {
    case Status::optimal: return "optimal";
    case Status::max_iter: return "max_iter";
    case Status::infeasible_point: return "infeasible_point";
    case Status::singular: return "singular";
  }
  return "unknown";
}

namespace {

using SparseMatrix = Eigen::SparseMatrix<double>;
constexpr double kInf = std::numeric_limits<double>::infinity();

// Interior-point constants.
constexpr double kBoundPush = 1e-2;
constexpr double kBoundFrac = 1e-2;
constexpr double kKappaEps = 10.0;
constexpr double kKappaMu = 0.2;
constexpr double kThetaMu = 1.5;
constexpr double kKappaSigma = 1e10;
constexpr double kSMax = 100.0;
constexpr double kScaleMaxGradient = 100.0;
constexpr double kRoundingAllowance = 10.0 * std::numeric_limits<double>::epsilon();
constexpr double kArmijo = 1e-4;
constexpr double kMinStep = 1e-14;
constexpr double kTinyStep = 10.0 * std::numeric_limits<double>::epsilon();
constexpr double kPivotShift = 1e-12;
constexpr double kDeltaW0 = 1e-4;
constexpr double kShortStep = 1e-2;
constexpr double kDeltaWMin = 1e-20;
constexpr double kDeltaWMax = 1e40;

/// Symmetric indefinite factorization of the KKT matrix with inertia
/// detection. The matrix is equilibrated (Ruiz) first; the congruence keeps
/// the inertia. Up to a size limit a dense Bunch-Kaufman factorization
/// is used, whose pivoting keeps the inertia reliable for badly scaled
/// systems. Larger systems go through an unpivoted sparse LDL^T.
class KktSolver {
 public:
  /// k holds the lower triangle; the last rows from n_primal on belong to
  /// the constraints.
  explicit KktSolver(int dense_limit) : dense_limit_(dense_limit) {}

  bool factorize(const SparseMatrix& k, int n_primal) {
    equilibrate(k);
    shifted_ = false;
    if (scaled_.rows() <= dense_limit_) return factorize_dense();
    return factorize_sparse(n_primal);
  }

  /// True when a pivot shift was applied; solve() then returns the solution
  /// of a slightly perturbed system and the caller should refine.
  bool shifted() const { return shifted_; }

  /// Counts of positive, negative and (numerically) zero pivots.
  void inertia(int& pos, int& neg, int& zero) const {
    pos = pos_;
    neg = neg_;
    zero = zero_;
  }

  VectorXd solve(const VectorXd& rhs) const {
    VectorXd b = d_.cwiseProduct(rhs);
    if (dense_) {
      const int n = static_cast<int>(b.size()), nrhs = 1;
      int info = 0;
      dsytrs_("L", &n, &nrhs, lu_.data(), &n, ipiv_.data(), b.data(), &n, &info);
    } else {
      b = ldlt_.solve(b);
    }
    return d_.cwiseProduct(b);
  }

 private:
  static constexpr double kZeroPivot = 1e-13;

  bool factorize_dense() {
    dense_ = true;
    const int n = static_cast<int>(scaled_.rows());
    lu_ = Eigen::MatrixXd::Zero(n, n);
    for (int j = 0; j < scaled_.outerSize(); ++j)
      for (SparseMatrix::InnerIterator it(scaled_, j); it; ++it) lu_(it.row(), it.col()) += it.value();
    ipiv_.resize(n);
    int info = 0, lwork = -1;
    double query = 0.0;
    dsytrf_("L", &n, lu_.data(), &n, ipiv_.data(), &query, &lwork, &info);
    lwork = std::max(1, static_cast<int>(query));
    work_.resize(lwork);
    dsytrf_("L", &n, lu_.data(), &n, ipiv_.data(), work_.data(), &lwork, &info);
    if (info < 0) return false;
    pos_ = neg_ = zero_ = 0;
    const double scale = std::max(1.0, lu_.diagonal().cwiseAbs().maxCoeff());
    auto count = [&](double d) {
      if (!std::isfinite(d) || std::abs(d) <= kZeroPivot * scale) ++zero_;
      else if (d > 0) ++pos_;
      else ++neg_;
    };
    for (int i = 0; i < n; ++i) {
      if (ipiv_[i] > 0 || i + 1 == n) {
        count(lu_(i, i));
        continue;
      }
      // 2x2 block: eigenvalue signs from determinant and trace
      const double a = lu_(i, i), b = lu_(i + 1, i), c = lu_(i + 1, i + 1);
      const double det = a * c - b * b, tr = a + c;
      if (!std::isfinite(det) || std::abs(det) <= kZeroPivot * scale * scale) {
        ++zero_;
        count(tr);
      } else if (det < 0) {
        ++pos_;
        ++neg_;
      } else {
        count(tr);
        count(tr);
      }
      ++i;
    }
    return info == 0;
  }

  /// Without pivoting an exact zero pivot can appear for a nonsingular
  /// matrix. The constraint diagonal is then shifted by kPivotShift.
  bool factorize_sparse(int n_primal) {
    dense_ = false;
    if (!same_pattern(scaled_)) {
      ldlt_.analyzePattern(scaled_);
      outer_.assign(scaled_.outerIndexPtr(), scaled_.outerIndexPtr() + scaled_.outerSize() + 1);
      inner_.assign(scaled_.innerIndexPtr(), scaled_.innerIndexPtr() + scaled_.nonZeros());
    }
    ldlt_.factorize(scaled_);
    if (ldlt_.info() == Eigen::Success && sparse_inertia() == 0) return true;
    if (n_primal >= scaled_.rows()) return ldlt_.info() == Eigen::Success;
    for (int j = n_primal; j < scaled_.outerSize(); ++j)
      for (SparseMatrix::InnerIterator it(scaled_, j); it; ++it)
        if (it.row() == j) it.valueRef() -= kPivotShift;
    ldlt_.factorize(scaled_);
    shifted_ = true;
    if (ldlt_.info() != Eigen::Success) return false;
    sparse_inertia();
    return true;
  }

  int sparse_inertia() {
    pos_ = neg_ = zero_ = 0;
    const auto& d = ldlt_.vectorD();
    const double scale = std::max(1.0, d.cwiseAbs().maxCoeff());
    for (Eigen::Index i = 0; i < d.size(); ++i) {
      if (std::abs(d[i]) <= 1e-300 * scale || !std::isfinite(d[i])) ++zero_;
      else if (d[i] > 0) ++pos_;
      else ++neg_;
    }
    return zero_;
  }

  bool same_pattern(const SparseMatrix& k) const {
    if (outer_.size() != static_cast<std::size_t>(k.outerSize() + 1) ||
        inner_.size() != static_cast<std::size_t>(k.nonZeros()))
      return false;
    return std::equal(outer_.begin(), outer_.end(), k.outerIndexPtr()) &&
           std::equal(inner_.begin(), inner_.end(), k.innerIndexPtr());
  }

  void equilibrate(const SparseMatrix& k) {
    scaled_ = k;
    d_ = VectorXd::Ones(k.rows());
    VectorXd amax(k.rows());
    for (int pass = 0; pass < 10; ++pass) {
      amax.setZero();
      for (int j = 0; j < scaled_.outerSize(); ++j)
        for (SparseMatrix::InnerIterator it(scaled_, j); it; ++it) {
          const double a = std::abs(it.value());
          amax[it.row()] = std::max(amax[it.row()], a);
          amax[it.col()] = std::max(amax[it.col()], a);
        }
      double worst = 0.0;
      for (Eigen::Index i = 0; i < amax.size(); ++i) {
        amax[i] = amax[i] > 0.0 && std::isfinite(amax[i]) ? 1.0 / std::sqrt(amax[i]) : 1.0;
        worst = std::max(worst, std::abs(1.0 - amax[i]));
      }
      if (worst < 1e-2) break;
      for (int j = 0; j < scaled_.outerSize(); ++j)
        for (SparseMatrix::InnerIterator it(scaled_, j); it; ++it) it.valueRef() *= amax[it.row()] * amax[it.col()];
      d_ = d_.cwiseProduct(amax);
    }
  }

  int dense_limit_;
  SparseMatrix scaled_;
  VectorXd d_;
  bool shifted_ = false;
  bool dense_ = false;
  int pos_ = 0, neg_ = 0, zero_ = 0;
  Eigen::MatrixXd lu_;
  std::vector<int> ipiv_;
  std::vector<double> work_;
  Eigen::SimplicialLDLT<SparseMatrix, Eigen::Lower> ldlt_;
  std::vector<int> outer_, inner_;
};

class InteriorPoint {
 public:
  InteriorPoint(const NlpProblem& p, const SolveOptions& o)
      : p_(p), opt_(o), n_(p.n), m_(p.m), kkt_solver_(o.dense_kkt_limit) {}

  SolveResult run();

 private:
  bool strictly_inside(const VectorXd& x) const {
    for (int i = 0; i < n_; ++i) {
      if (!(x[i] > p_.lower[i]) && has_l_[i]) return false;
      if (!(x[i] < p_.upper[i]) && has_u_[i]) return false;
    }
    return true;
  }

  double barrier(const VectorXd& x) const {
    double b = 0.0;
    for (int i = 0; i < n_; ++i) {
      if (has_l_[i]) b -= std::log(x[i] - p_.lower[i]);
      if (has_u_[i]) b -= std::log(p_.upper[i] - x[i]);
    }
    return mu_ * b;
  }

  void evaluate_derivatives() {
    p_.gradient(x_, grad_);
    grad_ *= obj_scale_;
    jac_trip_.clear();
    p_.jacobian(x_, jac_trip_);
    jac_.resize(m_, n_);
    jac_.setFromTriplets(jac_trip_.begin(), jac_trip_.end());
  }

  struct Errors {
    double stat, feas, comp, comp_mu;
  };
  Errors errors() const;

  bool build_and_factorize(const VectorXd& sigma);
  void assemble(const VectorXd& sigma, double dw, double dc);

  const NlpProblem& p_;
  SolveOptions opt_;
  int n_, m_;
  std::vector<char> has_l_, has_u_;
  int n_bounds_ = 0;

  VectorXd x_, lambda_, zl_, zu_;
  double f_ = 0.0;
  VectorXd grad_, c_;
  std::vector<Triplet> jac_trip_, hess_trip_, kkt_trip_;
  SparseMatrix jac_, kkt_;
  KktSolver kkt_solver_;
  double mu_ = 1e-2;
  double nu_ = 1.0;
  double dw_last_ = 0.0;
  // Primal regularization kept after repeated short steps, which shortens
  // and damps the Newton step much like a trust region.
  double dw_floor_ = 0.0;
  int short_steps_ = 0;
  double dw_used_ = 0.0;
  double dc_used_ = 0.0;
  double obj_scale_ = 1.0;
  VectorXd hdiag_;  // rounding level of each dual component

  double obj(const VectorXd& x) const { return obj_scale_ * p_.objective(x); }

  /// Solves with the factorized matrix and removes the constraint
  /// regularization by iterative refinement.
  VectorXd solve_kkt(const VectorXd& rhs) const {
    VectorXd sol = kkt_solver_.solve(rhs);
    if (dc_used_ == 0.0 && !kkt_solver_.shifted()) return sol;
    for (int it = 0; it < 10; ++it) {
      VectorXd r = rhs - kkt_.selfadjointView<Eigen::Lower>() * sol;
      r.tail(m_) -= dc_used_ * sol.tail(m_);
      if (r.lpNorm<Eigen::Infinity>() <= 1e-14 * std::max(1.0, rhs.lpNorm<Eigen::Infinity>())) break;
      sol += kkt_solver_.solve(r);
    }
    return sol;
  }
};

InteriorPoint::Errors InteriorPoint::errors() const {
  VectorXd dual = grad_;
  if (m_ > 0) dual += jac_.transpose() * lambda_;
  double zsum = 0.0, comp = 0.0, comp_mu = 0.0;
  for (int i = 0; i < n_; ++i) {
    if (has_l_[i]) {
      dual[i] -= zl_[i];
      zsum += std::abs(zl_[i]);
      const double s = (x_[i] - p_.lower[i]) * zl_[i];
      comp = std::max(comp, std::abs(s));
      comp_mu = std::max(comp_mu, std::abs(s - mu_));
    }
    if (has_u_[i]) {
      dual[i] += zu_[i];
      zsum += std::abs(zu_[i]);
      const double s = (p_.upper[i] - x_[i]) * zu_[i];
      comp = std::max(comp, std::abs(s));
      comp_mu = std::max(comp_mu, std::abs(s - mu_));
    }
  }
  // Components below their rounding level count as resolved; with weights
  // near 1e12 an ulp in x already moves the gradient by ~1e-4.
  if (hdiag_.size() == n_)
    for (int i = 0; i < n_; ++i)
      dual[i] = std::max(0.0, std::abs(dual[i]) - kRoundingAllowance * hdiag_[i]);
  const double lsum = m_ > 0 ? lambda_.lpNorm<1>() : 0.0;
  const double sd = std::max(kSMax, (lsum + zsum) / std::max(1, m_ + n_bounds_)) / kSMax;
  const double sc = std::max(kSMax, zsum / std::max(1, n_bounds_)) / kSMax;
  const double feas = m_ > 0 ? c_.lpNorm<Eigen::Infinity>() : 0.0;
  return {dual.lpNorm<Eigen::Infinity>() / sd, feas, comp / sc, comp_mu / sc};
}

void InteriorPoint::assemble(const VectorXd& sigma, double dw, double dc) {
  kkt_trip_.clear();
  kkt_trip_.reserve(hess_trip_.size() + jac_trip_.size() + n_ + m_);
  kkt_trip_.insert(kkt_trip_.end(), hess_trip_.begin(), hess_trip_.end());
  for (int i = 0; i < n_; ++i) kkt_trip_.emplace_back(i, i, sigma[i] + dw);
  for (const auto& t : jac_trip_) kkt_trip_.emplace_back(n_ + t.row(), t.col(), t.value());
  for (int j = 0; j < m_; ++j) kkt_trip_.emplace_back(n_ + j, n_ + j, -dc);
  kkt_.resize(n_ + m_, n_ + m_);
  kkt_.setFromTriplets(kkt_trip_.begin(), kkt_trip_.end());
}

bool InteriorPoint::build_and_factorize(const VectorXd& sigma) {
  hess_trip_.clear();
  if (opt_.hessian == HessianMode::exact) {
    p_.hessian(x_, obj_scale_, lambda_, hess_trip_);
  } else {
    p_.hessian(x_, obj_scale_, VectorXd::Zero(m_), hess_trip_);
  }
  // Rounding level of each dual component: sensitivity to an ulp-sized move
  // of x plus the cancellation error of the sum itself.
  hdiag_ = grad_.cwiseAbs();
  for (const auto& t : hess_trip_) {
    const double h = std::abs(t.value());
    hdiag_[t.row()] += h * (1.0 + std::abs(x_[t.col()]));
    if (t.row() != t.col()) hdiag_[t.col()] += h * (1.0 + std::abs(x_[t.row()]));
  }
  if (m_ > 0)
    for (int k = 0; k < jac_.outerSize(); ++k)
      for (SparseMatrix::InnerIterator it(jac_, k); it; ++it) hdiag_[it.col()] += std::abs(it.value() * lambda_[it.row()]);
  double dw = dw_floor_, dc = 0.0;
  for (int attempt = 0; attempt < 200; ++attempt) {
    assemble(sigma, dw, dc);
    int pos = 0, neg = 0, zero = 0;
    const bool ok = kkt_solver_.factorize(kkt_, n_);
    if (ok) kkt_solver_.inertia(pos, neg, zero);
    if (ok && pos == n_ && neg == m_ && zero == 0) {
      dw_used_ = dw;
      dc_used_ = dc;
      if (dw > 0.0) dw_last_ = dw;
      return true;
    }
    if ((!ok || zero > 0) && dc == 0.0 && m_ > 0) {
      // a zero pivot usually means a rank-deficient Jacobian; try the
      // constraint regularization on its own first
      dc = 1e-8 * std::pow(std::max(mu_, 1e-12), 0.25);
      continue;
    }
    if (dw == 0.0) {
      dw = dw_last_ == 0.0 ? kDeltaW0 : std::max(kDeltaWMin, dw_last_ / 3.0);
    } else {
      dw *= dw_last_ == 0.0 ? 100.0 : 8.0;
    }
    if (dw > kDeltaWMax) return false;
  }
  return false;
}

SolveResult InteriorPoint::run() {
  const auto t0 = std::chrono::steady_clock::now();
  SolveResult out;
  auto finish = [&](Status st, std::string msg) {
    out.x = x_;
    out.lambda = lambda_ / obj_scale_;
    out.objective = f_ / obj_scale_;
    const auto e = errors();
    out.report.status = st;
    out.report.stationarity = e.stat;
    out.report.constraint_violation = e.feas;
    out.report.complementarity = e.comp;
    out.report.message = std::move(msg);
    out.report.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return out;
  };

  if (p_.lower.size() != n_ || p_.upper.size() != n_ || p_.x0.size() != n_)
    throw std::invalid_argument("nlp: bound or start vector has wrong size");

  has_l_.assign(n_, 0);
  has_u_.assign(n_, 0);
  x_ = p_.x0;
  for (int i = 0; i < n_; ++i) {
    const double l = p_.lower[i], u = p_.upper[i];
    if (l > u) throw std::invalid_argument("nlp: lower bound exceeds upper bound");
    has_l_[i] = std::isfinite(l);
    has_u_[i] = std::isfinite(u);
    n_bounds_ += has_l_[i] + has_u_[i];
    double pl = kBoundPush * std::max(1.0, std::abs(l)), pu = kBoundPush * std::max(1.0, std::abs(u));
    if (has_l_[i] && has_u_[i]) {
      pl = std::min(pl, kBoundFrac * (u - l));
      pu = std::min(pu, kBoundFrac * (u - l));
    }
    if (has_l_[i]) x_[i] = std::max(x_[i], l + pl);
    if (has_u_[i]) x_[i] = std::min(x_[i], u - pu);
  }

  mu_ = opt_.mu_init;
  const double mu_min = std::min(opt_.tol_stat, opt_.tol_feas) / 10.0;
  zl_ = VectorXd::Zero(n_);
  zu_ = VectorXd::Zero(n_);
  for (int i = 0; i < n_; ++i) {
    if (has_l_[i]) zl_[i] = mu_ / (x_[i] - p_.lower[i]);
    if (has_u_[i]) zu_[i] = mu_ / (p_.upper[i] - x_[i]);
  }
  lambda_ = VectorXd::Zero(m_);
  grad_.resize(n_);
  c_.resize(m_);

  f_ = p_.objective(x_);
  if (!std::isfinite(f_)) return finish(Status::infeasible_point, "objective is not finite at the starting point");
  {
    // Gradient-based objective scaling: the scaled gradient at the start is
    // at most kScaleMaxGradient.
    VectorXd g0;
    p_.gradient(x_, g0);
    const double gmax = g0.lpNorm<Eigen::Infinity>();
    if (std::isfinite(gmax) && gmax > kScaleMaxGradient) obj_scale_ = kScaleMaxGradient / gmax;
    f_ *= obj_scale_;
  }
  if (m_ > 0) p_.constraints(x_, c_);
  evaluate_derivatives();

  VectorXd sigma(n_), rhs(n_ + m_), bgrad(n_), dzl(n_), dzu(n_), xt(n_), ct(m_);
  int iter = 0;
  for (;; ++iter) {
    auto e = errors();
    if (opt_.verbose)
      std::fprintf(stderr, "it %3d  f %.10e  stat %.2e  feas %.2e  comp %.2e  mu %.1e  dw %.1e\n", iter, f_, e.stat,
                   e.feas, e.comp, mu_, dw_used_);
    if (e.stat <= opt_.tol_stat && e.feas <= opt_.tol_feas && e.comp <= opt_.tol_stat) {
      out.report.iterations = iter;
      return finish(Status::optimal, "");
    }
    if (iter >= opt_.max_iterations) {
      out.report.iterations = iter;
      return finish(Status::max_iter, "iteration limit reached");
    }
    while (n_bounds_ > 0 && mu_ > mu_min &&
           std::max({e.stat, e.feas, e.comp_mu}) <= kKappaEps * mu_) {
      mu_ = std::max(mu_min, std::min(kKappaMu * mu_, std::pow(mu_, kThetaMu)));
      e = errors();
    }

    for (int i = 0; i < n_; ++i) {
      sigma[i] = 0.0;
      bgrad[i] = grad_[i];
      if (has_l_[i]) {
        const double s = x_[i] - p_.lower[i];
        sigma[i] += zl_[i] / s;
        bgrad[i] -= mu_ / s;
      }
      if (has_u_[i]) {
        const double s = p_.upper[i] - x_[i];
        sigma[i] += zu_[i] / s;
        bgrad[i] += mu_ / s;
      }
    }
    if (!build_and_factorize(sigma)) {
      out.report.iterations = iter;
      return finish(Status::singular, "KKT matrix could not be regularized");
    }
    rhs.head(n_) = -bgrad;
    if (m_ > 0) rhs.tail(m_) = -c_;
    const VectorXd sol = solve_kkt(rhs);
    const VectorXd dx = sol.head(n_);
    const VectorXd lambda_plus = sol.tail(m_);
    if (!dx.allFinite()) {
      out.report.iterations = iter;
      return finish(Status::singular, "non-finite Newton step");
    }

    double alpha_max = 1.0, alpha_z = 1.0;
    const double tau = std::max(0.99, 1.0 - mu_);
    for (int i = 0; i < n_; ++i) {
      if (has_l_[i]) {
        const double s = x_[i] - p_.lower[i];
        if (dx[i] < 0.0) alpha_max = std::min(alpha_max, -tau * s / dx[i]);
        dzl[i] = mu_ / s - zl_[i] - zl_[i] / s * dx[i];
        if (dzl[i] < 0.0) alpha_z = std::min(alpha_z, -tau * zl_[i] / dzl[i]);
      } else {
        dzl[i] = 0.0;
      }
      if (has_u_[i]) {
        const double s = p_.upper[i] - x_[i];
        if (dx[i] > 0.0) alpha_max = std::min(alpha_max, tau * s / dx[i]);
        dzu[i] = mu_ / s - zu_[i] + zu_[i] / s * dx[i];
        if (dzu[i] < 0.0) alpha_z = std::min(alpha_z, -tau * zu_[i] / dzu[i]);
      } else {
        dzu[i] = 0.0;
      }
    }

    // l1 merit penalty: large enough that dx is a descent direction.
    const double c1 = m_ > 0 ? c_.lpNorm<1>() : 0.0;
    const double gdx = bgrad.dot(dx);
    if (m_ > 0) {
      double curv = 0.0;
      {
        // dx' (W + Sigma + dw) dx from the first block of the KKT product
        VectorXd kdx = kkt_.selfadjointView<Eigen::Lower>() * sol;
        curv = dx.dot(kdx.head(n_)) - dx.dot(jac_.transpose() * lambda_plus);
      }
      double need = lambda_plus.lpNorm<Eigen::Infinity>() * 1.01 + 1e-8;
      if (c1 > 0.0) need = std::max(need, (gdx + 0.5 * std::max(0.0, curv)) / (0.9 * c1));
      if (nu_ < need) nu_ = std::max(need, 2.0 * nu_);
    }
    const double merit0 = f_ + barrier(x_) + nu_ * c1;
    const double dmerit = gdx - nu_ * c1;
    // allowance for rounding in the merit value itself
    double slack = std::abs(f_) + std::abs(barrier(x_));
    if (m_ > 0) slack += nu_ * (jac_.cwiseAbs() * x_.cwiseAbs()).sum();
    slack *= 10.0 * std::numeric_limits<double>::epsilon();

    double alpha = alpha_max;
    bool accepted = false, saw_nonfinite = false, tried_soc = false;
    double f_t = 0.0;
    // Steps at the rounding level of x cannot be judged by the merit
    // function; take them whole so the multipliers still converge.
    bool tiny = true;
    for (int i = 0; i < n_ && tiny; ++i) tiny = std::abs(dx[i]) <= kTinyStep * (1.0 + std::abs(x_[i]));
    if (tiny) {
      xt = x_ + alpha * dx;
      if (strictly_inside(xt)) {
        f_t = obj(xt);
        if (std::isfinite(f_t)) {
          if (m_ > 0) p_.constraints(xt, ct);
          accepted = true;
        }
      }
    }
    while (!accepted && alpha >= kMinStep) {
      xt = x_ + alpha * dx;
      if (strictly_inside(xt)) {
        f_t = obj(xt);
        if (std::isfinite(f_t)) {
          if (m_ > 0) p_.constraints(xt, ct);
          const double merit_t = f_t + barrier(xt) + nu_ * (m_ > 0 ? ct.lpNorm<1>() : 0.0);
          if (std::isfinite(merit_t) && merit_t <= merit0 + kArmijo * alpha * dmerit + slack) {
            accepted = true;
            break;
          }
          if (!tried_soc && m_ > 0 && alpha == alpha_max) {
            tried_soc = true;
            VectorXd soc_rhs = VectorXd::Zero(n_ + m_);
            soc_rhs.tail(m_) = -ct;
            const VectorXd corr = solve_kkt(soc_rhs).head(n_);
            VectorXd xs = xt + corr;
            if (corr.allFinite() && strictly_inside(xs)) {
              const double f_s = obj(xs);
              if (std::isfinite(f_s)) {
                VectorXd cs(m_);
                p_.constraints(xs, cs);
                const double merit_s = f_s + barrier(xs) + nu_ * cs.lpNorm<1>();
                if (merit_s <= merit0 + kArmijo * alpha * dmerit + slack) {
                  xt = xs;
                  ct = cs;
                  f_t = f_s;
                  accepted = true;
                  break;
                }
              }
            }
          }
        } else {
          saw_nonfinite = true;
        }
      }
      alpha *= 0.5;
    }
    if (!accepted) {
      out.report.iterations = iter;
      if (saw_nonfinite)
        return finish(Status::infeasible_point, "line search could not leave a non-finite objective region");
      // Take the shortest trial anyway; the regularized direction still
      // points downhill and stalling here would end the solve.
      alpha = std::max(alpha * 2.0, kMinStep);
      xt = x_ + alpha * dx;
      if (!strictly_inside(xt)) return finish(Status::infeasible_point, "line search failed");
      f_t = obj(xt);
      if (!std::isfinite(f_t)) return finish(Status::infeasible_point, "line search failed");
      if (m_ > 0) p_.constraints(xt, ct);
      dw_last_ = std::max(dw_last_ * 10.0, kDeltaW0);
    }

    if (opt_.verbose) std::fprintf(stderr, "      step %.3e  |dx| %.2e\n", alpha, dx.lpNorm<Eigen::Infinity>());
    if (alpha < kShortStep * alpha_max) {
      if (++short_steps_ >= 2) {
        dw_floor_ = std::max(kDeltaW0, 10.0 * dw_floor_);
        short_steps_ = 0;
      }
    } else {
      short_steps_ = 0;
      if (alpha == alpha_max) dw_floor_ = dw_floor_ > 1e-8 ? dw_floor_ / 10.0 : 0.0;
    }
    x_ = xt;
    f_ = f_t;
    if (m_ > 0) {
      c_ = ct;
      lambda_ += alpha * (lambda_plus - lambda_);
    }
    for (int i = 0; i < n_; ++i) {
      if (has_l_[i]) {
        const double s = x_[i] - p_.lower[i];
        zl_[i] = std::clamp(zl_[i] + alpha_z * dzl[i], mu_ / (kKappaSigma * s), kKappaSigma * mu_ / s);
      }
      if (has_u_[i]) {
        const double s = p_.upper[i] - x_[i];
        zu_[i] = std::clamp(zu_[i] + alpha_z * dzu[i], mu_ / (kKappaSigma * s), kKappaSigma * mu_ / s);
      }
    }
    evaluate_derivatives();
  }
}

}  // namespace

SolveResult solve(const NlpProblem& problem, const SolveOptions& options) {
  if (problem.n <= 0) throw std::invalid_argument("nlp: problem has no variables");
  InteriorPoint ip(problem, options);
  return ip.run();
}

}  // namespace dsse::nlp
