#pragma once

#include <cmath>

#include "locagg/glm.hpp"
#include "locagg/penalties.hpp"
#include "locagg/types.hpp"

namespace locagg {

/// Per-location B-subproblem in the intercept embedding: design [1, X_l],
/// coefficient [alpha; beta], smooth part
///   loss + lambda_sm b' Omega~ b + 1/2 ||S b - z + u||^2_diag(rho)
/// and a group-lasso term lambda_sp ||S b||_2. The first coordinates of z, u
/// and rho's weight path are pinned to zero through S.
struct LocalProblem {
  const Matrix& X;  // n x (tau+1), leading ones column
  const Vector& y;
  Family family;
  double lambda_sm = 0.0;
  double lambda_sp = 0.0;
  const Matrix& omega_tilde;  // (tau+1) x (tau+1), zero first row/column
  Vector rho;                 // length tau+1
  Vector z, u;                // length tau+1, first entries zero
};

struct SolverControls {
  double gamma = 0.5;        // backtracking shrink
  double t_init = 1.0;
  double inner_tol = 1e-8;   // relative: scaled by (1 + ||beta||)
  int max_inner_iters = 2000;
  int max_halvings = 60;
};

namespace detail {

inline double local_smooth_value(const LocalProblem& p, const Vector& beta, const Vector& eta) {
  double value = glm_loss(p.family, p.y, eta);
  if (p.lambda_sm != 0.0) value += p.lambda_sm * beta.dot(p.omega_tilde * beta);
  Vector gap = beta;
  gap[0] = 0.0;  // S beta
  gap -= p.z;
  gap += p.u;
  value += 0.5 * gap.dot(p.rho.asDiagonal() * gap);
  return value;
}

inline Vector local_smooth_gradient(const LocalProblem& p, const Vector& beta, const Vector& eta) {
  Vector grad = p.X.transpose() * (inverse_link(p.family, eta) - p.y);
  if (p.lambda_sm != 0.0) grad += 2.0 * p.lambda_sm * (p.omega_tilde * beta);
  Vector gap = beta;
  gap[0] = 0.0;
  gap -= p.z;
  gap += p.u;
  gap = p.rho.asDiagonal() * gap;
  gap[0] = 0.0;  // S diag(rho) (S beta - z + u)
  return grad + gap;
}

/// Prox over the slope block only; the intercept passes through unshrunk.
inline Vector prox_embedded(const Vector& x, double threshold) {
  Vector out(x.size());
  out[0] = x[0];
  out.tail(x.size() - 1) = prox_group_lasso(Vector(x.tail(x.size() - 1)), threshold);
  return out;
}

}  // namespace detail

/// Proximal gradient with backtracking (sufficient-decrease test at the prox
/// point). Returns [alpha; beta] with fixed-point residual below inner_tol.
inline Vector solve_local_prox(const LocalProblem& problem, const SolverControls& controls,
                               const Vector& beta_init) {
  if (problem.lambda_sp < 0.0) throw InvalidArgument("lambda_sp must be nonnegative");
  Vector beta = beta_init;
  Vector eta = problem.X * beta;
  double value = detail::local_smooth_value(problem, beta, eta);
  if (!std::isfinite(value)) throw SolverError("non-finite objective at the initial point", beta);

  for (int iter = 0; iter < controls.max_inner_iters; ++iter) {
    Vector grad = detail::local_smooth_gradient(problem, beta, eta);
    double t = controls.t_init;
    Vector candidate;
    double candidate_value = 0.0;
    int halvings = 0;
    for (;; ++halvings) {
      candidate = detail::prox_embedded(beta - t * grad, problem.lambda_sp * t);
      Vector step = candidate - beta;
      Vector candidate_eta = problem.X * candidate;
      candidate_value = detail::local_smooth_value(problem, candidate, candidate_eta);
      double bound = value + grad.dot(step) + step.squaredNorm() / (2.0 * t);
      if (candidate_value <= bound + 1e-12 * (1.0 + std::abs(value))) {
        eta = std::move(candidate_eta);
        break;
      }
      if (halvings >= controls.max_halvings)
        throw SolverError("backtracking line search exhausted", beta);
      t *= controls.gamma;
    }
    double move = (candidate - beta).norm();
    beta = std::move(candidate);
    value = candidate_value;
    if (!std::isfinite(value)) throw SolverError("non-finite objective during descent", beta);
    if (move <= controls.inner_tol * (1.0 + beta.norm())) break;
  }
  return beta;
}

/// Reusable pieces of the Gaussian smooth-penalty system; the factorization
/// is redone only when rho changes.
struct LocalDirectCache {
  Matrix base;  // X'X + 2 lambda_sm Omega~
  Vector xty;
  Vector rho_used;
  Matrix system;
  Eigen::LDLT<Matrix> ldlt;
  bool has_base = false;
  bool has_factor = false;
};

/// Gaussian, lambda_sp = 0: solves
///   (X'X + 2 lambda_sm Omega~ + S diag(rho) S) b = X'y + S diag(rho)(z - u).
inline Vector solve_local_gaussian_direct(const LocalProblem& problem,
                                          LocalDirectCache* cache = nullptr) {
  if (problem.family != Family::gaussian)
    throw InvalidArgument("direct solver requires the gaussian family");
  if (problem.lambda_sp != 0.0)
    throw InvalidArgument("direct solver requires lambda_sp = 0");
  Eigen::Index d = problem.X.cols();

  LocalDirectCache local;
  LocalDirectCache& c = cache ? *cache : local;
  if (!c.has_base) {
    c.base = problem.X.transpose() * problem.X;
    if (problem.lambda_sm != 0.0) c.base += 2.0 * problem.lambda_sm * problem.omega_tilde;
    c.xty = problem.X.transpose() * problem.y;
    c.has_base = true;
  }
  if (!c.has_factor || c.rho_used != problem.rho) {
    c.system = c.base;
    for (Eigen::Index t = 1; t < d; ++t) c.system(t, t) += problem.rho[t];
    c.ldlt.compute(c.system);
    c.rho_used = problem.rho;
    c.has_factor = true;
  }

  Vector rhs = c.xty;
  Vector pull = problem.rho.asDiagonal() * (problem.z - problem.u);
  pull[0] = 0.0;
  rhs += pull;
  Vector beta = c.ldlt.solve(rhs);

  // A rank-deficient normal system can still be consistent, so a residual
  // check alone misses it; inspect the factor diagonal as well.
  Vector diag = c.ldlt.vectorD();
  double dmax = diag.cwiseAbs().maxCoeff();
  bool deficient = dmax <= 0.0 || diag.cwiseAbs().minCoeff() <= 1e-12 * dmax;
  double residual = (c.system * beta - rhs).norm();
  if (!beta.allFinite() || deficient || residual > 1e-6 * (1.0 + rhs.norm()))
    throw SolverError("singular local system (rank-deficient design with no regularization)", beta);
  return beta;
}

}  // namespace locagg
