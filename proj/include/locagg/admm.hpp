#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "locagg/local_solver.hpp"
#include "locagg/parallel.hpp"
#include "locagg/penalties.hpp"
#include "locagg/types.hpp"

namespace locagg {

struct PenaltyConfig {
  double lambda_sm = 0.0;
  double lambda_sp = 0.0;
};

enum class RhoAdapt : std::uint8_t { fixed = 0, scalar = 1, vector_t = 2 };

struct AdmmConfig {
  double lambda_agg = 0.0;
  double rho_init = 1.0;
  RhoAdapt adapt = RhoAdapt::fixed;
  double mu = 10.0;
  double tau_incr = 2.0;
  double tau_decr = 2.0;
  int freeze_after = 1000;  // rho is frozen past this iteration
  double eps_abs = 1e-6;
  double eps_rel = 1e-4;
  int max_iters = 2000;
  int min_iters = 0;  // keep iterating past convergence (path refits)
  bool record_path = false;

  void validate() const {
    if (lambda_agg < 0.0) throw InvalidArgument("lambda_agg must be nonnegative");
    if (rho_init <= 0.0) throw InvalidArgument("rho_init must be positive");
    if (mu <= 1.0) throw InvalidArgument("mu must exceed 1");
    if (tau_incr < 1.0 || tau_decr < 1.0) throw InvalidArgument("tau_incr/tau_decr must be >= 1");
    if (eps_abs <= 0.0 || eps_rel < 0.0) throw InvalidArgument("stopping tolerances must be positive");
    if (max_iters < 1) throw InvalidArgument("max_iters must be >= 1");
  }
};

/// The ADMM triple plus residual bookkeeping.
struct CoefficientState {
  Matrix B, Z, U;  // (tau+1) x L; first rows of Z and U stay zero
  Vector rho;      // length tau+1
  int k = 0;
  double r_norm = 0.0, s_norm = 0.0;
  Vector r_t, s_t;  // per-time residual norms
  bool converged = false;
};

struct PathPoint {
  double r_norm = 0.0, s_norm = 0.0, objective = 0.0;
};

/// Recorded iterate sequence {B(k)} used as the algorithm path.
struct AlgorithmPath {
  std::vector<Matrix> iterates;
  std::vector<PathPoint> aux;
};

/// Solves diag(rho) Z + 2 lambda_agg Z G = diag(rho) M for M = SB + U via
/// the cached eigendecomposition G = Q diag(w) Q'.
inline Matrix z_update_from_report(const Matrix& M, const GraphPenalty& graph, double lambda_agg,
                                   const Vector& rho) {
  if (M.cols() != graph.num_locations()) throw InvalidArgument("z-update: location count mismatch");
  if (lambda_agg == 0.0) return M;  // (2*0*G + rho I) cancels rho exactly
  Matrix C = (rho.asDiagonal() * M) * graph.eigenvectors;
  for (Eigen::Index l = 0; l < C.cols(); ++l)
    C.col(l).array() /= rho.array() + 2.0 * lambda_agg * graph.eigenvalues[l];
  return C * graph.eigenvectors.transpose();
}

inline Matrix embed_consensus_input(const Matrix& B, const Matrix& U) {
  Matrix M = B;
  M.row(0).setZero();  // S B
  M += U;
  return M;
}

/// Z = rho (SB + U) (2 lambda_agg G + rho I)^(-1).
inline Matrix z_update_scalar(const Matrix& B, const Matrix& U, const GraphPenalty& graph,
                              double lambda_agg, double rho_scalar) {
  if (rho_scalar <= 0.0) throw InvalidArgument("rho must be positive");
  Vector rho = Vector::Constant(B.rows(), rho_scalar);
  return z_update_from_report(embed_consensus_input(B, U), graph, lambda_agg, rho);
}

/// Sylvester-form Z-update for per-time rho.
inline Matrix z_update_vector(const Matrix& B, const Matrix& U, const GraphPenalty& graph,
                              double lambda_agg, const Vector& rho) {
  if ((rho.array() <= 0.0).any()) throw InvalidArgument("rho entries must be positive");
  return z_update_from_report(embed_consensus_input(B, U), graph, lambda_agg, rho);
}

/// U += SB - Z; the first row stays zero.
inline Matrix dual_update(const Matrix& U, const Matrix& B, const Matrix& Z) {
  return embed_consensus_input(B, U) - Z;
}

struct ResidualReport {
  double r_norm = 0.0, s_norm = 0.0;
  Vector r_t, s_t;
};

/// r = SB - Z, s = diag(rho)(Z - Z_prev); Frobenius and per-time-row norms.
inline ResidualReport residuals(const Matrix& B, const Matrix& Z, const Matrix& Z_prev,
                                const Vector& rho) {
  ResidualReport rep;
  Matrix r = B - Z;
  Matrix s = rho.asDiagonal() * (Z - Z_prev);
  rep.r_t = r.rowwise().norm();
  rep.s_t = s.rowwise().norm();
  rep.r_norm = r.norm();
  rep.s_norm = s.norm();
  return rep;
}

/// Residual-balancing rho step; returns the updated value.
inline double adapt_rho_scalar(double rho, double r_norm, double s_norm, const AdmmConfig& cfg) {
  if (r_norm > cfg.mu * s_norm) return rho * cfg.tau_incr;
  if (s_norm > cfg.mu * r_norm) return rho / cfg.tau_decr;
  return rho;
}

/// Coordinator-side consensus logic: Z-update, dual mirror, residuals,
/// rho adaptation and the stopping decision. Consumes one report
/// V = SB^{k+1} + U^k per round; both the in-process fit and the network
/// coordinator run this exact arithmetic.
class ConsensusCoordinator {
 public:
  struct Round {
    bool stop = false;
    double eps_pr = 0.0, eps_dual = 0.0;
    Vector rescale;  // old rho / new rho, applied to U rows after the dual step
    ResidualReport res;
  };

  ConsensusCoordinator(const GraphPenalty& graph, AdmmConfig cfg, Eigen::Index tau1)
      : graph_(graph), cfg_(std::move(cfg)) {
    cfg_.validate();
    Z_ = Matrix::Zero(tau1, graph.num_locations());
    U_ = Matrix::Zero(tau1, graph.num_locations());
    rho_ = Vector::Constant(tau1, cfg_.rho_init);
  }

  Round step(const Matrix& V) {
    ++k_;
    Matrix SB = V - U_;
    Matrix Z_prev = std::move(Z_);
    Z_ = z_update_from_report(V, graph_, cfg_.lambda_agg, rho_);
    U_ = V - Z_;

    Round round;
    round.res = residuals(SB, Z_, Z_prev, rho_);
    Eigen::Index dim = Z_.size();
    round.eps_pr = std::sqrt(static_cast<double>(dim)) * cfg_.eps_abs +
                   cfg_.eps_rel * std::max(SB.norm(), Z_.norm());
    round.eps_dual = std::sqrt(static_cast<double>(dim)) * cfg_.eps_abs +
                     cfg_.eps_rel * (rho_.asDiagonal() * U_).norm();
    round.stop = round.res.r_norm <= round.eps_pr && round.res.s_norm <= round.eps_dual;

    round.rescale = Vector::Ones(rho_.size());
    if (cfg_.adapt != RhoAdapt::fixed && k_ <= cfg_.freeze_after && !round.stop) {
      Vector updated = rho_;
      if (cfg_.adapt == RhoAdapt::scalar) {
        double next = adapt_rho_scalar(rho_[0], round.res.r_norm, round.res.s_norm, cfg_);
        updated.setConstant(next);
      } else {
        for (Eigen::Index t = 0; t < rho_.size(); ++t)
          updated[t] = adapt_rho_scalar(rho_[t], round.res.r_t[t], round.res.s_t[t], cfg_);
      }
      if (updated != rho_) {
        // U is the rho-scaled dual; rescale to keep the Lagrangian
        // correspondence when rho changes.
        round.rescale = rho_.array() / updated.array();
        U_ = round.rescale.asDiagonal() * U_;
        rho_ = std::move(updated);
      }
    }
    return round;
  }

  const Matrix& consensus() const { return Z_; }
  const Matrix& dual() const { return U_; }
  const Vector& rho() const { return rho_; }
  int iteration() const { return k_; }
  const AdmmConfig& config() const { return cfg_; }

 private:
  const GraphPenalty& graph_;
  AdmmConfig cfg_;
  Matrix Z_, U_;
  Vector rho_;
  int k_ = 0;
};

struct FitResult {
  CoefficientState state;
  AlgorithmPath path;
  double objective = 0.0;
};

namespace detail {

/// Designs with the leading ones column, one per location.
inline std::vector<Matrix> embedded_designs(const TensorDataset& ds) {
  std::vector<Matrix> designs;
  designs.reserve(static_cast<std::size_t>(ds.num_locations()));
  for (Eigen::Index l = 0; l < ds.num_locations(); ++l) {
    Matrix X(ds.n(), ds.tau() + 1);
    X.col(0).setOnes();
    X.rightCols(ds.tau()) = ds.location(l);
    designs.push_back(std::move(X));
  }
  return designs;
}

inline Matrix omega_tilde_for(const TensorDataset& ds, const PenaltyConfig& pen) {
  if (ds.tau() >= 3) return embed_omega(second_difference_penalty(ds.tau()));
  if (pen.lambda_sm > 0.0)
    throw InvalidArgument("temporal smoothing requires tau >= 3");
  return Matrix::Zero(ds.tau() + 1, ds.tau() + 1);
}

}  // namespace detail

/// Split objective of the consensus problem, with Z inside the aggregating
/// term.
inline double admm_objective(const TensorDataset& ds, const std::vector<Matrix>& designs,
                             const Matrix& B, const Matrix& Z, const GraphPenalty& graph,
                             const PenaltyConfig& pen, double lambda_agg,
                             const Matrix& omega_tilde) {
  double value = 0.0;
  for (Eigen::Index l = 0; l < ds.num_locations(); ++l) {
    Vector beta = B.col(l);
    value += glm_loss(ds.family, ds.y, designs[static_cast<std::size_t>(l)] * beta);
    if (pen.lambda_sm != 0.0) value += pen.lambda_sm * beta.dot(omega_tilde * beta);
    if (pen.lambda_sp != 0.0) value += pen.lambda_sp * beta.tail(beta.size() - 1).norm();
  }
  return value + lambda_agg * aggregating_penalty_value(Z, graph.G);
}

/// Three-step Local-Aggregate ADMM: parallel local solves, consensus
/// Z-update, dual update, with optional path recording.
inline FitResult fit(const TensorDataset& ds, const GraphPenalty& graph, const PenaltyConfig& pen,
                     const AdmmConfig& cfg, const SolverControls& controls = {}) {
  ds.validate();
  cfg.validate();
  if (graph.num_locations() != ds.num_locations())
    throw InvalidArgument("graph has " + std::to_string(graph.num_locations()) +
                          " nodes but the dataset has " + std::to_string(ds.num_locations()) +
                          " locations");
  Eigen::Index tau1 = ds.tau() + 1;
  Eigen::Index L = ds.num_locations();
  std::vector<Matrix> designs = detail::embedded_designs(ds);
  Matrix omega_tilde = detail::omega_tilde_for(ds, pen);
  bool use_direct = ds.family == Family::gaussian && pen.lambda_sp == 0.0;
  std::vector<LocalDirectCache> caches(static_cast<std::size_t>(L));

  ConsensusCoordinator coordinator(graph, cfg, tau1);
  Matrix B = Matrix::Zero(tau1, L);
  FitResult result;

  for (int k = 1; k <= cfg.max_iters; ++k) {
    const Matrix& Z = coordinator.consensus();
    const Matrix& U = coordinator.dual();
    const Vector& rho = coordinator.rho();
    parallel_for(static_cast<int>(L), [&](int l) {
      auto idx = static_cast<std::size_t>(l);
      LocalProblem problem{designs[idx], ds.y,      ds.family, pen.lambda_sm, pen.lambda_sp,
                           omega_tilde,  rho,       Z.col(l),  U.col(l)};
      B.col(l) = use_direct ? solve_local_gaussian_direct(problem, &caches[idx])
                            : solve_local_prox(problem, controls, B.col(l));
    });

    Matrix V = embed_consensus_input(B, U);
    auto round = coordinator.step(V);

    if (cfg.record_path) {
      result.path.iterates.push_back(B);
      double objective = admm_objective(ds, designs, B, coordinator.consensus(), graph, pen,
                                        cfg.lambda_agg, omega_tilde);
      result.path.aux.push_back({round.res.r_norm, round.res.s_norm, objective});
    }

    result.state.r_norm = round.res.r_norm;
    result.state.s_norm = round.res.s_norm;
    result.state.r_t = round.res.r_t;
    result.state.s_t = round.res.s_t;
    result.state.k = k;
    if (round.stop && k >= cfg.min_iters) {
      result.state.converged = true;
      break;
    }
  }

  result.state.B = std::move(B);
  result.state.Z = coordinator.consensus();
  result.state.U = coordinator.dual();
  result.state.rho = coordinator.rho();
  result.objective = admm_objective(ds, designs, result.state.B, result.state.Z, graph, pen,
                                    cfg.lambda_agg, omega_tilde);
  return result;
}

/// Default lambda_max for the algorithm path: large enough that the
/// aggregation term dominates the data term by two orders of magnitude.
inline double lambda_max_heuristic(const TensorDataset& ds, const GraphPenalty& graph) {
  double total = 0.0;
  for (Eigen::Index l = 0; l < ds.num_locations(); ++l) {
    Matrix X(ds.n(), ds.tau() + 1);
    X.col(0).setOnes();
    X.rightCols(ds.tau()) = ds.location(l);
    total += (X.transpose() * ds.y).norm();
  }
  double lambda2 = graph.lambda2();
  if (lambda2 <= 0.0) lambda2 = 1.0;  // disconnected graph; no scale from G
  double value = 100.0 * total /
                 (static_cast<double>(ds.n()) * lambda2 * static_cast<double>(ds.num_locations()));
  return std::max(value, 1e-3);
}

}  // namespace locagg
