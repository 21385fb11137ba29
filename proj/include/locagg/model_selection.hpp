#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "locagg/admm.hpp"
#include "locagg/glm.hpp"
#include "locagg/simulate.hpp"
#include "locagg/types.hpp"

namespace locagg {

struct Predictions {
  Vector values;  // ensemble mean responses (probabilities for binomial)
  Vector labels;  // binomial only: thresholded at 0.5, ties go to class 1
};

/// Ensemble prediction: the average of the local inverse-link predictions,
/// y_hat = (1/L) sum_l g^{-1}(alpha_l + X_l beta_l).
inline Predictions predict_ensemble(const Matrix& B, const TensorDataset& ds, Family family) {
  if (B.rows() != ds.tau() + 1 || B.cols() != ds.num_locations())
    throw InvalidArgument("model dimensions do not match the dataset");
  Vector mean = Vector::Zero(ds.n());
  for (Eigen::Index l = 0; l < ds.num_locations(); ++l) {
    Vector eta = Vector::Constant(ds.n(), B(0, l));
    eta += ds.location(l) * B.col(l).tail(ds.tau());
    mean += inverse_link(family, eta);
  }
  mean /= static_cast<double>(ds.num_locations());
  Predictions pred;
  pred.values = std::move(mean);
  if (family == Family::binomial)
    pred.labels = pred.values.unaryExpr([](double p) { return p >= 0.5 ? 1.0 : 0.0; });
  return pred;
}

/// Held-out CV error: MSE for gaussian, misclassification rate for binomial
/// (deviance behind the flag).
inline double cv_error(const Matrix& B, const TensorDataset& holdout, Family family,
                       bool binomial_deviance = false) {
  Predictions pred = predict_ensemble(B, holdout, family);
  if (family == Family::gaussian)
    return (pred.values - holdout.y).squaredNorm() / static_cast<double>(holdout.n());
  if (binomial_deviance) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < holdout.n(); ++i) {
      double p = std::clamp(pred.values[i], 1e-12, 1.0 - 1e-12);
      total += -2.0 * (holdout.y[i] * std::log(p) + (1.0 - holdout.y[i]) * std::log(1.0 - p));
    }
    return total / static_cast<double>(holdout.n());
  }
  double wrong = 0.0;
  for (Eigen::Index i = 0; i < holdout.n(); ++i)
    if (pred.labels[i] != holdout.y[i]) wrong += 1.0;
  return wrong / static_cast<double>(holdout.n());
}

struct EvalReport {
  double prediction_error = 0.0;
  bool has_truth = false;
  double coef_mse = 0.0;  // ||B_hat - B_o||_F over slope rows
  double tpr = 0.0, fpr = 0.0;
};

/// A location counts as detected when its slope block is not exactly zero
/// (the group-lasso prox produces exact zeros).
inline EvalReport evaluate(const Matrix& B, const TensorDataset& ds, Family family,
                           const SignalMatrix* truth = nullptr) {
  EvalReport report;
  report.prediction_error = cv_error(B, ds, family);
  if (!truth) return report;
  report.has_truth = true;
  Matrix slopes = B.bottomRows(B.rows() - 1);
  report.coef_mse = (slopes - truth->B_o).norm();
  int tp = 0, fp = 0, fn = 0, tn = 0;
  for (Eigen::Index l = 0; l < slopes.cols(); ++l) {
    bool detected = slopes.col(l).norm() > 0.0;
    bool active = truth->B_o.col(l).norm() > 0.0;
    if (detected && active) ++tp;
    else if (detected) ++fp;
    else if (active) ++fn;
    else ++tn;
  }
  report.tpr = tp + fn > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
  report.fpr = fp + tn > 0 ? static_cast<double>(fp) / (fp + tn) : 0.0;
  return report;
}

/// Standalone per-location fits (rho = 0, no consensus): the local-only
/// baseline model.
inline Matrix fit_local_only(const TensorDataset& ds, const PenaltyConfig& pen,
                             const SolverControls& controls = {}) {
  ds.validate();
  std::vector<Matrix> designs = detail::embedded_designs(ds);
  Matrix omega_tilde = detail::omega_tilde_for(ds, pen);
  Eigen::Index tau1 = ds.tau() + 1;
  Matrix B = Matrix::Zero(tau1, ds.num_locations());
  Vector zero_rho = Vector::Zero(tau1);
  Vector zero_vec = Vector::Zero(tau1);
  bool use_direct = ds.family == Family::gaussian && pen.lambda_sp == 0.0;
  parallel_for(static_cast<int>(ds.num_locations()), [&](int l) {
    auto idx = static_cast<std::size_t>(l);
    LocalProblem problem{designs[idx], ds.y,     ds.family, pen.lambda_sm, pen.lambda_sp,
                         omega_tilde,  zero_rho, zero_vec,  zero_vec};
    B.col(l) = use_direct ? solve_local_gaussian_direct(problem)
                          : solve_local_prox(problem, controls, Vector::Zero(tau1));
  });
  return B;
}

struct PathCvResult {
  std::vector<double> cv_curve;  // mean CV error per aligned iterate
  int k_opt = 0;                 // 0-based index into the curve
  std::vector<AlgorithmPath> per_fold_paths;
  Matrix final_model;  // full-data iterate k_opt
  FitResult final_fit;
};

/// Algorithm-path cross-validation: fit with lambda_agg = lambda_max on each
/// fold complement recording the path, score every iterate on the held-out
/// fold, average over folds (truncated at the shortest fold path), pick the
/// argmin, and refit on all data taking iterate k_opt.
inline PathCvResult cv_algorithm_path(const TensorDataset& ds, const GraphPenalty& graph,
                                      const PenaltyConfig& pen, const AdmmConfig& cfg,
                                      const FoldAssignment& folds,
                                      const SolverControls& controls = {}) {
  if (!cfg.record_path) throw InvalidArgument("cv_algorithm_path requires record_path");
  PathCvResult result;
  std::vector<std::vector<double>> fold_errors(static_cast<std::size_t>(folds.M));
  result.per_fold_paths.resize(static_cast<std::size_t>(folds.M));

  for (int m = 1; m <= folds.M; ++m) {
    TensorDataset train = ds.subset(folds.complement_rows(m));
    TensorDataset holdout = ds.subset(folds.fold_rows(m));
    FitResult fold_fit = fit(train, graph, pen, cfg, controls);
    if (fold_fit.path.iterates.empty())
      throw InvalidArgument("fold " + std::to_string(m) + " produced no iterates");
    auto& errors = fold_errors[static_cast<std::size_t>(m - 1)];
    errors.reserve(fold_fit.path.iterates.size());
    for (const Matrix& iterate : fold_fit.path.iterates)
      errors.push_back(cv_error(iterate, holdout, ds.family));
    result.per_fold_paths[static_cast<std::size_t>(m - 1)] = std::move(fold_fit.path);
  }

  std::size_t aligned = std::numeric_limits<std::size_t>::max();
  for (const auto& errors : fold_errors) aligned = std::min(aligned, errors.size());
  result.cv_curve.assign(aligned, 0.0);
  for (const auto& errors : fold_errors)
    for (std::size_t k = 0; k < aligned; ++k) result.cv_curve[k] += errors[k];
  for (double& e : result.cv_curve) e /= static_cast<double>(folds.M);
  result.k_opt = static_cast<int>(
      std::min_element(result.cv_curve.begin(), result.cv_curve.end()) - result.cv_curve.begin());

  AdmmConfig refit_cfg = cfg;
  refit_cfg.min_iters = result.k_opt + 1;
  refit_cfg.max_iters = std::max(cfg.max_iters, result.k_opt + 1);
  result.final_fit = fit(ds, graph, pen, refit_cfg, controls);
  result.final_model = result.final_fit.path.iterates[static_cast<std::size_t>(result.k_opt)];
  return result;
}

struct LocalLambdaChoice {
  double lambda_sm = 0.0;
  double lambda_sp = 0.0;
  double cv_error = 0.0;
};

/// Per-location lambda_loc selection over a grid of (lambda_sm, lambda_sp)
/// pairs via M-fold CV deviance of standalone local GLMs; parallel across
/// locations.
inline std::vector<LocalLambdaChoice> select_local_lambda(
    const TensorDataset& ds, const std::vector<std::pair<double, double>>& grid,
    const FoldAssignment& folds, const SolverControls& controls = {}) {
  if (grid.empty()) throw InvalidArgument("lambda grid must be nonempty");
  ds.validate();
  Eigen::Index tau1 = ds.tau() + 1;
  std::vector<LocalLambdaChoice> choices(static_cast<std::size_t>(ds.num_locations()));

  std::vector<TensorDataset> trains, holdouts;
  for (int m = 1; m <= folds.M; ++m) {
    trains.push_back(ds.subset(folds.complement_rows(m)));
    holdouts.push_back(ds.subset(folds.fold_rows(m)));
  }

  parallel_for(static_cast<int>(ds.num_locations()), [&](int l) {
    double best = std::numeric_limits<double>::infinity();
    LocalLambdaChoice chosen;
    for (const auto& [lambda_sm, lambda_sp] : grid) {
      if (lambda_sm > 0.0 && ds.tau() < 3) continue;
      Matrix omega_tilde = ds.tau() >= 3 ? embed_omega(second_difference_penalty(ds.tau()))
                                         : Matrix::Zero(tau1, tau1);
      double total = 0.0;
      for (std::size_t m = 0; m < trains.size(); ++m) {
        const TensorDataset& train = trains[m];
        Matrix X(train.n(), tau1);
        X.col(0).setOnes();
        X.rightCols(ds.tau()) = train.location(l);
        Vector zero_rho = Vector::Zero(tau1);
        Vector zero_vec = Vector::Zero(tau1);
        LocalProblem problem{X,           train.y,  train.family, lambda_sm, lambda_sp,
                             omega_tilde, zero_rho, zero_vec,     zero_vec};
        Vector beta = train.family == Family::gaussian && lambda_sp == 0.0
                          ? solve_local_gaussian_direct(problem)
                          : solve_local_prox(problem, controls, Vector::Zero(tau1));
        const TensorDataset& holdout = holdouts[m];
        Matrix Xh(holdout.n(), tau1);
        Xh.col(0).setOnes();
        Xh.rightCols(ds.tau()) = holdout.location(l);
        total += glm_loss(holdout.family, holdout.y, Xh * beta);
      }
      if (total < best) {
        best = total;
        chosen = {lambda_sm, lambda_sp, total / static_cast<double>(folds.M)};
      }
    }
    choices[static_cast<std::size_t>(l)] = chosen;
  });
  return choices;
}

}  // namespace locagg
