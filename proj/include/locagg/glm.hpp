#pragma once

#include <cmath>

#include "locagg/types.hpp"

namespace locagg {

/// log(1 + e^eta), safe for |eta| beyond 700.
inline double log1p_exp(double eta) {
  return std::max(eta, 0.0) + std::log1p(std::exp(-std::abs(eta)));
}

inline double logistic(double eta) {
  if (eta >= 0.0) return 1.0 / (1.0 + std::exp(-eta));
  double e = std::exp(eta);
  return e / (1.0 + e);
}

/// Inverse canonical link applied elementwise.
inline Vector inverse_link(Family family, const Vector& eta) {
  if (family == Family::gaussian) return eta;
  return eta.unaryExpr([](double e) { return logistic(e); });
}

/// Negative log-likelihood at linear predictor eta.
/// Gaussian uses the 0.5 ||y - eta||^2 convention.
inline double glm_loss(Family family, const Vector& y, const Vector& eta) {
  if (y.size() != eta.size()) throw InvalidArgument("glm_loss: length mismatch");
  if (!eta.allFinite()) throw InvalidArgument("glm_loss: non-finite linear predictor");
  if (family == Family::gaussian) return 0.5 * (y - eta).squaredNorm();
  double total = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) total += -y[i] * eta[i] + log1p_exp(eta[i]);
  return total;
}

/// X^T (mu(X beta) - y).
inline Vector glm_gradient(Family family, const Matrix& X, const Vector& y, const Vector& beta) {
  if (X.rows() != y.size() || X.cols() != beta.size())
    throw InvalidArgument("glm_gradient: dimension mismatch");
  Vector eta = X * beta;
  return X.transpose() * (inverse_link(family, eta) - y);
}

}  // namespace locagg
