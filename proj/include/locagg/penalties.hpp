#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "locagg/types.hpp"

namespace locagg {

/// Second-order difference roughness penalty Omega = D2^T D2, tau x tau.
/// D2 has tau-2 rows [1, -2, 1]; affine-in-time coefficients are annihilated.
inline Matrix second_difference_penalty(Eigen::Index tau) {
  if (tau < 3) throw InvalidArgument("second_difference_penalty: tau must be >= 3");
  Matrix d2 = Matrix::Zero(tau - 2, tau);
  for (Eigen::Index r = 0; r < tau - 2; ++r) {
    d2(r, r) = 1.0;
    d2(r, r + 1) = -2.0;
    d2(r, r + 2) = 1.0;
  }
  return d2.transpose() * d2;
}

/// Omega padded with a zero first row/column so the intercept coordinate of
/// the embedded coefficient vector [alpha; beta] is never smoothed.
inline Matrix embed_omega(const Matrix& omega) {
  Matrix out = Matrix::Zero(omega.rows() + 1, omega.cols() + 1);
  out.bottomRightCorner(omega.rows(), omega.cols()) = omega;
  return out;
}

/// Graph Laplacian G = deg(W) - W over L locations, with the
/// eigendecomposition cached for the ADMM Z-updates.
struct GraphPenalty {
  Matrix W;
  Matrix G;
  Vector eigenvalues;   // ascending, clamped at 0
  Matrix eigenvectors;  // orthonormal columns Q, G Q = Q diag(eigenvalues)

  Eigen::Index num_locations() const { return G.rows(); }

  /// Smallest nonzero eigenvalue (algebraic connectivity); 0 if none.
  double lambda2() const {
    for (Eigen::Index i = 0; i < eigenvalues.size(); ++i)
      if (eigenvalues[i] > 1e-10) return eigenvalues[i];
    return 0.0;
  }

  static GraphPenalty from_weights(Matrix w) {
    Eigen::Index L = w.rows();
    if (w.cols() != L) throw InvalidArgument("weight matrix must be square");
    if (!w.isApprox(w.transpose(), 1e-12)) throw InvalidArgument("weight matrix must be symmetric");
    for (Eigen::Index l = 0; l < L; ++l) {
      if (w(l, l) != 0.0) throw InvalidArgument("weight matrix must have zero diagonal");
      for (Eigen::Index m = 0; m < L; ++m)
        if (w(l, m) < 0.0) throw InvalidArgument("weights must be nonnegative");
    }
    GraphPenalty g;
    g.W = std::move(w);
    g.G = Matrix(g.W.rowwise().sum().asDiagonal());
    g.G -= g.W;
    Eigen::SelfAdjointEigenSolver<Matrix> eigen(g.G);
    if (eigen.info() != Eigen::Success) throw InvalidArgument("Laplacian eigendecomposition failed");
    g.eigenvalues = eigen.eigenvalues().cwiseMax(0.0);
    g.eigenvectors = eigen.eigenvectors();
    return g;
  }
};

/// Binary-weight Laplacian from adjacency lists (0-based node ids).
inline GraphPenalty laplacian_from_adjacency(const std::vector<std::vector<Eigen::Index>>& neighbors) {
  Eigen::Index L = static_cast<Eigen::Index>(neighbors.size());
  Matrix w = Matrix::Zero(L, L);
  for (Eigen::Index l = 0; l < L; ++l) {
    for (Eigen::Index m : neighbors[static_cast<std::size_t>(l)]) {
      if (m < 0 || m >= L) throw InvalidArgument("adjacency list references unknown node");
      if (m == l) throw InvalidArgument("self-loops are not allowed");
      w(l, m) = 1.0;
    }
  }
  if (!w.isApprox(w.transpose(), 0.0)) throw InvalidArgument("adjacency lists must be symmetric");
  return GraphPenalty::from_weights(std::move(w));
}

/// Path graph 0-1-2-...-(L-1).
inline std::vector<std::vector<Eigen::Index>> chain_neighbors(Eigen::Index L) {
  std::vector<std::vector<Eigen::Index>> adj(static_cast<std::size_t>(L));
  for (Eigen::Index l = 0; l + 1 < L; ++l) {
    adj[static_cast<std::size_t>(l)].push_back(l + 1);
    adj[static_cast<std::size_t>(l + 1)].push_back(l);
  }
  return adj;
}

/// Four-neighbor lattice on a side x side grid, row-major node ids.
inline std::vector<std::vector<Eigen::Index>> grid_neighbors(Eigen::Index side) {
  std::vector<std::vector<Eigen::Index>> adj(static_cast<std::size_t>(side * side));
  auto id = [side](Eigen::Index r, Eigen::Index c) { return r * side + c; };
  for (Eigen::Index r = 0; r < side; ++r) {
    for (Eigen::Index c = 0; c < side; ++c) {
      auto& here = adj[static_cast<std::size_t>(id(r, c))];
      if (r > 0) here.push_back(id(r - 1, c));
      if (r + 1 < side) here.push_back(id(r + 1, c));
      if (c > 0) here.push_back(id(r, c - 1));
      if (c + 1 < side) here.push_back(id(r, c + 1));
    }
  }
  return adj;
}

enum class GraphMetric : std::uint8_t { euclidean = 0, polar = 1 };

/// Pairwise distances for the exponential-kernel weights. Polar coordinates
/// are (azimuth, elevation) in radians on the unit sphere; the distance is
/// the great-circle arc. Euclidean accepts any coordinate dimension.
inline double coordinate_distance(const Eigen::RowVectorXd& a, const Eigen::RowVectorXd& b,
                                  GraphMetric metric) {
  if (metric == GraphMetric::euclidean) return (a - b).norm();
  auto unit = [](const Eigen::RowVectorXd& p) {
    if (p.size() == 2) {
      double az = p[0], el = p[1];
      return Eigen::RowVector3d(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el));
    }
    if (p.size() == 3) {
      double norm = p.norm();
      if (norm == 0.0) throw InvalidArgument("polar metric requires nonzero coordinates");
      return Eigen::RowVector3d(p[0] / norm, p[1] / norm, p[2] / norm);
    }
    throw InvalidArgument("polar metric expects 2 (azimuth, elevation) or 3 coordinates");
  };
  double dot = std::clamp(unit(a).dot(unit(b)), -1.0, 1.0);
  return std::acos(dot);
}

/// Exponential-kernel weights w = exp(-D^2 / theta) over location coordinates.
inline GraphPenalty laplacian_from_coords(const Matrix& coords, double theta, GraphMetric metric) {
  if (theta <= 0.0) throw InvalidArgument("theta must be positive");
  Eigen::Index L = coords.rows();
  Matrix w = Matrix::Zero(L, L);
  for (Eigen::Index l = 0; l < L; ++l) {
    for (Eigen::Index m = l + 1; m < L; ++m) {
      double dist = coordinate_distance(coords.row(l), coords.row(m), metric);
      if (dist == 0.0) throw InvalidArgument("duplicate location coordinates");
      w(l, m) = w(m, l) = std::exp(-dist * dist / theta);
    }
  }
  return GraphPenalty::from_weights(std::move(w));
}

/// tr(B G B^T) = sum over unordered pairs w_{l,l'} ||beta_l - beta_{l'}||^2.
inline double aggregating_penalty_value(const Matrix& B, const Matrix& G) {
  if (B.cols() != G.rows()) throw InvalidArgument("aggregating_penalty_value: dimension mismatch");
  return (B * G * B.transpose()).trace();
}

/// Block soft-thresholding: Prox_g(x, t) = 1{||x|| >= t} (1 - t/||x||) x.
inline Vector prox_group_lasso(const Vector& x, double t) {
  if (t < 0.0) throw InvalidArgument("prox_group_lasso: threshold must be nonnegative");
  double norm = x.norm();
  if (norm < t || norm == 0.0) return Vector::Zero(x.size());
  double scale = 1.0 - t / norm;
  if (scale <= 0.0) return Vector::Zero(x.size());
  return scale * x;
}

}  // namespace locagg
