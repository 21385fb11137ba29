#pragma once

#include <cmath>
#include <vector>

#include "locagg/parallel.hpp"
#include "locagg/rng.hpp"
#include "locagg/types.hpp"

namespace locagg {
namespace detail {

inline Eigen::Index grid_side(Eigen::Index L) {
  auto side = static_cast<Eigen::Index>(std::llround(std::sqrt(static_cast<double>(L))));
  if (side * side != L)
    throw InvalidArgument("L must be a perfect square for grid signals (got " + std::to_string(L) + ")");
  return side;
}

/// Cells of the two kxk corner blocks, k = max(2, floor(sqrt(L)/5)),
/// anchored at opposite ends of the grid diagonal. Column-major location
/// index: cell (row a, col b) -> a + b * side.
inline std::vector<Eigen::Index> corner_block_cells(Eigen::Index side) {
  Eigen::Index k = std::max<Eigen::Index>(2, side / 5);
  k = std::min(k, side);
  std::vector<Eigen::Index> cells;
  for (Eigen::Index b = 0; b < k; ++b)
    for (Eigen::Index a = 0; a < k; ++a) cells.push_back(a + b * side);
  if (side > k)
    for (Eigen::Index b = side - k; b < side; ++b)
      for (Eigen::Index a = side - k; a < side; ++a) cells.push_back(a + b * side);
  return cells;
}

/// Gram-Schmidt against earlier factors, then rescaled to target_norm.
inline Vector orthogonalize(Vector v, const std::vector<Vector>& previous, double target_norm) {
  for (const Vector& p : previous) {
    double denom = p.squaredNorm();
    if (denom > 0.0) v -= (p.dot(v) / denom) * p;
  }
  double norm = v.norm();
  if (norm < 1e-12) throw InvalidArgument("signal factors are not linearly independent; lower the rank");
  return v * (target_norm / norm);
}

/// Temporal factor frequency in cycles over [0,1): 1, 2 for the first two
/// ranks, then r+0.5 to keep sinusoids distinct.
inline double temporal_frequency(int r) { return r <= 2 ? static_cast<double>(r) : r + 0.5; }

inline Matrix exponential_kernel_cholesky(const Matrix& dist, double theta) {
  Matrix cov = (-dist.array().square() / theta).exp();
  double jitter = 1e-10;
  for (int attempt = 0; attempt < 4; ++attempt) {
    Eigen::LLT<Matrix> llt(cov + jitter * Matrix::Identity(cov.rows(), cov.cols()));
    if (llt.info() == Eigen::Success) return llt.matrixL();
    jitter *= 10.0;
  }
  throw InvalidArgument("covariance kernel is not positive definite after jitter");
}

}  // namespace detail

/// True spatio-temporal signal: spatial factors live on two square blocks at
/// opposite corners of the sqrt(L) x sqrt(L) grid (or smooth sinusoids over
/// the whole grid), temporal factors are cosines at tau points in [0,1).
inline SignalMatrix simulate_signal(const SimulationSpec& spec) {
  spec.validate();
  Eigen::Index side = detail::grid_side(spec.L);
  Eigen::Index tau = spec.tau;

  std::vector<Eigen::Index> support;
  if (spec.spatial == SpatialSignal::blocks) {
    support = detail::corner_block_cells(side);
    if (spec.rank > static_cast<int>(support.size()))
      throw InvalidArgument("rank exceeds the number of locations inside the signal blocks");
  }

  SignalMatrix sig;
  for (int r = 1; r <= spec.rank; ++r) {
    Vector u = Vector::Zero(spec.L);
    if (spec.spatial == SpatialSignal::blocks) {
      // Rank-1 factor is binary on the blocks; higher ranks lay a cosine
      // pattern over the block cells before orthogonalization.
      auto m = static_cast<Eigen::Index>(support.size());
      for (Eigen::Index j = 0; j < m; ++j) {
        double value = r == 1 ? 1.0
                              : std::cos(std::numbers::pi * (r - 1) * (j + 0.5) / static_cast<double>(m));
        u[support[j]] = value;
      }
    } else {
      for (Eigen::Index l = 0; l < spec.L; ++l) {
        Eigen::Index a = l % side, b = l / side;
        u[l] = std::sin(std::numbers::pi * r * (a + 0.5) / side) *
               std::sin(std::numbers::pi * r * (b + 0.5) / side);
      }
    }
    double u_norm = spec.spatial == SpatialSignal::blocks
                        ? std::sqrt(static_cast<double>(support.size()))
                        : std::sqrt(static_cast<double>(spec.L)) / 2.0;
    if (r > 1) u = detail::orthogonalize(std::move(u), sig.spatial, u_norm);

    Vector v(tau);
    double freq = detail::temporal_frequency(r);
    for (Eigen::Index t = 0; t < tau; ++t)
      v[t] = std::cos(2.0 * std::numbers::pi * freq * t / static_cast<double>(tau));
    double v_norm = std::sqrt(static_cast<double>(tau) / 2.0);
    if (r > 1) v = detail::orthogonalize(std::move(v), sig.temporal, v_norm);

    sig.spatial.push_back(std::move(u));
    sig.temporal.push_back(std::move(v));
  }

  sig.B_o = Matrix::Zero(tau, spec.L);
  for (int r = 0; r < spec.rank; ++r)
    sig.B_o += sig.temporal[static_cast<std::size_t>(r)] * sig.spatial[static_cast<std::size_t>(r)].transpose();
  return sig;
}

/// X_i = A_T N A_L^T for iid standard normal N, so vec(X_i) ~ N(0, Sigma_L
/// (x) Sigma_T) with exponential kernels over the integer time grid and the
/// sqrt(L) x sqrt(L) unit spatial grid. Deterministic given spec.seed; one
/// RNG stream per subject.
inline TensorDataset simulate_covariates(const SimulationSpec& spec) {
  spec.validate();
  Eigen::Index side = detail::grid_side(spec.L);

  Matrix dist_T(spec.tau, spec.tau);
  for (Eigen::Index s = 0; s < spec.tau; ++s)
    for (Eigen::Index t = 0; t < spec.tau; ++t) dist_T(s, t) = std::abs(static_cast<double>(s - t));
  Matrix dist_L(spec.L, spec.L);
  for (Eigen::Index l = 0; l < spec.L; ++l) {
    for (Eigen::Index m = 0; m < spec.L; ++m) {
      double da = static_cast<double>(l % side - m % side);
      double db = static_cast<double>(l / side - m / side);
      dist_L(l, m) = std::hypot(da, db);
    }
  }
  Matrix chol_T = detail::exponential_kernel_cholesky(dist_T, spec.theta_T);
  Matrix chol_L = detail::exponential_kernel_cholesky(dist_L, spec.theta_L);

  TensorDataset ds;
  ds.family = spec.family;
  ds.y = Vector::Zero(spec.n);
  ds.blocks.assign(static_cast<std::size_t>(spec.L), Matrix(spec.n, spec.tau));

  CounterRng root(spec.seed);
  parallel_for(static_cast<int>(spec.n), [&](int i) {
    CounterRng rng = root.split(static_cast<std::uint64_t>(i));
    Matrix noise(spec.tau, spec.L);
    for (Eigen::Index t = 0; t < spec.tau; ++t)
      for (Eigen::Index l = 0; l < spec.L; ++l) noise(t, l) = rng.next_normal();
    Matrix x = chol_T * noise * chol_L.transpose();
    for (Eigen::Index l = 0; l < spec.L; ++l)
      ds.blocks[static_cast<std::size_t>(l)].row(i) = x.col(l).transpose();
  });
  return ds;
}

/// X_(1) vec(B): the linear predictor sum_l X_l beta_l (no intercept).
inline Vector linear_predictor(const TensorDataset& covariates, const Matrix& B) {
  if (B.rows() != covariates.tau() || B.cols() != covariates.num_locations())
    throw InvalidArgument("signal dimensions do not match the covariates");
  Vector eta = Vector::Zero(covariates.n());
  for (Eigen::Index l = 0; l < covariates.num_locations(); ++l)
    eta += covariates.location(l) * B.col(l);
  return eta;
}

/// Scales B_o so the empirical variance of the linear predictor hits the
/// requested SNR (noise is fixed at N(0,1)), then draws responses.
inline Vector simulate_responses(const TensorDataset& covariates, const SignalMatrix& signal,
                                 const SimulationSpec& spec) {
  spec.validate();
  Vector eta = linear_predictor(covariates, signal.B_o);
  bool zero_signal = signal.B_o.isZero(0.0);
  if (!zero_signal) {
    double mean = eta.mean();
    double var = (eta.array() - mean).square().sum() / static_cast<double>(eta.size());
    if (var <= 0.0) throw InvalidArgument("linear predictor has zero variance; cannot calibrate SNR");
    eta *= std::sqrt(spec.snr / var);
  }

  CounterRng rng(spec.seed, 0x726573706f6e73ULL);  // response stream, disjoint from covariates
  Vector y(eta.size());
  if (spec.family == Family::gaussian) {
    for (Eigen::Index i = 0; i < y.size(); ++i) y[i] = eta[i] + rng.next_normal();
  } else {
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      double p = 1.0 / (1.0 + std::exp(-eta[i]));
      y[i] = rng.next_uniform() < p ? 1.0 : 0.0;
    }
  }
  return y;
}

inline TensorDataset simulate_dataset(const SimulationSpec& spec, SignalMatrix* signal_out = nullptr) {
  SignalMatrix signal = simulate_signal(spec);
  TensorDataset ds = simulate_covariates(spec);
  ds.y = simulate_responses(ds, signal, spec);
  if (signal_out) *signal_out = std::move(signal);
  return ds;
}

/// Balanced random partition into M folds, deterministic under seed.
inline FoldAssignment make_folds(Eigen::Index n, int M, std::uint64_t seed) {
  if (M < 2) throw InvalidArgument("fold count must be >= 2");
  if (static_cast<Eigen::Index>(M) > n) throw InvalidArgument("fold count exceeds subject count");
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  CounterRng rng(seed, 0x666f6c6473ULL);
  for (Eigen::Index i = n - 1; i > 0; --i) {
    auto j = static_cast<Eigen::Index>(rng.next_below(static_cast<std::uint64_t>(i + 1)));
    std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
  }
  FoldAssignment folds;
  folds.M = M;
  folds.assignment.assign(static_cast<std::size_t>(n), 0);
  for (Eigen::Index i = 0; i < n; ++i)
    folds.assignment[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] =
        static_cast<int>(i % M) + 1;
  return folds;
}

}  // namespace locagg
