#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace locagg {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class Family : std::uint8_t { gaussian = 0, binomial = 1 };

inline const char* family_name(Family f) {
  return f == Family::gaussian ? "gaussian" : "binomial";
}

struct InvalidArgument : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct FormatError : IoError {
  using IoError::IoError;
};

struct NetworkError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SolverError : std::runtime_error {
  SolverError(const std::string& what, Vector last) : std::runtime_error(what), last_iterate(std::move(last)) {}
  Vector last_iterate;
};

/// Covariate tensor stored as L location blocks of size n x tau, plus the
/// response vector and family tag.
struct TensorDataset {
  std::vector<Matrix> blocks;  // blocks[l] is n x tau, row = subject
  Vector y;
  Family family = Family::gaussian;

  Eigen::Index n() const { return y.size(); }
  Eigen::Index tau() const { return blocks.empty() ? 0 : blocks.front().cols(); }
  Eigen::Index num_locations() const { return static_cast<Eigen::Index>(blocks.size()); }

  const Matrix& location(Eigen::Index l) const { return blocks[static_cast<std::size_t>(l)]; }

  void validate() const {
    if (blocks.empty()) throw InvalidArgument("dataset has no location blocks");
    Eigen::Index rows = blocks.front().rows();
    Eigen::Index cols = blocks.front().cols();
    for (const Matrix& block : blocks) {
      if (block.rows() != rows || block.cols() != cols)
        throw InvalidArgument("location blocks have mismatched dimensions");
      if (!block.allFinite()) throw InvalidArgument("dataset contains non-finite covariates");
    }
    if (y.size() != rows) throw InvalidArgument("response length does not match subject count");
    if (!y.allFinite()) throw InvalidArgument("response contains non-finite values");
    if (family == Family::binomial) {
      for (Eigen::Index i = 0; i < y.size(); ++i)
        if (y[i] != 0.0 && y[i] != 1.0)
          throw InvalidArgument("binomial response must be 0/1");
    }
  }

  /// Keeps only the subjects listed in `rows` (used by CV splits).
  TensorDataset subset(const std::vector<Eigen::Index>& rows) const {
    TensorDataset out;
    out.family = family;
    out.y.resize(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) out.y[static_cast<Eigen::Index>(i)] = y[rows[i]];
    out.blocks.reserve(blocks.size());
    for (const Matrix& block : blocks) {
      Matrix sub(static_cast<Eigen::Index>(rows.size()), block.cols());
      for (std::size_t i = 0; i < rows.size(); ++i) sub.row(static_cast<Eigen::Index>(i)) = block.row(rows[i]);
      out.blocks.push_back(std::move(sub));
    }
    return out;
  }
};

enum class SpatialSignal : std::uint8_t { blocks = 0, smooth = 1 };

struct SimulationSpec {
  Eigen::Index n = 100;
  Eigen::Index tau = 200;
  Eigen::Index L = 100;  // perfect square for grid signals
  int rank = 2;
  double theta_T = 200.0;
  double theta_L = 2.0;
  double snr = 10.0;
  Family family = Family::gaussian;
  SpatialSignal spatial = SpatialSignal::blocks;
  std::uint64_t seed = 0;

  void validate() const {
    if (n < 1 || tau < 1 || L < 1) throw InvalidArgument("n, tau, L must be positive");
    if (rank < 1) throw InvalidArgument("rank must be >= 1");
    if (theta_T <= 0.0 || theta_L <= 0.0) throw InvalidArgument("theta_T and theta_L must be positive");
    if (snr <= 0.0) throw InvalidArgument("snr must be positive");
  }
};

/// True signal B_o = sum_r v_r u_r^T with orthogonal factor sets.
struct SignalMatrix {
  Matrix B_o;                    // tau x L
  std::vector<Vector> spatial;   // u_r, length L
  std::vector<Vector> temporal;  // v_r, length tau
};

struct FoldAssignment {
  int M = 0;
  std::vector<int> assignment;  // fold ids in [1, M], length n

  std::vector<Eigen::Index> fold_rows(int fold) const {
    std::vector<Eigen::Index> rows;
    for (std::size_t i = 0; i < assignment.size(); ++i)
      if (assignment[i] == fold) rows.push_back(static_cast<Eigen::Index>(i));
    return rows;
  }

  std::vector<Eigen::Index> complement_rows(int fold) const {
    std::vector<Eigen::Index> rows;
    for (std::size_t i = 0; i < assignment.size(); ++i)
      if (assignment[i] != fold) rows.push_back(static_cast<Eigen::Index>(i));
    return rows;
  }
};

}  // namespace locagg
