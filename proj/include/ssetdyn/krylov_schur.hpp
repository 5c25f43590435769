#pragma once

#include <complex>
#include <functional>
#include <vector>

#include <Eigen/Dense>

namespace ssetdyn {

// y = A x for the operator whose dominant eigenvalues are sought.
using LinearOperator = std::function<void(const Eigen::VectorXcd& x, Eigen::VectorXcd& y)>;

struct KrylovSchurOptions {
  int subspace = 40;
  int wanted = 2;
  int max_restarts = 60;
  double tol = 1e-14;  // residual estimate relative to |ritz value|
  double secondary_tol = 1e-14;  // same, for all but the leading value
};

struct KrylovSchurResult {
  std::vector<std::complex<double>> values;  // sorted by decreasing magnitude
  Eigen::MatrixXcd vectors;                  // unit-norm Ritz vectors, one per column
  std::vector<double> residual_estimates;
  std::vector<bool> value_converged;
  int restarts = 0;
  int applications = 0;
  bool converged = false;  // every wanted value converged
};

// Krylov-Schur iteration for the largest-magnitude eigenvalues. The start
// vector must be non-zero; the result is deterministic for a given start.
KrylovSchurResult krylov_schur_largest(const LinearOperator& op, const Eigen::VectorXcd& start,
                                       const KrylovSchurOptions& opts = {});

// Moves the diagonal entry at position `from` of an upper triangular T to
// position `to` (to < from) by unitary swaps, updating Q so that the
// factorization Q T Q^H is preserved.
void reorder_schur(Eigen::MatrixXcd& t, Eigen::MatrixXcd& q, int from, int to);

}  // namespace ssetdyn
