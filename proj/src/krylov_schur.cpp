#include "ssetdyn/krylov_schur.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include <Eigen/Eigenvalues>

namespace ssetdyn {

namespace {

using Complex = std::complex<double>;

// Plane rotation with real cosine c and complex sine s such that
// [c s; -conj(s) c] [f; g] = [r; 0].
void make_rotation(Complex f, Complex g, double& c, Complex& s) {
  const double af = std::abs(f), ag = std::abs(g);
  if (ag == 0.0) {
    c = 1.0;
    s = 0.0;
    return;
  }
  if (af == 0.0) {
    c = 0.0;
    s = std::conj(g) / ag;
    return;
  }
  const double d = std::hypot(af, ag);
  c = af / d;
  s = (f / af) * std::conj(g) / d;
}

void swap_adjacent(Eigen::MatrixXcd& t, Eigen::MatrixXcd& q, int k) {
  const int n = static_cast<int>(t.rows());
  const Complex t11 = t(k, k), t22 = t(k + 1, k + 1);
  double c;
  Complex s;
  make_rotation(t(k, k + 1), t22 - t11, c, s);
  for (int col = k + 2; col < n; ++col) {
    const Complex x = t(k, col), y = t(k + 1, col);
    t(k, col) = c * x + s * y;
    t(k + 1, col) = c * y - std::conj(s) * x;
  }
  const Complex sc = std::conj(s);
  for (int row = 0; row < k; ++row) {
    const Complex x = t(row, k), y = t(row, k + 1);
    t(row, k) = c * x + sc * y;
    t(row, k + 1) = c * y - s * x;
  }
  t(k, k) = t22;
  t(k + 1, k + 1) = t11;
  for (int row = 0; row < q.rows(); ++row) {
    const Complex x = q(row, k), y = q(row, k + 1);
    q(row, k) = c * x + sc * y;
    q(row, k + 1) = c * y - s * x;
  }
}

constexpr int kCheckInterval = 8;

double unit_uniform(std::mt19937_64& eng) { return double(eng() >> 11) * 0x1.0p-53; }

// Orthogonalizes w against the first `cols` columns of v (two passes of
// classical Gram-Schmidt); returns the accumulated coefficients.
Eigen::VectorXcd orthogonalize(const Eigen::MatrixXcd& v, int cols, Eigen::VectorXcd& w) {
  Eigen::VectorXcd h = Eigen::VectorXcd::Zero(cols);
  for (int pass = 0; pass < 2; ++pass) {
    Eigen::VectorXcd c = v.leftCols(cols).adjoint() * w;
    w.noalias() -= v.leftCols(cols) * c;
    h += c;
  }
  return h;
}

// Eigenvector of upper triangular t for its i-th diagonal entry.
Eigen::VectorXcd triangular_eigenvector(const Eigen::MatrixXcd& t, int i) {
  Eigen::VectorXcd y = Eigen::VectorXcd::Zero(i + 1);
  y(i) = 1.0;
  const Complex mu = t(i, i);
  const double floor = 1e-15 * std::max(1.0, std::abs(mu));
  for (int l = i - 1; l >= 0; --l) {
    Complex acc = 0.0;
    for (int p = l + 1; p <= i; ++p) acc += t(l, p) * y(p);
    Complex den = t(l, l) - mu;
    if (std::abs(den) < floor) den = floor;
    y(l) = -acc / den;
  }
  return y;
}

}  // namespace

void reorder_schur(Eigen::MatrixXcd& t, Eigen::MatrixXcd& q, int from, int to) {
  if (to > from || to < 0 || from >= t.rows())
    throw std::invalid_argument("reorder_schur: bad positions");
  for (int k = from - 1; k >= to; --k) swap_adjacent(t, q, k);
}

KrylovSchurResult krylov_schur_largest(const LinearOperator& op, const Eigen::VectorXcd& start,
                                       const KrylovSchurOptions& opts) {
  const auto n = start.size();
  const double start_norm = start.norm();
  if (n == 0 || !(start_norm > 0.0)) throw std::invalid_argument("krylov_schur: zero start vector");
  const int m = static_cast<int>(std::min<Eigen::Index>(opts.subspace, n));
  const int wanted = std::max(1, std::min(opts.wanted, m));

  std::mt19937_64 eng(0x5eedULL);
  Eigen::MatrixXcd v(n, m + 1);
  Eigen::MatrixXcd h = Eigen::MatrixXcd::Zero(m + 1, m);
  v.col(0) = start / start_norm;

  KrylovSchurResult res;
  Eigen::VectorXcd w(n);
  Eigen::MatrixXcd t, q;
  Eigen::RowVectorXcd b;
  std::vector<Eigen::VectorXcd> ys;

  // Schur form of the leading mm x mm section, sorted by magnitude, with
  // residual estimates of the wanted Ritz pairs.
  auto analyze = [&](int mm, bool exhausted) {
    Eigen::ComplexSchur<Eigen::MatrixXcd> schur(h.topLeftCorner(mm, mm));
    t = schur.matrixT();
    q = schur.matrixU();
    for (int i = 0; i < mm; ++i) {
      int best = i;
      for (int l = i + 1; l < mm; ++l)
        if (std::abs(t(l, l)) > std::abs(t(best, best))) best = l;
      if (best != i) reorder_schur(t, q, best, i);
    }
    b = h.row(mm).head(mm) * q;
    if (exhausted) b.setZero();
    const int nw = std::min(wanted, mm);
    res.values.assign(nw, 0.0);
    res.residual_estimates.assign(nw, 0.0);
    res.value_converged.assign(nw, false);
    ys.assign(nw, Eigen::VectorXcd());
    bool all = nw == wanted;
    for (int i = 0; i < nw; ++i) {
      ys[i] = triangular_eigenvector(t, i);
      const double est = std::abs(Complex((b.head(i + 1) * ys[i])(0))) / ys[i].norm();
      res.values[i] = t(i, i);
      res.residual_estimates[i] = est;
      res.value_converged[i] = est <= (i == 0 ? opts.tol : opts.secondary_tol) * std::abs(t(i, i));
      all = all && res.value_converged[i];
    }
    return all;
  };
  auto finish = [&](int mm, bool all) {
    res.converged = all;
    const int nw = static_cast<int>(res.values.size());
    res.vectors.resize(n, nw);
    for (int i = 0; i < nw; ++i) {
      Eigen::VectorXcd x = v.leftCols(mm) * (q.leftCols(i + 1) * ys[i]);
      res.vectors.col(i) = x / x.norm();
    }
    return res;
  };

  int k = 0;
  for (;;) {
    bool exhausted = false;
    int filled = m;
    for (int j = k; j < m; ++j) {
      op(v.col(j), w);
      ++res.applications;
      const double wnorm0 = w.norm();
      h.col(j).head(j + 1) = orthogonalize(v, j + 1, w);
      const double beta = w.norm();
      if (beta <= 1e-13 * std::max(wnorm0, 1e-300)) {
        // Invariant subspace reached. Continue with a fresh direction.
        for (int attempt = 0; attempt < 3 && w.norm() < 0.5; ++attempt) {
          for (Eigen::Index i = 0; i < n; ++i)
            w(i) = Complex(unit_uniform(eng) - 0.5, unit_uniform(eng) - 0.5);
          w /= w.norm();
          orthogonalize(v, j + 1, w);
        }
        if (w.norm() < 0.5) {
          exhausted = true;
          filled = j + 1;
          h(j + 1, j) = 0.0;
          break;
        }
        h(j + 1, j) = 0.0;
        v.col(j + 1) = w / w.norm();
      } else {
        h(j + 1, j) = beta;
        v.col(j + 1) = w / beta;
      }
      const int mm = j + 1;
      if (mm < m && mm >= wanted && (mm - k) % kCheckInterval == 0 && analyze(mm, false))
        return finish(mm, true);
    }

    const bool all = analyze(filled, exhausted);
    if (all || exhausted || res.restarts >= opts.max_restarts) return finish(filled, all);

    const int keep = std::min(m - 1, std::max(wanted + 1, (m + wanted) / 2));
    Eigen::MatrixXcd vk = v.leftCols(m) * q.leftCols(keep);
    v.leftCols(keep) = vk;
    v.col(keep) = v.col(m);
    h.setZero();
    h.topLeftCorner(keep, keep) = t.topLeftCorner(keep, keep);
    h.row(keep).head(keep) = b.head(keep);
    k = keep;
    ++res.restarts;
  }
}

}  // namespace ssetdyn
