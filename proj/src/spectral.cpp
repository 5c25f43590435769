#include "ssetdyn/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include <Eigen/SparseLU>

#include "ssetdyn/krylov_schur.hpp"

namespace ssetdyn {

using ColMatrix = Eigen::SparseMatrix<Complex, Eigen::ColMajor, int>;

struct LeadingEigenSolver::Factorization {
  Eigen::SparseLU<ColMatrix, Eigen::COLAMDOrdering<int>> lu;
};

namespace {

Eigen::VectorXcd default_start(const StateSpace& sp) {
  Eigen::VectorXcd v = trace_functional(sp);
  std::mt19937_64 eng(20240917ULL);
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const double x = double(eng() >> 11) * 0x1.0p-53;
    v(i) += 1e-3 * (x - 0.5);
  }
  return v;
}

}  // namespace

double theta_upper_bound(const SparseSuperoperator& op) {
  if (op.s() >= 0.0) return 0.0;
  const auto& p = op.params();
  const double r_max = op.channel() == CountingChannel::PhotonEmission
                           ? p.gamma_ext * op.space().n_max()
                           : p.gamma_qp;
  return r_max * std::expm1(-op.s());
}

LeadingEigenSolver::LeadingEigenSolver(const SparseSuperoperator& op, EigenSolverOptions opts)
    : op_(op), opts_(opts) {}

LeadingEigenSolver::~LeadingEigenSolver() = default;

void LeadingEigenSolver::factorize(double sigma) {
  const auto d = static_cast<int>(op_.dim());
  ColMatrix a = op_.matrix().cast<Complex>();
  ColMatrix shift(d, d);
  shift.setIdentity();
  a -= Complex(sigma, 0.0) * shift;
  a.makeCompressed();
  auto f = std::make_unique<Factorization>();
  f->lu.compute(a);
  if (f->lu.info() != Eigen::Success) {
    throw std::runtime_error("LeadingEigenSolver: factorization failed at shift " +
                             std::to_string(sigma) + ": " + f->lu.lastErrorMessage());
  }
  lu_ = std::move(f);
  sigma_ = sigma;
}

SpectralResult LeadingEigenSolver::solve(std::span<const Complex> guess) {
  const auto& sp = op_.space();
  const auto d = static_cast<Eigen::Index>(op_.dim());
  Eigen::VectorXcd start;
  if (static_cast<Eigen::Index>(guess.size()) == d && Eigen::Map<const Eigen::VectorXcd>(guess.data(), d).norm() > 0.0)
    start = Eigen::Map<const Eigen::VectorXcd>(guess.data(), d);
  else
    start = default_start(sp);

  SpectralResult out;
  const double bound = theta_upper_bound(op_);
  double sigma = bound + opts_.shift_margin;
  factorize(sigma);

  auto inverse = [this](const Eigen::VectorXcd& x, Eigen::VectorXcd& y) { y = lu_->lu.solve(x); };
  KrylovSchurOptions ks;
  ks.subspace = opts_.krylov_dim;
  ks.max_restarts = opts_.max_restarts;
  ks.wanted = 2;
  ks.tol = std::max(opts_.tol, 1e-8);
  ks.secondary_tol = 1e-6;

  auto first = krylov_schur_largest(inverse, start, ks);
  out.iterations += first.restarts;
  out.applications += first.applications;
  Complex lam = sigma + 1.0 / first.values[0];

  // Move the shift next to theta; the second pass then separates theta
  // from the rest of the spectrum.
  if (sigma - lam.real() > 4.0 * opts_.shift_margin) {
    sigma = lam.real() + opts_.shift_margin;
    factorize(sigma);
  }
  ks.tol = opts_.tol;
  ks.secondary_tol = 1e-8;
  auto second = krylov_schur_largest(inverse, first.vectors.col(0), ks);
  out.iterations += second.restarts;
  out.applications += second.applications;
  out.shift = sigma;

  lam = sigma + 1.0 / second.values[0];
  Eigen::VectorXcd r = second.vectors.col(0);
  for (int i = 0; i < opts_.polish_steps; ++i) {
    r = lu_->lu.solve(r);
    r /= r.norm();
  }
  ++out.applications;

  if (second.values.size() > 1) out.second = sigma + 1.0 / second.values[1];

  out.theta = lam.real();
  out.theta_imag = lam.imag();
  const Complex tr = trace(sp, std::span<const Complex>(r.data(), r.size()));
  if (std::abs(tr) > 1e-12 * r.norm()) {
    r /= tr;
  } else {
    Eigen::Index imax;
    r.cwiseAbs().maxCoeff(&imax);
    r *= std::abs(r(imax)) / r(imax);
  }
  Eigen::VectorXcd wr = op_.apply(r);
  out.residual = (wr - lam * r).norm() / r.norm();
  out.rho_right = std::move(r);

  out.converged = second.value_converged[0] && out.residual < 1e-8;
  if (out.second) out.degenerate = std::abs(out.theta - out.second->real()) < opts_.degeneracy_tol;

  std::ostringstream diag;
  if (!second.value_converged[0]) diag << "leading Ritz value not converged after " << second.restarts << " restarts; ";
  if (out.residual >= 1e-8) diag << "residual " << out.residual << " above 1e-8; ";
  if (std::abs(out.theta_imag) >= 1e-9) diag << "imaginary part " << out.theta_imag << "; ";
  if (out.degenerate) diag << "near-degenerate leading pair; ";
  if (out.theta > bound + 1e-9) diag << "theta above the rate bound; ";
  out.diagnostic = diag.str();
  return out;
}

Eigen::VectorXcd LeadingEigenSolver::left_eigenvector(const SpectralResult& right) {
  if (!lu_) throw std::logic_error("left_eigenvector: solve() has not been called");
  auto adjoint_inverse = [this](const Eigen::VectorXcd& x, Eigen::VectorXcd& y) {
    y = lu_->lu.adjoint().solve(x);
  };
  KrylovSchurOptions ks;
  ks.subspace = opts_.krylov_dim;
  ks.max_restarts = opts_.max_restarts;
  ks.wanted = 1;
  ks.tol = opts_.tol;
  auto res = krylov_schur_largest(adjoint_inverse, trace_functional(op_.space()), ks);
  Eigen::VectorXcd u = res.vectors.col(0);
  for (int i = 0; i < opts_.polish_steps; ++i) {
    u = lu_->lu.adjoint().solve(u);
    u /= u.norm();
  }
  const Complex c = u.dot(right.rho_right);
  u /= std::conj(c);
  return u;
}

SpectralResult leading_eigenpair(const SparseSuperoperator& op, std::span<const Complex> guess,
                                 const EigenSolverOptions& opts) {
  LeadingEigenSolver solver(op, opts);
  return solver.solve(guess);
}

ActivityPoint activity_hellmann_feynman(const SparseSuperoperator& op, const Eigen::VectorXcd& right,
                                        const Eigen::VectorXcd& left) {
  const Eigen::VectorXcd jr = op.counted_jumps() * right;
  const Complex num = left.dot(jr);
  const Complex den = left.dot(right);
  return {op.s(), std::exp(-op.s()) * (num / den).real(), ActivityMethod::HellmannFeynman};
}

ActivityEstimate activity(const ModelParams& params, const StateSpace& space, double s,
                          CountingChannel channel, const EigenSolverOptions& opts) {
  ActivityEstimate est;
  const auto op = assemble(params, space, s, channel);
  LeadingEigenSolver solver(op, opts);
  est.at_s = solver.solve();
  const Eigen::VectorXcd left = solver.left_eigenvector(est.at_s);
  est.hellmann_feynman = activity_hellmann_feynman(op, est.at_s.rho_right, left);

  const auto guess = std::span<const Complex>(est.at_s.rho_right.data(), est.at_s.rho_right.size());
  const auto plus = leading_eigenpair(assemble(params, space, s + kActivityStep, channel), guess, opts);
  const auto minus = leading_eigenpair(assemble(params, space, s - kActivityStep, channel), guess, opts);
  est.finite_difference = {s, -(plus.theta - minus.theta) / (2.0 * kActivityStep),
                           ActivityMethod::FiniteDifference};
  est.converged = est.at_s.converged && plus.converged && minus.converged;
  const double k = est.finite_difference.k;
  est.consistent = std::abs(k - est.hellmann_feynman.k) <= std::max(1e-6, 1e-3 * std::abs(k));
  return est;
}

NumberDistribution number_distribution(const StateSpace& sp, const Eigen::VectorXcd& rho) {
  if (static_cast<std::size_t>(rho.size()) != sp.dim())
    throw std::invalid_argument("number_distribution: dimension mismatch");
  NumberDistribution nd;
  nd.p.resize(static_cast<std::size_t>(sp.n_max()) + 1);
  double total = 0.0;
  for (int n = 0; n <= sp.n_max(); ++n) {
    const auto base = sp.pair_index(n, n) * kBlockCount;
    const double pn = (rho(base) + rho(base + 1) + rho(base + 2)).real();
    nd.p[n] = pn;
    total += pn;
  }
  for (auto& v : nd.p) v /= total;
  nd.min_p = *std::min_element(nd.p.begin(), nd.p.end());
  nd.negative_mass = nd.min_p < -1e-8;
  nd.n_mp = static_cast<int>(std::max_element(nd.p.begin(), nd.p.end()) - nd.p.begin());
  for (std::size_t n = 0; n < nd.p.size(); ++n) nd.mean_n += n * nd.p[n];
  return nd;
}

NumberDistribution number_distribution(const SparseSuperoperator& op, const SpectralResult& res) {
  return number_distribution(op.space(), res.rho_right);
}

std::vector<int> distribution_peaks(const NumberDistribution& dist, double rel_height) {
  const auto& p = dist.p;
  const int n = static_cast<int>(p.size());
  const double top = *std::max_element(p.begin(), p.end());
  std::vector<int> cand;
  for (int i = 0; i < n; ++i) {
    bool is_max = p[i] >= rel_height * top;
    for (int j = std::max(0, i - 2); j <= std::min(n - 1, i + 2) && is_max; ++j)
      if (j != i && p[j] > p[i]) is_max = false;
    if (is_max && (cand.empty() || i - cand.back() > 2)) cand.push_back(i);
  }
  // Merge maxima not separated by a real valley.
  std::vector<int> peaks;
  for (int c : cand) {
    if (!peaks.empty()) {
      const int a = peaks.back();
      const double valley = *std::min_element(p.begin() + a, p.begin() + c + 1);
      if (valley > 0.8 * std::min(p[a], p[c])) {
        if (p[c] > p[a]) peaks.back() = c;
        continue;
      }
    }
    peaks.push_back(c);
  }
  return peaks;
}

TruncationReport validate_truncation(const ModelParams& params, const StateSpace& space,
                                     double probe_s, CountingChannel channel,
                                     const EigenSolverOptions& opts) {
  TruncationReport rep;
  rep.probe_s = probe_s;
  std::ostringstream msg;

  const auto op0 = assemble(params, space, 0.0, channel);
  const auto r0 = leading_eigenpair(op0, {}, opts);
  const auto dist = number_distribution(space, r0.rho_right);
  const int n_max = space.n_max();
  for (int n = std::max(0, n_max - 5); n <= n_max; ++n) rep.tail_mass += dist.p[n];
  rep.tail_ok = rep.tail_mass <= kTailMassLimit;
  rep.converged = r0.converged;
  if (!rep.tail_ok) msg << "tail mass " << rep.tail_mass << " above " << kTailMassLimit << "; ";

  const auto op = assemble(params, space, probe_s, channel);
  const auto r = leading_eigenpair(op, std::span<const Complex>(r0.rho_right.data(), r0.rho_right.size()), opts);
  rep.theta = r.theta;
  rep.theta_wider = r.theta;
  rep.converged = rep.converged && r.converged;
  const int wider = std::min(space.m_max() + 4, n_max);
  if (wider > space.m_max()) {
    const auto sp2 = StateSpace::build(n_max, wider);
    const auto r2 = leading_eigenpair(assemble(params, sp2, probe_s, channel), {}, opts);
    rep.theta_wider = r2.theta;
    rep.converged = rep.converged && r2.converged;
  }
  rep.band_sensitivity = std::abs(rep.theta_wider - rep.theta);
  rep.band_ok = rep.band_sensitivity <= std::max(1e-10, kBandTolerance * std::abs(rep.theta));
  if (!rep.band_ok) msg << "theta moves by " << rep.band_sensitivity << " when the band grows to " << wider << "; ";
  if (!rep.converged) msg << "eigensolver did not converge; ";
  rep.message = msg.str();
  if (rep.message.empty()) rep.message = "ok";
  return rep;
}

}  // namespace ssetdyn
