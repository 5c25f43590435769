#pragma once

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ssetdyn/liouvillian.hpp"

namespace ssetdyn {

struct EigenSolverOptions {
  int krylov_dim = 40;
  int max_restarts = 60;
  double tol = 1e-14;              // Ritz residual relative to the inverted eigenvalue
  double shift_margin = 1e-4;      // distance of the shift above the bound on theta
  double degeneracy_tol = 1e-10;
  int polish_steps = 2;            // inverse-iteration sweeps on the final vector
};

struct SpectralResult {
  double theta = 0.0;
  double theta_imag = 0.0;
  Eigen::VectorXcd rho_right;  // normalized to unit trace
  double residual = 0.0;       // ||W r - theta r|| / ||r||
  int iterations = 0;          // Krylov restarts summed over stages
  int applications = 0;        // shifted solves
  bool converged = false;
  bool degenerate = false;
  std::optional<Complex> second;  // next eigenvalue, when resolved
  double shift = 0.0;
  std::string diagnostic;
};

// Shift-invert Krylov-Schur on (W - sigma)^-1. The shift is placed above a
// bound on theta, so theta is the eigenvalue nearest to it.
class LeadingEigenSolver {
 public:
  explicit LeadingEigenSolver(const SparseSuperoperator& op, EigenSolverOptions opts = {});
  ~LeadingEigenSolver();
  LeadingEigenSolver(const LeadingEigenSolver&) = delete;
  LeadingEigenSolver& operator=(const LeadingEigenSolver&) = delete;

  SpectralResult solve(std::span<const Complex> guess = {});

  // Left eigenvector u of the last solve, scaled so that u^H r = 1.
  Eigen::VectorXcd left_eigenvector(const SpectralResult& right);

 private:
  struct Factorization;
  void factorize(double sigma);

  const SparseSuperoperator& op_;
  EigenSolverOptions opts_;
  std::unique_ptr<Factorization> lu_;
  double sigma_ = 0.0;
};

// Upper bound on theta(s): the counted rate never exceeds r_max, so
// theta(s) <= r_max (exp(-s) - 1) for s < 0 and theta(s) <= 0 for s >= 0.
double theta_upper_bound(const SparseSuperoperator& op);

SpectralResult leading_eigenpair(const SparseSuperoperator& op, std::span<const Complex> guess = {},
                                 const EigenSolverOptions& opts = {});

enum class ActivityMethod { FiniteDifference, HellmannFeynman };

struct ActivityPoint {
  double s = 0.0;
  double k = 0.0;
  ActivityMethod method = ActivityMethod::FiniteDifference;
};

struct ActivityEstimate {
  ActivityPoint finite_difference;
  ActivityPoint hellmann_feynman;
  SpectralResult at_s;
  bool converged = false;
  bool consistent = false;  // |k_fd - k_hf| <= max(1e-6, 1e-3 k)
};

inline constexpr double kActivityStep = 1e-4;

// Central difference of theta with step kActivityStep, cross-checked by the
// Hellmann-Feynman expression.
ActivityEstimate activity(const ModelParams& params, const StateSpace& space, double s,
                          CountingChannel channel, const EigenSolverOptions& opts = {});

// k = exp(-s) <u|J|r> / <u|r>.
ActivityPoint activity_hellmann_feynman(const SparseSuperoperator& op, const Eigen::VectorXcd& right,
                                        const Eigen::VectorXcd& left);

struct NumberDistribution {
  std::vector<double> p;
  double mean_n = 0.0;
  int n_mp = 0;
  double min_p = 0.0;
  bool negative_mass = false;  // some P(n) < -1e-8
};

NumberDistribution number_distribution(const StateSpace& space, const Eigen::VectorXcd& rho);
NumberDistribution number_distribution(const SparseSuperoperator& op, const SpectralResult& res);

// Local maxima of P(n) whose height exceeds `rel_height` times the global maximum.
std::vector<int> distribution_peaks(const NumberDistribution& dist, double rel_height = 0.05);

struct TruncationReport {
  double tail_mass = 0.0;         // P(n) summed over n_max-5..n_max at s = 0
  bool tail_ok = true;
  double probe_s = 0.0;
  double theta = 0.0;             // at probe_s with the given band
  double theta_wider = 0.0;       // with the band widened by 4
  double band_sensitivity = 0.0;  // |theta_wider - theta|
  bool band_ok = true;
  bool converged = true;
  bool ok() const { return tail_ok && band_ok && converged; }
  std::string message;
};

inline constexpr double kTailMassLimit = 1e-6;
inline constexpr double kBandTolerance = 1e-6;  // relative to |theta|, floor 1e-10

// Fock and coherence-band truncation check for one parameter set. The band
// test is skipped when the band already covers the whole Fock range.
TruncationReport validate_truncation(const ModelParams& params, const StateSpace& space,
                                     double probe_s = 0.01, CountingChannel channel = CountingChannel::PhotonEmission,
                                     const EigenSolverOptions& opts = {});

}  // namespace ssetdyn
