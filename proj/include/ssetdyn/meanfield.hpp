#pragma once

#include <complex>
#include <optional>
#include <vector>

#include "ssetdyn/model.hpp"

namespace ssetdyn {

// Steady upper-charge population of the decoupled three-level island,
// E_J^2 / (4 dE^2 + 3 E_J^2 + Gamma^2). p11 equals p22 in that state.
double steady_upper_charge(const ModelParams& p);

// Mean displacement x_fp / x_s = -(p11 + 2 p22) = -3 p22.
double fixed_point_displacement(const ModelParams& p);

// Detuning seen by the 0-2 coherence once the resonator sits at x_fp.
double shifted_detuning(const ModelParams& p, double x_fp_ratio);

// psi^k = (-i E_J / 2) / (i (k omega - shifted dE) + Gamma / 2), k = lo..hi.
std::vector<std::complex<double>> psi_coefficients(const ModelParams& p, double x_fp_ratio, int lo,
                                                   int hi);

// Bessel argument z = 4 c1 sqrt(n) / omega for occupation n.
double bessel_argument(const ModelParams& p, double n);

// Plot coordinate lambda A / x_s = sqrt(n omega / pi) and its inverse.
double amplitude_coordinate(const ModelParams& p, double n);
double occupation_from_coordinate(const ModelParams& p, double u);

// Series truncation M = ceil(z) + 25 + ceil(5 z^(1/3)); keeps |J_M(z)| below 1e-12
// for large z, where ceil(z) + 25 alone does not.
int bessel_cutoff(double z);

struct DampingOptions {
  std::optional<double> x_fp_ratio;  // defaults to fixed_point_displacement
};

// SSET damping rate of the resonator energy at occupation n. Negative values
// mean the island pumps the resonator; limit cycles satisfy
// gamma_ext + gamma_sset(n) = 0. At n = 0 the analytic small-amplitude limit
// is returned.
double gamma_sset(const ModelParams& p, double n, const DampingOptions& opts = {});

// Diagnostics of one series evaluation.
struct SeriesCheck {
  double z = 0.0;
  int cutoff = 0;
  double tail = 0.0;        // |J_M(z)|
  double unit_sum = 0.0;    // sum_m J_m(z)^2, should be 1
};
SeriesCheck bessel_series_check(double z);

struct DampingSample {
  double u;
  double gamma_sset;
};

struct DampingCurve {
  std::vector<DampingSample> samples;
  ModelParams params;
  double x_fp_ratio = 0.0;
};

DampingCurve damping_curve(const ModelParams& p, double u_max, int points,
                           const DampingOptions& opts = {});

struct CycleRoot {
  double n;
  bool stable;
};

struct LimitCycleSet {
  std::vector<CycleRoot> roots;  // n > 0, ascending
  bool includes_fixed_point = false;  // n = 0 is stable
  double u_max = 0.0;                 // end of the scanned window
  double n_cap = 0.0;                 // occupation at u_max

  int stable_count() const;  // including the fixed point
  std::vector<double> stable_occupations() const;  // fixed point reported as 0
};

inline constexpr int kRootScanPoints = 2000;

// Roots of gamma_ext + gamma_sset(n) = 0 by sign-change scan and bisection.
LimitCycleSet limit_cycles(const ModelParams& p, const DampingOptions& opts = {});

// Effective variational objective at fixed driving rate g:
// 2 exp(-s/2) sqrt(n (n+1) gamma_ext g) - gamma_ext n - g (n+1).
double variational_objective(double n, double s, double gamma_ext, double g);
// Same quantity written as a negative square plus an s-dependent term.
double variational_objective_square_form(double n, double s, double gamma_ext, double g);

struct VariationalCandidate {
  double n;
  double w;
};

struct VariationalResult {
  double s = 0.0;
  double theta_mf = 0.0;
  double n_star = 0.0;
  double k_mf = 0.0;  // -d theta / ds at the optimum
  std::vector<VariationalCandidate> candidates;  // local maxima, ascending in n
};

// Caches the damping samples of one parameter set so that many s values can
// be evaluated cheaply.
class MeanFieldModel {
 public:
  explicit MeanFieldModel(const ModelParams& p, const DampingOptions& opts = {});

  const ModelParams& params() const { return params_; }
  double x_fp_ratio() const { return x_fp_; }
  double gamma_sset(double n) const;
  double drive_rate(double n) const;  // g(n) = max(-gamma_sset, 0)
  const LimitCycleSet& cycles() const { return cycles_; }

  VariationalResult variational(double s) const;

 private:
  double objective(double n, double s) const;

  ModelParams params_;
  double x_fp_;
  LimitCycleSet cycles_;
  std::vector<double> grid_n_;
  std::vector<double> grid_g_;
};

VariationalResult variational_theta(const ModelParams& p, double s);

// Stable cycle favoured by a small counting field: smallest for ds > 0, largest for
// ds < 0. Throws std::invalid_argument for ds == 0 or an empty set.
double branch_selection(const LimitCycleSet& cycles, double ds);

}  // namespace ssetdyn
