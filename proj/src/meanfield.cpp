#include "ssetdyn/meanfield.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace ssetdyn {

namespace {

using cd = std::complex<double>;

// Energy-rate normalization: the amplitude decays as exp(-(gamma/2) t) when
// the energy decays at rate gamma.
constexpr double kEnergyRate = 2.0;

// Coarse window used to find the outermost root.
constexpr double kScanOccupation = 4000.0;
constexpr int kCoarsePoints = 400;

// J_0 .. J_{count-1}(z).
std::vector<double> bessel_table(double z, int count) {
  std::vector<double> j(static_cast<std::size_t>(count));
  for (int m = 0; m < count; ++m) j[m] = std::cyl_bessel_j(double(m), z);
  return j;
}

double bessel_signed(const std::vector<double>& j, int m) {
  if (m >= 0) return j[m];
  return (m % 2 == 0) ? j[-m] : -j[-m];
}

cd psi(const ModelParams& p, double detuning, int k) {
  return cd(0.0, -0.5 * p.e_j) / cd(0.5 * p.gamma_qp, k * p.omega - detuning);
}

// beta / z, finite as z -> 0.
cd beta_over_z(const ModelParams& p, double detuning, double z) {
  if (z < 1e-6) {
    const cd sum = psi(p, detuning, 0) + std::conj(psi(p, detuning, 0)) -
                   std::conj(psi(p, detuning, -1)) - psi(p, detuning, 1);
    return sum / cd(0.0, 4.0);
  }
  const int cutoff = bessel_cutoff(z);
  const auto j = bessel_table(z, cutoff + 2);
  cd sum = 0.0;
  for (int m = -cutoff; m <= cutoff; ++m) {
    const cd ps = psi(p, detuning, -m);
    sum += (ps * bessel_signed(j, m + 1) - std::conj(ps) * bessel_signed(j, m - 1)) *
           bessel_signed(j, m);
  }
  return sum / cd(0.0, 2.0) / z;
}

double damping(const ModelParams& p, double x_fp_ratio, double n) {
  if (p.c1 == 0.0 || p.e_j == 0.0) return 0.0;
  const double z = bessel_argument(p, std::max(n, 0.0));
  const double detuning = shifted_detuning(p, x_fp_ratio);
  const cd g1(p.gamma_qp, p.omega);
  const cd filter = 2.0 / g1 + p.gamma_qp / (g1 * g1);
  const cd charge = -p.e_j * filter * beta_over_z(p, detuning, z);
  return kEnergyRate * (4.0 * p.c1 * p.c1 / p.omega) * charge.imag();
}

template <class F>
double golden_max(F&& f, double a, double b, double tol, double& fbest) {
  const double r = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = b - r * (b - a), d = a + r * (b - a);
  double fc = f(c), fd = f(d);
  while (b - a > tol) {
    if (fc >= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - r * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + r * (b - a);
      fd = f(d);
    }
  }
  const double x = 0.5 * (a + b);
  fbest = f(x);
  if (fc > fbest) {
    fbest = fc;
    return c;
  }
  return x;
}

struct Scan {
  LimitCycleSet cycles;
  std::vector<double> n;
  std::vector<double> gamma;
};

Scan scan(const ModelParams& p, double x_fp_ratio) {
  Scan out;
  auto f = [&](double n) { return p.gamma_ext + damping(p, x_fp_ratio, n); };

  // Outermost place where the island still out-pumps the loss, or where it
  // pumps at all when it never wins.
  const double u_hi = amplitude_coordinate(p, kScanOccupation);
  double u_last_root = 0.0, u_last_pump = 0.0;
  double f_prev = f(0.0);
  for (int i = 1; i <= kCoarsePoints; ++i) {
    const double u = u_hi * i / kCoarsePoints;
    const double fv = f(occupation_from_coordinate(p, u));
    if ((fv < 0.0) != (f_prev < 0.0)) u_last_root = u;
    if (fv - p.gamma_ext < 0.0) u_last_pump = u;
    f_prev = fv;
  }
  double u_max = u_last_root > 0.0 ? u_last_root : u_last_pump;
  if (u_max <= 0.0) u_max = amplitude_coordinate(p, 10.0);
  u_max = std::min(1.2 * u_max + u_hi / kCoarsePoints, u_hi);

  out.cycles.u_max = u_max;
  out.cycles.n_cap = occupation_from_coordinate(p, u_max);
  out.n.resize(kRootScanPoints + 1);
  out.gamma.resize(kRootScanPoints + 1);
  for (int i = 0; i <= kRootScanPoints; ++i) {
    const double n = occupation_from_coordinate(p, u_max * i / kRootScanPoints);
    out.n[i] = n;
    out.gamma[i] = damping(p, x_fp_ratio, n);
  }

  out.cycles.includes_fixed_point = p.gamma_ext + out.gamma[0] > 0.0;
  for (int i = 0; i < kRootScanPoints; ++i) {
    const double fa = p.gamma_ext + out.gamma[i];
    const double fb = p.gamma_ext + out.gamma[i + 1];
    if ((fa < 0.0) == (fb < 0.0)) continue;
    double a = out.n[i], b = out.n[i + 1];
    double fl = fa;
    while (b - a > 1e-4 * 0.5) {
      const double mid = 0.5 * (a + b);
      const double fm = f(mid);
      if ((fm < 0.0) == (fl < 0.0)) {
        a = mid;
        fl = fm;
      } else {
        b = mid;
      }
    }
    out.cycles.roots.push_back({0.5 * (a + b), fa < 0.0});
  }
  return out;
}

}  // namespace

double steady_upper_charge(const ModelParams& p) {
  const double ej2 = p.e_j * p.e_j;
  return ej2 / (4.0 * p.delta_e * p.delta_e + 3.0 * ej2 + p.gamma_qp * p.gamma_qp);
}

double fixed_point_displacement(const ModelParams& p) { return -3.0 * steady_upper_charge(p); }

double shifted_detuning(const ModelParams& p, double x_fp_ratio) {
  return p.delta_e + 4.0 * std::numbers::pi * p.lambda * p.lambda * x_fp_ratio;
}

std::vector<std::complex<double>> psi_coefficients(const ModelParams& p, double x_fp_ratio, int lo,
                                                   int hi) {
  if (hi < lo) throw std::invalid_argument("psi_coefficients: empty range");
  const double detuning = shifted_detuning(p, x_fp_ratio);
  std::vector<std::complex<double>> out;
  out.reserve(static_cast<std::size_t>(hi - lo + 1));
  for (int k = lo; k <= hi; ++k) out.push_back(psi(p, detuning, k));
  return out;
}

double bessel_argument(const ModelParams& p, double n) {
  return 4.0 * p.c1 * std::sqrt(n) / p.omega;
}

double amplitude_coordinate(const ModelParams& p, double n) {
  return std::sqrt(n * p.omega / std::numbers::pi);
}

double occupation_from_coordinate(const ModelParams& p, double u) {
  return std::numbers::pi * u * u / p.omega;
}

int bessel_cutoff(double z) {
  return static_cast<int>(std::ceil(z)) + 25 + static_cast<int>(std::ceil(5.0 * std::cbrt(z)));
}

SeriesCheck bessel_series_check(double z) {
  SeriesCheck c;
  c.z = z;
  c.cutoff = bessel_cutoff(z);
  const auto j = bessel_table(z, c.cutoff + 1);
  c.tail = std::abs(j[c.cutoff]);
  double sum = j[0] * j[0];
  for (int m = 1; m <= c.cutoff; ++m) sum += 2.0 * j[m] * j[m];
  c.unit_sum = sum;
  return c;
}

double gamma_sset(const ModelParams& p, double n, const DampingOptions& opts) {
  if (n < 0.0) throw std::invalid_argument("gamma_sset: negative occupation");
  return damping(p, opts.x_fp_ratio.value_or(fixed_point_displacement(p)), n);
}

DampingCurve damping_curve(const ModelParams& p, double u_max, int points,
                           const DampingOptions& opts) {
  if (points < 2 || !(u_max > 0.0)) throw std::invalid_argument("damping_curve: bad grid");
  DampingCurve c;
  c.params = p;
  c.x_fp_ratio = opts.x_fp_ratio.value_or(fixed_point_displacement(p));
  c.samples.reserve(static_cast<std::size_t>(points));
  for (int i = 0; i < points; ++i) {
    const double u = u_max * i / (points - 1);
    c.samples.push_back({u, damping(p, c.x_fp_ratio, occupation_from_coordinate(p, u))});
  }
  return c;
}

int LimitCycleSet::stable_count() const {
  int c = includes_fixed_point ? 1 : 0;
  for (const auto& r : roots) c += r.stable ? 1 : 0;
  return c;
}

std::vector<double> LimitCycleSet::stable_occupations() const {
  std::vector<double> out;
  if (includes_fixed_point) out.push_back(0.0);
  for (const auto& r : roots)
    if (r.stable) out.push_back(r.n);
  return out;
}

LimitCycleSet limit_cycles(const ModelParams& p, const DampingOptions& opts) {
  return scan(p, opts.x_fp_ratio.value_or(fixed_point_displacement(p))).cycles;
}

double variational_objective(double n, double s, double gamma_ext, double g) {
  return 2.0 * std::exp(-0.5 * s) * std::sqrt(n * (n + 1.0) * gamma_ext * g) - gamma_ext * n -
         g * (n + 1.0);
}

double variational_objective_square_form(double n, double s, double gamma_ext, double g) {
  const double diff = std::sqrt(gamma_ext * n) - std::sqrt(g * (n + 1.0));
  return -diff * diff + 2.0 * std::expm1(-0.5 * s) * std::sqrt(n * (n + 1.0) * gamma_ext * g);
}

MeanFieldModel::MeanFieldModel(const ModelParams& p, const DampingOptions& opts)
    : params_(p), x_fp_(opts.x_fp_ratio.value_or(fixed_point_displacement(p))) {
  auto sc = scan(p, x_fp_);
  cycles_ = std::move(sc.cycles);
  grid_n_ = std::move(sc.n);
  grid_g_.resize(sc.gamma.size());
  for (std::size_t i = 0; i < sc.gamma.size(); ++i) grid_g_[i] = std::max(-sc.gamma[i], 0.0);
}

double MeanFieldModel::gamma_sset(double n) const { return damping(params_, x_fp_, n); }

double MeanFieldModel::drive_rate(double n) const { return std::max(-gamma_sset(n), 0.0); }

double MeanFieldModel::objective(double n, double s) const {
  return variational_objective(n, s, params_.gamma_ext, drive_rate(n));
}

VariationalResult MeanFieldModel::variational(double s) const {
  VariationalResult res;
  res.s = s;
  const auto count = grid_n_.size();
  std::vector<double> w(count);
  for (std::size_t i = 0; i < count; ++i)
    w[i] = variational_objective(grid_n_[i], s, params_.gamma_ext, grid_g_[i]);

  for (std::size_t i = 0; i < count; ++i) {
    const bool left_ok = i == 0 || w[i] >= w[i - 1];
    const bool right_ok = i + 1 == count || w[i] > w[i + 1];
    if (!left_ok || !right_ok) continue;
    const double a = grid_n_[i == 0 ? 0 : i - 1];
    const double b = grid_n_[i + 1 == count ? i : i + 1];
    VariationalCandidate c{grid_n_[i], w[i]};
    if (b > a) {
      double best;
      const double x = golden_max([&](double n) { return objective(n, s); }, a, b,
                                  1e-10 * std::max(1.0, b), best);
      if (best >= c.w) c = {x, best};
    }
    res.candidates.push_back(c);
  }

  res.theta_mf = -INFINITY;
  for (const auto& c : res.candidates) {
    if (c.w > res.theta_mf + 1e-13) {
      res.theta_mf = c.w;
      res.n_star = c.n;
    }
  }
  const double g = drive_rate(res.n_star);
  res.k_mf = std::exp(-0.5 * s) *
             std::sqrt(res.n_star * (res.n_star + 1.0) * params_.gamma_ext * g);
  return res;
}

VariationalResult variational_theta(const ModelParams& p, double s) {
  return MeanFieldModel(p).variational(s);
}

double branch_selection(const LimitCycleSet& cycles, double ds) {
  if (ds == 0.0) throw std::invalid_argument("branch_selection: ds must be non-zero");
  const auto stable = cycles.stable_occupations();
  if (stable.empty()) throw std::invalid_argument("branch_selection: no stable solution");
  return ds > 0.0 ? stable.front() : stable.back();
}

}  // namespace ssetdyn
