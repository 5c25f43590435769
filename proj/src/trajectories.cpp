#include "ssetdyn/trajectories.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <istream>
#include <map>
#include <mutex>
#include <ostream>
#include <random>
#include <sstream>
#include <thread>

#include <unsupported/Eigen/MatrixFunctions>

#include "ssetdyn/fingerprint.hpp"

namespace ssetdyn {

namespace {

constexpr Complex kI{0.0, 1.0};

double uniform_open(std::mt19937_64& eng) {
  return (double(eng() >> 11) + 0.5) * 0x1.0p-53;
}

std::mt19937_64 keyed_engine(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32),
                    0x9e3779b9U};
  return std::mt19937_64(seq);
}

}  // namespace

const char* to_string(JumpChannel c) {
  switch (c) {
    case JumpChannel::Photon: return "photon";
    case JumpChannel::Qp21: return "qp21";
    case JumpChannel::Qp10: return "qp10";
  }
  return "?";
}

std::optional<JumpChannel> parse_jump_channel(std::string_view text) {
  if (text == "photon") return JumpChannel::Photon;
  if (text == "qp21") return JumpChannel::Qp21;
  if (text == "qp10") return JumpChannel::Qp10;
  return std::nullopt;
}

BasisOverflow::BasisOverflow(double t, double population)
    : std::runtime_error([&] {
        std::ostringstream os;
        os << "basis overflow: population " << population << " at the Fock cutoff at t=" << t;
        return os.str();
      }()),
      t_(t),
      population_(population) {}

// One charge sector: `slots` charge states times n_max+1 Fock states, index
// slot * (n_max+1) + n.
struct JumpSampler::Sector {
  int slots = 0;
  int fock = 0;
  std::vector<int> charges;
  Eigen::SparseMatrix<Complex, Eigen::RowMajor> heff;
  Eigen::VectorXd loss;  // diagonal of the anti-Hermitian part times -2
  std::vector<Eigen::MatrixXcd> steps;

  Eigen::Index dim() const { return static_cast<Eigen::Index>(slots) * fock; }

  // exp(-i heff dt) v by Taylor series; dt is small.
  Eigen::VectorXcd propagate(const Eigen::VectorXcd& v, double dt) const {
    Eigen::VectorXcd out = v;
    Eigen::VectorXcd term = v;
    const double vnorm = v.norm();
    for (int k = 1; k < 80; ++k) {
      term = (heff * term) * (-kI * dt / double(k));
      out += term;
      if (term.norm() <= 1e-17 * vnorm) break;
    }
    return out;
  }

  double loss_rate(const Eigen::VectorXcd& v) const {
    return (loss.array() * v.cwiseAbs2().array()).sum();
  }

  double mean_number(const Eigen::VectorXcd& v) const {
    double acc = 0.0;
    for (int sl = 0; sl < slots; ++sl)
      for (int n = 1; n < fock; ++n) acc += n * std::norm(v(sl * fock + n));
    return acc / v.squaredNorm();
  }

  double edge_population(const Eigen::VectorXcd& v) const {
    double acc = 0.0;
    for (int sl = 0; sl < slots; ++sl) acc += std::norm(v(sl * fock + fock - 1));
    return acc / v.squaredNorm();
  }

  double photon_rate(const Eigen::VectorXcd& v, double gamma_ext) const {
    double acc = 0.0;
    for (int sl = 0; sl < slots; ++sl)
      for (int n = 1; n < fock; ++n) acc += n * std::norm(v(sl * fock + n));
    return gamma_ext * acc;
  }

  static std::unique_ptr<Sector> build(const ModelParams& p, int n_max, std::vector<int> charges,
                                       const TrajectoryOptions& opts);
  double locate_crossing(const Eigen::VectorXcd& v, double r, double width, double tol) const;

  Eigen::VectorXcd lower(const Eigen::VectorXcd& v) const {
    Eigen::VectorXcd out = Eigen::VectorXcd::Zero(v.size());
    for (int sl = 0; sl < slots; ++sl)
      for (int n = 0; n + 1 < fock; ++n)
        out(sl * fock + n) = std::sqrt(double(n + 1)) * v(sl * fock + n + 1);
    return out;
  }
};

JumpSampler::JumpSampler(const ModelParams& params, int n_max, TrajectoryOptions opts)
    : params_(params), n_max_(n_max), opts_(opts) {
  if (n_max < 1) throw ParameterError("trajectory basis needs n_max >= 1");
  if (!(opts_.step > 0.0) || opts_.descent_levels < 1)
    throw ParameterError("trajectory step and descent levels must be positive");
  single_ = Sector::build(params_, n_max_, {1}, opts_);
  paired_ = Sector::build(params_, n_max_, {0, 2}, opts_);
}

JumpSampler::~JumpSampler() = default;

double JumpSampler::burn_in() const {
  return opts_.burn_in.value_or(20.0 / params_.gamma_ext);
}

std::unique_ptr<JumpSampler::Sector> JumpSampler::Sector::build(const ModelParams& p, int n_max,
                                                                std::vector<int> charges,
                                                                const TrajectoryOptions& opts) {
  auto sec = std::make_unique<Sector>();
  sec->slots = static_cast<int>(charges.size());
  sec->fock = n_max + 1;
  sec->charges = charges;
  const auto d = sec->dim();
  const int f = sec->fock;

  Eigen::MatrixXcd h = Eigen::MatrixXcd::Zero(d, d);
  sec->loss.resize(d);
  for (int sl = 0; sl < sec->slots; ++sl) {
    const int c = charges[sl];
    const double energy = c == 2 ? p.delta_e : 0.0;
    const double coupling = c * p.c1;
    const double decay = c == 0 ? 0.0 : p.gamma_qp;
    for (int n = 0; n < f; ++n) {
      const int i = sl * f + n;
      h(i, i) = p.omega * n + energy;
      sec->loss(i) = p.gamma_ext * n + decay;
      if (n + 1 < f) {
        const double amp = coupling * std::sqrt(double(n + 1));
        h(i, i + 1) = amp;
        h(i + 1, i) = amp;
      }
    }
  }
  if (sec->slots == 2) {
    for (int n = 0; n < f; ++n) {
      h(n, f + n) = -0.5 * p.e_j;
      h(f + n, n) = -0.5 * p.e_j;
    }
  }
  Eigen::MatrixXcd heff = h;
  for (Eigen::Index i = 0; i < d; ++i) heff(i, i) -= 0.5 * kI * sec->loss(i);
  sec->heff = heff.sparseView();
  sec->heff.makeCompressed();

  double dt = opts.step;
  for (int k = 0; k <= opts.descent_levels; ++k, dt *= 0.5) {
    Eigen::MatrixXcd gen = -kI * dt * heff;
    sec->steps.push_back(gen.exp());
  }
  return sec;
}

// Crossing of |v(t)|^2 = r inside [0, width], v(0) = v.
double JumpSampler::Sector::locate_crossing(const Eigen::VectorXcd& v, double r, double width,
                                            double tol) const {
  double a = 0.0, b = width;
  double fa = v.squaredNorm() - r;
  double fb = propagate(v, b).squaredNorm() - r;
  if (fb > 0.0) return b;
  if (fa <= 0.0) return a;
  double x = a + (b - a) * fa / (fa - fb);
  for (int it = 0; it < 200; ++it) {
    const Eigen::VectorXcd vx = propagate(v, x);
    const double fx = vx.squaredNorm() - r;
    if (fx > 0.0) {
      a = x;
    } else {
      b = x;
    }
    const double slope = -loss_rate(vx);
    double next = slope < 0.0 ? x - fx / slope : 0.5 * (a + b);
    if (!(next > a && next < b)) next = 0.5 * (a + b);
    if (std::abs(next - x) < tol || b - a < tol) return next;
    x = next;
  }
  return x;
}

TrajectoryRecord JumpSampler::sample(double t_max, std::uint64_t seed, std::uint64_t index) const {
  if (!(t_max > 0.0)) throw ParameterError("t_max must be positive");
  TrajectoryRecord rec;
  rec.seed = seed;
  rec.index = index;
  rec.t_max = t_max;
  rec.n_max = n_max_;
  rec.params_hash = fingerprint(params_);
  rec.burn_in = std::min(burn_in(), t_max);

  auto eng = keyed_engine(seed, index);
  const Sector* sec = paired_.get();
  Eigen::VectorXcd psi = Eigen::VectorXcd::Zero(sec->dim());
  psi(0) = 1.0;

  const double h = opts_.step;
  const int levels = opts_.descent_levels;
  const double width = std::ldexp(h, -levels);

  double t = 0.0;
  double threshold = uniform_open(eng);

  // Trapezoidal time average of <n> over (burn_in, t_max].
  double area = 0.0, prev_t = 0.0, prev_n = 0.0;
  auto observe = [&](double tn, double nn) {
    const double lo = std::max(prev_t, rec.burn_in), hi = std::min(tn, t_max);
    if (hi > lo && tn > prev_t) {
      auto at = [&](double x) { return prev_n + (nn - prev_n) * (x - prev_t) / (tn - prev_t); };
      area += 0.5 * (at(lo) + at(hi)) * (hi - lo);
    }
    prev_t = tn;
    prev_n = nn;
  };
  auto check_overflow = [&](const Eigen::VectorXcd& v, double tn) {
    const double edge = sec->edge_population(v);
    if (edge > opts_.overflow_threshold) throw BasisOverflow(tn, edge);
  };

  Eigen::VectorXcd next(psi.size());
  while (t < t_max) {
    next.resize(psi.size());
    next.noalias() = sec->steps[0] * psi;
    if (next.squaredNorm() > threshold) {
      psi.swap(next);
      t += h;
      observe(t, sec->mean_number(psi));
      check_overflow(psi, t);
      continue;
    }

    double tau = 0.0;
    double dt = h;
    for (int k = 1; k <= levels; ++k) {
      dt *= 0.5;
      next.noalias() = sec->steps[k] * psi;
      if (next.squaredNorm() > threshold) {
        psi.swap(next);
        tau += dt;
      }
    }
    const double delta = sec->locate_crossing(psi, threshold, width, opts_.time_tol);
    psi = sec->propagate(psi, delta);
    const double tj = t + tau + delta;
    observe(tj, sec->mean_number(psi));
    if (tj > t_max) break;

    const double photon = sec->photon_rate(psi, params_.gamma_ext);
    double charge = 0.0;
    const int decaying_slot = sec->slots == 2 ? 1 : 0;
    for (int n = 0; n < sec->fock; ++n) charge += std::norm(psi(decaying_slot * sec->fock + n));
    charge *= params_.gamma_qp;
    const double pick = uniform_open(eng) * (photon + charge);

    if (pick < photon) {
      psi = sec->lower(psi);
      rec.photon_jumps.push_back(tj);
    } else if (sec->slots == 2) {
      Eigen::VectorXcd out = psi.segment(sec->fock, sec->fock);
      sec = single_.get();
      psi = std::move(out);
      rec.qp_jumps.push_back({tj, JumpChannel::Qp21});
    } else {
      Eigen::VectorXcd out = Eigen::VectorXcd::Zero(paired_->dim());
      out.head(sec->fock) = psi;
      sec = paired_.get();
      psi = std::move(out);
      rec.qp_jumps.push_back({tj, JumpChannel::Qp10});
    }
    psi /= psi.norm();
    threshold = uniform_open(eng);
    t = tj;
    prev_n = sec->mean_number(psi);
    check_overflow(psi, t);
  }
  const double span = t_max - rec.burn_in;
  rec.mean_n = span > 0.0 ? area / span : 0.0;
  return rec;
}

TrajectoryRecord sample_trajectory(const ModelParams& params, int n_max, double t_max,
                                   std::uint64_t seed, std::uint64_t index,
                                   const TrajectoryOptions& opts) {
  JumpSampler sampler(params, n_max, opts);
  return sampler.sample(t_max, seed, index);
}

std::vector<TrajectoryRecord> sample_ensemble(const ModelParams& params, int n_max, double t_max,
                                              std::uint64_t seed, std::size_t count,
                                              unsigned workers, const TrajectoryOptions& opts) {
  JumpSampler sampler(params, n_max, opts);
  std::vector<TrajectoryRecord> out(count);
  std::vector<std::exception_ptr> errors(count);
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        out[i] = sampler.sample(t_max, seed, i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  workers = std::max(1U, std::min<unsigned>(workers, static_cast<unsigned>(count)));
  std::vector<std::thread> pool;
  for (unsigned w = 1; w < workers; ++w) pool.emplace_back(work);
  work();
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

double count_jumps(const TrajectoryRecord& rec, CountingChannel channel, double burn_in) {
  std::size_t k = 0;
  if (channel == CountingChannel::PhotonEmission) {
    for (double t : rec.photon_jumps) k += (t > burn_in && t <= rec.t_max) ? 1 : 0;
  } else {
    for (const auto& j : rec.qp_jumps) k += (j.t > burn_in && j.t <= rec.t_max) ? 1 : 0;
  }
  return static_cast<double>(k);
}

CountingStats counting_statistics_from_counts(std::vector<double> counts, double duration,
                                              std::span<const double> s_grid,
                                              CountingChannel channel) {
  const std::size_t r = counts.size();
  if (r < 2) throw std::invalid_argument("counting statistics need at least two samples");
  if (!(duration > 0.0)) throw std::invalid_argument("counting window must be positive");

  CountingStats st;
  st.channel = channel;
  st.duration = duration;
  st.counts = std::move(counts);
  const auto& k = st.counts;

  double mean = 0.0;
  for (double v : k) mean += v;
  mean /= double(r);
  double var = 0.0;
  for (double v : k) var += (v - mean) * (v - mean);
  var /= double(r - 1);
  st.k_hat = mean / duration;
  st.k_stderr = std::sqrt(var / double(r)) / duration;
  st.variance_rate = var / duration;
  st.fano = mean > 0.0 ? var / mean : 0.0;

  std::vector<double> x(r), loo(r);
  for (double s : s_grid) {
    ThetaSample ts;
    ts.s = s;
    if (s == 0.0) {
      ts.ess = double(r);
      ts.activity = st.k_hat;
      st.theta_hat.push_back(ts);
      continue;
    }
    double xmax = -INFINITY;
    for (std::size_t i = 0; i < r; ++i) {
      x[i] = -s * k[i];
      xmax = std::max(xmax, x[i]);
    }
    double sum = 0.0, sum2 = 0.0, sumk = 0.0;
    for (std::size_t i = 0; i < r; ++i) {
      const double w = std::exp(x[i] - xmax);
      sum += w;
      sum2 += w * w;
      sumk += w * k[i];
    }
    ts.activity = sumk / sum / duration;
    ts.theta = (xmax + std::log(sum / double(r))) / duration;
    ts.ess = sum * sum / sum2;

    double loo_mean = 0.0;
    for (std::size_t i = 0; i < r; ++i) {
      double rest = sum - std::exp(x[i] - xmax);
      if (rest < 1e-8 * sum) {
        rest = 0.0;
        for (std::size_t j = 0; j < r; ++j)
          if (j != i) rest += std::exp(x[j] - xmax);
      }
      loo[i] = (xmax + std::log(rest / double(r - 1))) / duration;
      loo_mean += loo[i];
    }
    loo_mean /= double(r);
    double jk = 0.0;
    for (double v : loo) jk += (v - loo_mean) * (v - loo_mean);
    ts.error = std::sqrt(jk * double(r - 1) / double(r));

    ts.masked = ts.ess < kMinEffectiveSamples || std::abs(s) * mean > kMaxTiltedCount;
    if (ts.masked) {
      std::ostringstream os;
      os << "s=" << s << " masked (effective samples " << ts.ess << ", |s|K " << std::abs(s) * mean
         << ")";
      st.warnings.push_back(os.str());
    }
    st.theta_hat.push_back(ts);
  }
  return st;
}

CountingStats counting_statistics(std::span<const TrajectoryRecord> records, CountingChannel channel,
                                  double burn_in, std::span<const double> s_grid) {
  if (records.size() < 10) throw std::invalid_argument("counting statistics need at least 10 records");
  const double t_max = records.front().t_max;
  for (const auto& rec : records)
    if (rec.t_max != t_max) throw std::invalid_argument("records have different t_max");
  if (!(burn_in >= 0.0) || !(burn_in < 0.5 * t_max))
    throw std::invalid_argument("burn_in must lie in [0, t_max/2)");

  std::vector<double> counts;
  counts.reserve(records.size());
  for (const auto& rec : records) counts.push_back(count_jumps(rec, channel, burn_in));
  auto st = counting_statistics_from_counts(std::move(counts), t_max - burn_in, s_grid, channel);

  double m = 0.0, m2 = 0.0;
  for (const auto& rec : records) m += rec.mean_n;
  m /= double(records.size());
  for (const auto& rec : records) m2 += (rec.mean_n - m) * (rec.mean_n - m);
  st.mean_n = m;
  st.mean_n_stderr = std::sqrt(m2 / double(records.size() - 1) / double(records.size()));
  if (t_max < 100.0 / 0.0005 && records.front().burn_in > 0.0 && burn_in < records.front().burn_in)
    st.warnings.push_back("burn-in shorter than the sampler's averaging window");
  return st;
}

LegendreReport legendre_check(const CountingStats& stats,
                              std::span<const std::pair<double, double>> spectral_theta,
                              double bin_width) {
  LegendreReport rep;
  const double t = stats.duration;

  std::vector<ThetaSample> good;
  for (const auto& ts : stats.theta_hat)
    if (!ts.masked) good.push_back(ts);
  std::sort(good.begin(), good.end(), [](const auto& a, const auto& b) { return a.s < b.s; });

  double scale = 0.0;
  for (const auto& g : good) scale = std::max(scale, std::abs(g.theta));
  for (std::size_t i = 1; i + 1 < good.size(); ++i) {
    const auto &a = good[i - 1], &m = good[i], &b = good[i + 1];
    const double chord = ((b.s - m.s) * a.theta + (m.s - a.s) * b.theta) / (b.s - a.s);
    rep.max_convexity_violation = std::max(rep.max_convexity_violation, m.theta - chord);
  }
  rep.convex = rep.max_convexity_violation <= 1e-12 * (1.0 + scale);

  // Histogram of K/T. Default bins hold one count each.
  if (!(bin_width > 0.0)) bin_width = 1.0 / t;
  std::map<long long, std::size_t> hist;
  for (double k : stats.counts) hist[std::llround(k / t / bin_width)]++;
  const double total = double(stats.counts.size());
  for (const auto& [bin, count] : hist) {
    RatePoint rp;
    rp.k = bin * bin_width;
    rp.samples = count;
    rp.phi = -std::log(double(count) / total) / t;
    rp.phi_stderr = 1.0 / (t * std::sqrt(double(count)));
    rep.rate_function.push_back(rp);
  }
  for (const auto& g : good) {
    double best = -INFINITY;
    for (const auto& rp : rep.rate_function) best = std::max(best, -g.s * rp.k - rp.phi);
    rep.max_legendre_deviation = std::max(rep.max_legendre_deviation, std::abs(best - g.theta));
  }

  if (!spectral_theta.empty()) {
    double dev = 0.0, z = 0.0;
    for (const auto& [s, th] : spectral_theta) {
      for (const auto& g : good) {
        if (std::abs(g.s - s) > 1e-9) continue;
        ++rep.compared_points;
        dev = std::max(dev, std::abs(g.theta - th));
        if (g.error > 0.0) z = std::max(z, std::abs(g.theta - th) / g.error);
      }
    }
    rep.max_spectral_deviation = dev;
    rep.max_spectral_z = z;
  }
  return rep;
}

void write_records(std::ostream& os, std::span<const TrajectoryRecord> records) {
  char buf[64];
  os << "# sset trajectory records v1\n";
  if (!records.empty()) {
    const auto& r0 = records.front();
    os << "# params " << hex_digest(r0.params_hash) << "\n";
    os << "# seed " << r0.seed << "\n";
    std::snprintf(buf, sizeof buf, "%.17g", r0.t_max);
    os << "# t_max " << buf << "\n";
    os << "# n_max " << r0.n_max << "\n";
  }
  for (const auto& rec : records) {
    std::snprintf(buf, sizeof buf, "%.17g", rec.mean_n);
    os << "# trajectory=" << rec.index << " mean_n=" << buf;
    std::snprintf(buf, sizeof buf, "%.17g", rec.burn_in);
    os << " burn_in=" << buf << "\n";
    std::vector<std::pair<double, JumpChannel>> all;
    all.reserve(rec.photon_jumps.size() + rec.qp_jumps.size());
    for (double t : rec.photon_jumps) all.emplace_back(t, JumpChannel::Photon);
    for (const auto& q : rec.qp_jumps) all.emplace_back(q.t, q.type);
    std::stable_sort(all.begin(), all.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    for (const auto& [t, c] : all) {
      std::snprintf(buf, sizeof buf, "%.17g", t);
      os << to_string(c) << ',' << buf << '\n';
    }
  }
}

std::vector<TrajectoryRecord> read_records(std::istream& is) {
  std::vector<TrajectoryRecord> out;
  TrajectoryRecord header;
  std::string line;
  int lineno = 0;
  auto fail = [&](const std::string& why) {
    throw std::runtime_error("read_records: line " + std::to_string(lineno) + ": " + why);
  };
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream ls(line.substr(1));
      std::string key;
      ls >> key;
      if (key == "params") {
        std::string hex;
        ls >> hex;
        header.params_hash = std::stoull(hex, nullptr, 16);
      } else if (key == "seed") {
        ls >> header.seed;
      } else if (key == "t_max") {
        ls >> header.t_max;
      } else if (key == "n_max") {
        ls >> header.n_max;
      } else if (key.rfind("trajectory=", 0) == 0) {
        TrajectoryRecord rec = header;
        rec.photon_jumps.clear();
        rec.qp_jumps.clear();
        rec.index = std::stoull(key.substr(11));
        std::string field;
        while (ls >> field) {
          if (field.rfind("mean_n=", 0) == 0) rec.mean_n = std::stod(field.substr(7));
          if (field.rfind("burn_in=", 0) == 0) rec.burn_in = std::stod(field.substr(8));
        }
        out.push_back(std::move(rec));
      }
      continue;
    }
    if (out.empty()) fail("jump line before any trajectory separator");
    const auto comma = line.find(',');
    if (comma == std::string::npos) fail("expected 'channel,time'");
    const auto ch = parse_jump_channel(std::string_view(line).substr(0, comma));
    if (!ch) fail("unknown channel");
    const double t = std::stod(line.substr(comma + 1));
    if (*ch == JumpChannel::Photon)
      out.back().photon_jumps.push_back(t);
    else
      out.back().qp_jumps.push_back({t, *ch});
  }
  return out;
}

}  // namespace ssetdyn
