#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "ssetdyn/liouvillian.hpp"

namespace ssetdyn {

enum class JumpChannel : std::uint8_t { Photon, Qp21, Qp10 };

const char* to_string(JumpChannel c);
std::optional<JumpChannel> parse_jump_channel(std::string_view text);

struct QpJump {
  double t;
  JumpChannel type;
};

struct TrajectoryRecord {
  std::uint64_t seed = 0;
  std::uint64_t index = 0;
  double t_max = 0.0;
  int n_max = 0;
  std::uint64_t params_hash = 0;
  std::vector<double> photon_jumps;
  std::vector<QpJump> qp_jumps;
  // Time average of <n> over (burn_in, t_max].
  double burn_in = 0.0;
  double mean_n = 0.0;
};

struct TrajectoryOptions {
  double step = 4.0;           // macro step of the exact propagator
  int descent_levels = 10;     // halvings used to bracket a jump
  double time_tol = 1e-12;     // jump-time resolution
  double overflow_threshold = 1e-6;
  std::optional<double> burn_in;  // defaults to 20 / gamma_ext
};

class BasisOverflow : public std::runtime_error {
 public:
  BasisOverflow(double t, double population);
  double time() const { return t_; }
  double population() const { return population_; }

 private:
  double t_;
  double population_;
};

// Waiting-time unraveling of the s = 0 master equation. The effective
// Hamiltonian never mixes charge 1 with charges {0, 2}, so the state always
// lives in one of two sectors with their own propagators.
class JumpSampler {
 public:
  JumpSampler(const ModelParams& params, int n_max, TrajectoryOptions opts = {});
  ~JumpSampler();
  JumpSampler(const JumpSampler&) = delete;
  JumpSampler& operator=(const JumpSampler&) = delete;

  // Starts from vacuum with island charge 0. Deterministic for fixed
  // (seed, index). Throws BasisOverflow.
  TrajectoryRecord sample(double t_max, std::uint64_t seed, std::uint64_t index = 0) const;

  int n_max() const { return n_max_; }
  double burn_in() const;
  const ModelParams& params() const { return params_; }

 private:
  struct Sector;
  ModelParams params_;
  int n_max_;
  TrajectoryOptions opts_;
  std::unique_ptr<Sector> single_;  // charge 1
  std::unique_ptr<Sector> paired_;  // charges 0 and 2
};

TrajectoryRecord sample_trajectory(const ModelParams& params, int n_max, double t_max,
                                   std::uint64_t seed, std::uint64_t index = 0,
                                   const TrajectoryOptions& opts = {});

// Trajectories 0..count-1 on `workers` threads; output order is by index.
std::vector<TrajectoryRecord> sample_ensemble(const ModelParams& params, int n_max, double t_max,
                                              std::uint64_t seed, std::size_t count,
                                              unsigned workers, const TrajectoryOptions& opts = {});

// Jumps counted on a channel inside (burn_in, t_max].
double count_jumps(const TrajectoryRecord& rec, CountingChannel channel, double burn_in);

struct ThetaSample {
  double s = 0.0;
  double theta = 0.0;
  double error = 0.0;     // jackknife standard error
  double activity = 0.0;  // reweighted mean of K / T
  double ess = 0.0;       // effective sample size of the exp(-sK) weights
  bool masked = false;
};

struct CountingStats {
  CountingChannel channel = CountingChannel::PhotonEmission;
  double duration = 0.0;  // T = t_max - burn_in
  std::vector<double> counts;
  double k_hat = 0.0;
  double k_stderr = 0.0;
  double variance_rate = 0.0;
  double fano = 0.0;
  double mean_n = 0.0;  // ensemble mean of per-trajectory time averages
  double mean_n_stderr = 0.0;
  std::vector<ThetaSample> theta_hat;
  std::vector<std::string> warnings;
};

inline constexpr double kMinEffectiveSamples = 10.0;
inline constexpr double kMaxTiltedCount = 30.0;

// Throws std::invalid_argument when fewer than 10 records are supplied or
// burn_in >= t_max / 2.
CountingStats counting_statistics(std::span<const TrajectoryRecord> records, CountingChannel channel,
                                  double burn_in, std::span<const double> s_grid);

// Same estimators for raw counts over windows of length T.
CountingStats counting_statistics_from_counts(std::vector<double> counts, double duration,
                                              std::span<const double> s_grid,
                                              CountingChannel channel = CountingChannel::PhotonEmission);

struct RatePoint {
  double k = 0.0;
  double phi = 0.0;
  double phi_stderr = 0.0;
  std::size_t samples = 0;
};

struct LegendreReport {
  bool convex = true;
  double max_convexity_violation = 0.0;  // largest excess of theta_hat over a chord
  double max_legendre_deviation = 0.0;   // |theta from the rate function - theta_hat|
  std::optional<double> max_spectral_deviation;  // |theta_hat - spectral|
  std::optional<double> max_spectral_z;          // same in stderr units
  std::size_t compared_points = 0;
  std::vector<RatePoint> rate_function;
};

// Empirical rate function from histogrammed K/T, convexity of theta_hat on
// its unmasked points, and an optional comparison with spectral theta(s)
// given as (s, theta) pairs.
LegendreReport legendre_check(const CountingStats& stats,
                              std::span<const std::pair<double, double>> spectral_theta = {},
                              double bin_width = 0.0);

// Record export: '#' header lines, a '# trajectory=<i>' separator per record,
// then one 'channel,time' line per jump in time order.
void write_records(std::ostream& os, std::span<const TrajectoryRecord> records);
std::vector<TrajectoryRecord> read_records(std::istream& is);

}  // namespace ssetdyn
