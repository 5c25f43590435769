#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "ssetdyn/liouvillian.hpp"
#include "ssetdyn/model.hpp"

namespace ssetdyn {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Engine { Spectral, MeanField, Trajectory };
enum class Observable { Theta, Activity, NMean, NMp, PN, LimitCycles };

const char* to_string(Engine e);
const char* to_string(Observable o);

struct AxisSpec {
  std::string name;  // lambda, s or delta_e_over_homega
  double min = 0.0;
  double max = 0.0;
  int count = 0;
  double value(int i) const { return min + (max - min) * i / (count - 1); }
};

struct TrajectorySettings {
  double t_max = 1e5;
  int count = 200;
  std::optional<double> burn_in;  // 20 / gamma_ext when absent
};

struct SweepConfig {
  PaperParams params;
  double s = 0.0;  // used when s is not an axis
  std::vector<AxisSpec> grid;
  CountingChannel channel = CountingChannel::PhotonEmission;
  Engine engine = Engine::Spectral;
  std::optional<int> n_max;  // nullopt means "auto"
  std::optional<int> m_max;
  std::vector<Observable> observables;  // canonical order
  std::uint64_t seed = 1;
  unsigned workers = 0;  // 0: environment or hardware default
  std::string out_path;
  TrajectorySettings trajectory;
  nlohmann::json source;  // parsed document, echoed into dataset headers

  // Axes in evaluation order; the last one varies fastest and is s when s is
  // an axis.
  std::vector<AxisSpec> ordered_axes() const;
  std::size_t row_count() const;
  // Parameters and counting field at one row.
  PaperParams point_params(std::size_t row) const;
  double point_s(std::size_t row) const;
};

// Throws ConfigError on any schema violation.
SweepConfig parse_config(const nlohmann::json& doc);
SweepConfig load_config(const std::string& path);

struct BasisChoice {
  int n_max = 0;
  int m_max = 0;
  double largest_cycle = 0.0;  // mean-field n used by the auto rule, 0 if unused
};

// "auto" n_max: 1.5 x the largest mean-field cycle over the grid, floor 60, cap 220.
BasisChoice resolve_basis(const SweepConfig& cfg);

struct SweepRow {
  std::size_t index = 0;
  std::vector<double> axes;
  double theta = NAN;
  double activity = NAN;
  double n_mean = NAN;
  double n_mp = NAN;
  std::vector<double> p_n;
  std::string limit_cycles;
  double residual = NAN;
  int iterations = 0;
  bool converged = false;
};

// Evaluates one line of the grid: all rows sharing the outer axis value(s).
// Eigensolves along the line are warm-started. Point failures become
// unconverged rows.
std::vector<SweepRow> evaluate_line(const SweepConfig& cfg, const BasisChoice& basis, std::size_t line);
std::size_t line_count(const SweepConfig& cfg);
std::size_t line_length(const SweepConfig& cfg);

std::vector<std::string> dataset_columns(const SweepConfig& cfg);
std::string format_row(const SweepConfig& cfg, const SweepRow& row);
std::vector<std::string> dataset_header(const SweepConfig& cfg, const BasisChoice& basis);

struct RunOptions {
  unsigned workers = 1;
  bool resume = false;
  std::function<void(std::size_t done, std::size_t total)> progress;
};

struct RunSummary {
  std::size_t rows = 0;
  std::size_t computed = 0;
  std::size_t reused = 0;
  std::size_t unconverged = 0;
  BasisChoice basis;
  int exit_code() const { return unconverged > 0 ? 3 : 0; }
};

// Writes rows to cfg.out_path as lines complete, then rewrites the file in
// grid order. With resume, complete lines already in the file are kept
// verbatim.
RunSummary run_sweep(const SweepConfig& cfg, const RunOptions& opts);

unsigned default_workers();  // SSET_SWEEP_WORKERS, else hardware concurrency

struct Dataset {
  std::vector<std::string> header;   // '#' lines without the marker
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;
  int column(const std::string& name) const;  // -1 if absent
  double number(std::size_t row, int col) const;
};

Dataset read_dataset(const std::string& path);
Dataset read_dataset(std::istream& is);

// Convexity and monotonicity of theta along s on converged rows. Returns one
// message per violation.
std::vector<std::string> check_theta_shape(const Dataset& data, double tol = 1e-9);

enum class PlotStyle { Heatmap, Cuts };

// Writes <data>.<style>.gp and <data>.<style>.dat; returns the script path.
std::string emit_plots(const std::string& data_path, PlotStyle style);

struct EngineComparison {
  std::vector<double> s_values;
  std::vector<double> spectral_boundary;   // lambda at max |dk/dlambda| per s
  std::vector<double> meanfield_boundary;
  double max_abs_difference = 0.0;
  std::string table;  // CSV: axes, k_spectral, k_meanfield, difference
};

// Runs both engines on the grid of cfg (which must contain a lambda axis)
// and compares activities.
EngineComparison compare_engines(const SweepConfig& cfg, unsigned workers);
EngineComparison compare_activity(const SweepConfig& cfg, const std::vector<SweepRow>& spectral,
                                  const std::vector<SweepRow>& meanfield);

// Rows of every line computed in memory, in grid order.
std::vector<SweepRow> evaluate_grid(const SweepConfig& cfg, const BasisChoice& basis, unsigned workers);

}  // namespace ssetdyn
