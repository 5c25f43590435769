// sweep: batch front-end for grids over (lambda, s) or (delta_e_over_homega, s).
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"

#include "ssetdyn/fingerprint.hpp"
#include "ssetdyn/sweep.hpp"

using namespace ssetdyn;

namespace {

constexpr int kExitConfig = 2;

void report(const RunSummary& s, const std::string& path) {
  std::fprintf(stderr, "%zu rows (%zu computed, %zu reused), %zu unconverged, n_max=%d m_max=%d -> %s\n", s.rows,
               s.computed, s.reused, s.unconverged, s.basis.n_max, s.basis.m_max, path.c_str());
}

RunOptions run_options(unsigned workers, bool resume) {
  RunOptions opts;
  opts.workers = workers;
  opts.resume = resume;
  opts.progress = [](std::size_t done, std::size_t total) {
    std::fprintf(stderr, "\r%zu/%zu", done, total);
    if (done == total) std::fputc('\n', stderr);
  };
  return opts;
}

unsigned pick_workers(unsigned flag, const SweepConfig& cfg) {
  if (flag > 0) return flag;
  if (cfg.workers > 0) return cfg.workers;
  return default_workers();
}

int run(const std::string& path, unsigned workers, bool resume, bool trajectories) {
  auto cfg = load_config(path);
  if (trajectories && cfg.engine != Engine::Trajectory) {
    auto doc = cfg.source;
    doc["engine"] = "trajectory";
    cfg = parse_config(doc);
  }
  const auto summary = run_sweep(cfg, run_options(pick_workers(workers, cfg), resume));
  report(summary, cfg.out_path);
  return summary.exit_code();
}

int plot(const std::string& data, const std::string& style) {
  const auto script = emit_plots(data, style == "heatmap" ? PlotStyle::Heatmap : PlotStyle::Cuts);
  std::cout << script << "\n";
  return 0;
}

int compare(const std::string& path, unsigned workers) {
  const auto cfg = load_config(path);
  const auto cmp = compare_engines(cfg, pick_workers(workers, cfg));
  const std::string table = cfg.out_path + ".compare.csv";
  std::ofstream(table) << cmp.table;

  double spacing = 0.0;
  for (const auto& a : cfg.grid)
    if (a.name == "lambda") spacing = (a.max - a.min) / (a.count - 1);
  bool close = true;
  std::cout << "s,lambda_spectral,lambda_meanfield\n";
  for (std::size_t i = 0; i < cmp.s_values.size(); ++i) {
    std::cout << format_number(cmp.s_values[i]) << ',' << format_number(cmp.spectral_boundary[i]) << ','
              << format_number(cmp.meanfield_boundary[i]) << '\n';
    const double gap = std::abs(cmp.spectral_boundary[i] - cmp.meanfield_boundary[i]);
    close = close && gap <= 2.0 * spacing;
  }
  std::cout << "max |k_spectral - k_meanfield| = " << format_number(cmp.max_abs_difference) << "\n";
  std::cout << "boundary agreement: " << (close ? "close (within two lambda steps)" : "qualitative only") << "\n";
  std::cerr << "difference table -> " << table << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Parameter sweeps of the counting statistics of an SSET-resonator system"};
  app.require_subcommand(1);

  std::string config, data, style = "heatmap";
  unsigned workers = 0;
  bool resume = false;

  auto* run_cmd = app.add_subcommand("run", "evaluate a grid and write a CSV dataset");
  run_cmd->add_option("--config", config, "JSON configuration")->required()->check(CLI::ExistingFile);
  run_cmd->add_option("--workers", workers, "worker threads (default: config, then SSET_SWEEP_WORKERS)");
  run_cmd->add_flag("--resume", resume, "keep complete lines already present in the output");

  auto* traj_cmd = app.add_subcommand("traj", "like run, with the trajectory engine");
  traj_cmd->add_option("--config", config, "JSON configuration")->required()->check(CLI::ExistingFile);
  traj_cmd->add_option("--workers", workers, "worker threads");
  traj_cmd->add_flag("--resume", resume, "keep complete lines already present in the output");

  auto* plot_cmd = app.add_subcommand("plot", "write a gnuplot script for a dataset");
  plot_cmd->add_option("--data", data, "CSV dataset")->required()->check(CLI::ExistingFile);
  plot_cmd->add_option("--style", style, "heatmap or cuts")->check(CLI::IsMember({"heatmap", "cuts"}));

  auto* cmp_cmd = app.add_subcommand("compare", "spectral against mean-field activity on one grid");
  cmp_cmd->add_option("--config", config, "JSON configuration")->required()->check(CLI::ExistingFile);
  cmp_cmd->add_option("--workers", workers, "worker threads");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*run_cmd) return run(config, workers, resume, false);
    if (*traj_cmd) return run(config, workers, resume, true);
    if (*plot_cmd) return plot(data, style);
    if (*cmp_cmd) return compare(config, workers);
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
