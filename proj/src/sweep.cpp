#include "ssetdyn/sweep.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <numbers>
#include <set>
#include <sstream>
#include <thread>

#include "ssetdyn/fingerprint.hpp"
#include "ssetdyn/meanfield.hpp"
#include "ssetdyn/spectral.hpp"
#include "ssetdyn/trajectories.hpp"

#ifndef SSETDYN_VERSION
#define SSETDYN_VERSION "dev"
#endif

namespace ssetdyn {

using nlohmann::json;

namespace {

constexpr int kAutoFloor = 60;
constexpr int kAutoCap = 220;
constexpr double kAutoFactor = 1.5;
constexpr int kDefaultBand = 30;

const std::vector<std::pair<Observable, const char*>>& observable_names() {
  static const std::vector<std::pair<Observable, const char*>> names = {
      {Observable::Theta, "theta"},   {Observable::Activity, "activity"},
      {Observable::NMean, "n_mean"},  {Observable::NMp, "n_mp"},
      {Observable::PN, "p_n"},        {Observable::LimitCycles, "limit_cycles"}};
  return names;
}

bool wants(const SweepConfig& cfg, Observable o) {
  return std::find(cfg.observables.begin(), cfg.observables.end(), o) != cfg.observables.end();
}

double require_number(const json& j, const std::string& where) {
  if (!j.is_number()) throw ConfigError(where + " must be a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) throw ConfigError(where + " must be finite");
  return v;
}

long long require_integer(const json& j, const std::string& where) {
  if (!j.is_number_integer()) throw ConfigError(where + " must be an integer");
  return j.get<long long>();
}

void reject_unknown(const json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || it.key() == a;
    if (!ok) throw ConfigError("unknown key '" + it.key() + "' in " + where);
  }
}

std::optional<int> parse_size(const json& j, const std::string& where) {
  if (j.is_string()) {
    if (j.get<std::string>() == "auto") return std::nullopt;
    throw ConfigError(where + " must be an integer or \"auto\"");
  }
  const auto v = require_integer(j, where);
  if (v < 0 || v > 1000) throw ConfigError(where + " out of range");
  return static_cast<int>(v);
}

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  return format_number(v);
}

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

std::string describe_cycles(const LimitCycleSet& set) {
  std::string out;
  auto add = [&](double n, bool stable) {
    if (!out.empty()) out += ';';
    out += format_number(n) + (stable ? ":S" : ":U");
  };
  if (set.includes_fixed_point) add(0.0, true);
  for (const auto& r : set.roots) add(r.n, r.stable);
  return out;
}

}  // namespace

const char* to_string(Engine e) {
  switch (e) {
    case Engine::Spectral: return "spectral";
    case Engine::MeanField: return "meanfield";
    case Engine::Trajectory: return "trajectory";
  }
  return "?";
}

const char* to_string(Observable o) {
  for (const auto& [obs, name] : observable_names())
    if (obs == o) return name;
  return "?";
}

std::vector<AxisSpec> SweepConfig::ordered_axes() const {
  std::vector<AxisSpec> out;
  for (const auto& a : grid)
    if (a.name != "s") out.push_back(a);
  for (const auto& a : grid)
    if (a.name == "s") out.push_back(a);
  return out;
}

std::size_t SweepConfig::row_count() const {
  std::size_t n = 1;
  for (const auto& a : grid) n *= static_cast<std::size_t>(a.count);
  return n;
}

namespace {

std::vector<int> decompose(const SweepConfig& cfg, std::size_t row) {
  const auto axes = cfg.ordered_axes();
  std::vector<int> idx(axes.size());
  for (std::size_t k = axes.size(); k-- > 0;) {
    idx[k] = static_cast<int>(row % axes[k].count);
    row /= axes[k].count;
  }
  return idx;
}

std::vector<double> axis_values(const SweepConfig& cfg, std::size_t row) {
  const auto axes = cfg.ordered_axes();
  const auto idx = decompose(cfg, row);
  std::vector<double> v(axes.size());
  for (std::size_t k = 0; k < axes.size(); ++k) v[k] = axes[k].value(idx[k]);
  return v;
}

}  // namespace

PaperParams SweepConfig::point_params(std::size_t row) const {
  PaperParams p = params;
  const auto axes = ordered_axes();
  const auto v = axis_values(*this, row);
  for (std::size_t k = 0; k < axes.size(); ++k) {
    if (axes[k].name == "lambda") p.lambda = v[k];
    if (axes[k].name == "delta_e_over_homega")
      p.de_ratio = v[k] * p.omega_ratio / (2.0 * std::numbers::pi);
  }
  return p;
}

double SweepConfig::point_s(std::size_t row) const {
  const auto axes = ordered_axes();
  const auto v = axis_values(*this, row);
  for (std::size_t k = 0; k < axes.size(); ++k)
    if (axes[k].name == "s") return v[k];
  return s;
}

SweepConfig parse_config(const json& doc) {
  if (!doc.is_object()) throw ConfigError("configuration must be a JSON object");
  reject_unknown(doc,
                 {"comment", "params", "s", "grid", "channel", "engine", "n_max", "m_max", "observables",
                  "seed", "workers", "out_path", "trajectory"},
                 "configuration");
  SweepConfig cfg;
  cfg.source = doc;

  if (doc.contains("params")) {
    const auto& p = doc.at("params");
    if (!p.is_object()) throw ConfigError("params must be an object");
    reject_unknown(p, {"ej_ratio", "de_ratio", "omega_ratio", "gamma_ext_ratio", "lambda"}, "params");
    if (p.contains("ej_ratio")) cfg.params.ej_ratio = require_number(p.at("ej_ratio"), "params.ej_ratio");
    if (p.contains("de_ratio")) cfg.params.de_ratio = require_number(p.at("de_ratio"), "params.de_ratio");
    if (p.contains("omega_ratio")) cfg.params.omega_ratio = require_number(p.at("omega_ratio"), "params.omega_ratio");
    if (p.contains("gamma_ext_ratio"))
      cfg.params.gamma_ext_ratio = require_number(p.at("gamma_ext_ratio"), "params.gamma_ext_ratio");
    if (p.contains("lambda")) cfg.params.lambda = require_number(p.at("lambda"), "params.lambda");
  }
  try {
    reduce(cfg.params);
  } catch (const ParameterError& e) {
    throw ConfigError(std::string("params: ") + e.what());
  }

  if (doc.contains("s")) cfg.s = require_number(doc.at("s"), "s");

  if (!doc.contains("grid") || !doc.at("grid").is_array()) throw ConfigError("grid must be an array of axes");
  std::set<std::string> names;
  for (const auto& a : doc.at("grid")) {
    if (!a.is_object()) throw ConfigError("grid entries must be objects");
    reject_unknown(a, {"name", "min", "max", "count"}, "grid axis");
    AxisSpec ax;
    if (!a.contains("name") || !a.at("name").is_string()) throw ConfigError("grid axis needs a name");
    ax.name = a.at("name").get<std::string>();
    if (ax.name != "lambda" && ax.name != "s" && ax.name != "delta_e_over_homega")
      throw ConfigError("unknown axis '" + ax.name + "'");
    if (!names.insert(ax.name).second) throw ConfigError("axis '" + ax.name + "' repeated");
    for (const char* key : {"min", "max", "count"})
      if (!a.contains(key)) throw ConfigError("axis '" + ax.name + "' lacks " + key);
    ax.min = require_number(a.at("min"), ax.name + ".min");
    ax.max = require_number(a.at("max"), ax.name + ".max");
    const auto count = require_integer(a.at("count"), ax.name + ".count");
    if (count < 2 || count > 100000) throw ConfigError("axis '" + ax.name + "' count must be at least 2");
    ax.count = static_cast<int>(count);
    if (!(ax.min < ax.max)) throw ConfigError("axis '" + ax.name + "' needs min < max");
    if (ax.name == "lambda" && (ax.min < 0.0 || ax.max >= 0.5))
      throw ConfigError("lambda axis must lie in [0, 0.5)");
    if (ax.name == "s" && (std::abs(ax.min) > kMaxCountingField || std::abs(ax.max) > kMaxCountingField))
      throw ConfigError("s axis exceeds the counting-field guard");
    cfg.grid.push_back(ax);
  }
  if (cfg.grid.empty() || cfg.grid.size() > 2) throw ConfigError("grid needs one or two axes");
  if (std::abs(cfg.s) > kMaxCountingField) throw ConfigError("s exceeds the counting-field guard");

  if (doc.contains("channel")) {
    if (!doc.at("channel").is_string()) throw ConfigError("channel must be a string");
    auto ch = parse_channel(doc.at("channel").get<std::string>());
    if (!ch) throw ConfigError("channel must be photon or quasiparticle");
    cfg.channel = *ch;
  }
  if (doc.contains("engine")) {
    const auto& e = doc.at("engine");
    const std::string name = e.is_string() ? e.get<std::string>() : "";
    if (name == "spectral") cfg.engine = Engine::Spectral;
    else if (name == "meanfield") cfg.engine = Engine::MeanField;
    else if (name == "trajectory") cfg.engine = Engine::Trajectory;
    else throw ConfigError("engine must be spectral, meanfield or trajectory");
  }
  if (doc.contains("n_max")) cfg.n_max = parse_size(doc.at("n_max"), "n_max");
  if (doc.contains("m_max")) cfg.m_max = parse_size(doc.at("m_max"), "m_max");
  if (cfg.n_max && *cfg.n_max < 1) throw ConfigError("n_max must be at least 1");
  if (cfg.n_max && cfg.m_max && *cfg.m_max > *cfg.n_max) throw ConfigError("m_max must not exceed n_max");

  std::set<Observable> obs;
  if (doc.contains("observables")) {
    if (!doc.at("observables").is_array()) throw ConfigError("observables must be an array");
    for (const auto& o : doc.at("observables")) {
      if (!o.is_string()) throw ConfigError("observables must be strings");
      bool found = false;
      for (const auto& [id, name] : observable_names()) {
        if (o.get<std::string>() == name) {
          obs.insert(id);
          found = true;
        }
      }
      if (!found) throw ConfigError("unknown observable '" + o.get<std::string>() + "'");
    }
  } else {
    obs = {Observable::Theta, Observable::Activity};
  }
  if (obs.empty()) throw ConfigError("observables must not be empty");
  for (const auto& [id, name] : observable_names())
    if (obs.count(id)) cfg.observables.push_back(id);

  if (doc.contains("seed")) {
    const auto v = require_integer(doc.at("seed"), "seed");
    if (v < 0) throw ConfigError("seed must be non-negative");
    cfg.seed = static_cast<std::uint64_t>(v);
  }
  if (doc.contains("workers")) {
    const auto v = require_integer(doc.at("workers"), "workers");
    if (v < 0 || v > 1024) throw ConfigError("workers out of range");
    cfg.workers = static_cast<unsigned>(v);
  }
  if (!doc.contains("out_path") || !doc.at("out_path").is_string() || doc.at("out_path").get<std::string>().empty())
    throw ConfigError("out_path must be a non-empty string");
  cfg.out_path = doc.at("out_path").get<std::string>();

  if (doc.contains("trajectory")) {
    const auto& t = doc.at("trajectory");
    if (!t.is_object()) throw ConfigError("trajectory must be an object");
    reject_unknown(t, {"t_max", "count", "burn_in"}, "trajectory");
    if (t.contains("t_max")) cfg.trajectory.t_max = require_number(t.at("t_max"), "trajectory.t_max");
    if (t.contains("count")) {
      const auto c = require_integer(t.at("count"), "trajectory.count");
      if (c < 10 || c > 1000000) throw ConfigError("trajectory.count must be at least 10");
      cfg.trajectory.count = static_cast<int>(c);
    }
    if (t.contains("burn_in") && !t.at("burn_in").is_null())
      cfg.trajectory.burn_in = require_number(t.at("burn_in"), "trajectory.burn_in");
  }

  const auto reduced = reduce(cfg.params);
  switch (cfg.engine) {
    case Engine::Spectral:
      break;
    case Engine::MeanField:
      if (cfg.channel != CountingChannel::PhotonEmission)
        throw ConfigError("the meanfield engine only counts photons");
      if (wants(cfg, Observable::PN)) throw ConfigError("p_n is not available from the meanfield engine");
      break;
    case Engine::Trajectory: {
      if (wants(cfg, Observable::PN) || wants(cfg, Observable::NMp))
        throw ConfigError("p_n and n_mp are not available from the trajectory engine");
      if (!(cfg.trajectory.t_max > 0.0)) throw ConfigError("trajectory.t_max must be positive");
      const double burn = cfg.trajectory.burn_in.value_or(20.0 / reduced.gamma_ext);
      if (!(burn >= 0.0) || !(burn < 0.5 * cfg.trajectory.t_max))
        throw ConfigError("trajectory burn-in must lie in [0, t_max/2)");
      break;
    }
  }
  return cfg;
}

SweepConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open configuration '" + path + "'");
  json doc;
  try {
    doc = json::parse(in, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("configuration is not valid JSON: ") + e.what());
  }
  return parse_config(doc);
}

BasisChoice resolve_basis(const SweepConfig& cfg) {
  BasisChoice b;
  if (cfg.n_max) {
    b.n_max = *cfg.n_max;
  } else {
    // One mean-field scan per distinct parameter set along the non-s axes.
    std::set<std::pair<double, double>> seen;
    const std::size_t stride = line_length(cfg);
    for (std::size_t row = 0; row < cfg.row_count(); row += stride) {
      const auto pp = cfg.point_params(row);
      if (!seen.insert({pp.lambda, pp.de_ratio}).second) continue;
      for (const auto& r : limit_cycles(reduce(pp)).roots) b.largest_cycle = std::max(b.largest_cycle, r.n);
    }
    b.n_max = std::clamp(static_cast<int>(std::ceil(kAutoFactor * b.largest_cycle)), kAutoFloor, kAutoCap);
  }
  b.m_max = std::min(cfg.m_max.value_or(kDefaultBand), b.n_max);
  return b;
}

std::size_t line_length(const SweepConfig& cfg) {
  return static_cast<std::size_t>(cfg.ordered_axes().back().count);
}

std::size_t line_count(const SweepConfig& cfg) { return cfg.row_count() / line_length(cfg); }

std::vector<SweepRow> evaluate_line(const SweepConfig& cfg, const BasisChoice& basis, std::size_t line) {
  const std::size_t len = line_length(cfg);
  std::vector<SweepRow> rows(len);
  for (std::size_t i = 0; i < len; ++i) {
    rows[i].index = line * len + i;
    rows[i].axes = axis_values(cfg, rows[i].index);
  }

  // Mean-field cycles are cheap and shared by every engine.
  std::optional<std::pair<double, double>> mf_key;
  std::optional<MeanFieldModel> mf;
  auto meanfield = [&](const PaperParams& pp) -> const MeanFieldModel& {
    if (!mf_key || mf_key->first != pp.lambda || mf_key->second != pp.de_ratio) {
      mf.emplace(reduce(pp));
      mf_key = {pp.lambda, pp.de_ratio};
    }
    return *mf;
  };

  switch (cfg.engine) {
    case Engine::Spectral: {
      const auto space = StateSpace::build(basis.n_max, basis.m_max);
      Eigen::VectorXcd guess;
      for (auto& row : rows) {
        const auto pp = cfg.point_params(row.index);
        try {
          const auto op = assemble(reduce(pp), space, cfg.point_s(row.index), cfg.channel);
          LeadingEigenSolver solver(op);
          const auto res = solver.solve(std::span<const Complex>(guess.data(), guess.size()));
          row.theta = res.theta;
          row.residual = res.residual;
          row.iterations = res.applications;
          row.converged = res.converged;
          guess = res.converged ? res.rho_right : Eigen::VectorXcd();
          if (wants(cfg, Observable::Activity)) {
            const auto u = solver.left_eigenvector(res);
            row.activity = activity_hellmann_feynman(op, res.rho_right, u).k;
          }
          if (wants(cfg, Observable::NMean) || wants(cfg, Observable::NMp) || wants(cfg, Observable::PN)) {
            const auto dist = number_distribution(space, res.rho_right);
            row.n_mean = dist.mean_n;
            row.n_mp = dist.n_mp;
            if (wants(cfg, Observable::PN)) row.p_n = dist.p;
            if (dist.negative_mass) row.converged = false;
          }
        } catch (const std::exception&) {
          row.converged = false;
          guess = Eigen::VectorXcd();
        }
        if (wants(cfg, Observable::LimitCycles)) row.limit_cycles = describe_cycles(meanfield(pp).cycles());
      }
      break;
    }
    case Engine::MeanField: {
      for (auto& row : rows) {
        const auto pp = cfg.point_params(row.index);
        const auto& model = meanfield(pp);
        const auto v = model.variational(cfg.point_s(row.index));
        row.theta = v.theta_mf;
        row.activity = v.k_mf;
        row.n_mean = v.n_star;
        row.n_mp = std::round(v.n_star);
        row.residual = 0.0;
        row.iterations = 0;
        row.converged = std::isfinite(v.theta_mf);
        if (wants(cfg, Observable::LimitCycles)) row.limit_cycles = describe_cycles(model.cycles());
      }
      break;
    }
    case Engine::Trajectory: {
      // Rows of a line that share parameters reuse one ensemble.
      std::size_t i = 0;
      while (i < len) {
        const auto pp = cfg.point_params(rows[i].index);
        std::size_t j = i;
        std::vector<double> svals;
        while (j < len) {
          const auto q = cfg.point_params(rows[j].index);
          if (q.lambda != pp.lambda || q.de_ratio != pp.de_ratio) break;
          svals.push_back(cfg.point_s(rows[j].index));
          ++j;
        }
        const auto params = reduce(pp);
        TrajectoryOptions topts;
        topts.burn_in = cfg.trajectory.burn_in;
        try {
          const auto seed = cfg.seed ^ (0x9e3779b97f4a7c15ULL * (rows[i].index + 1));
          const auto recs = sample_ensemble(params, basis.n_max, cfg.trajectory.t_max, seed,
                                            static_cast<std::size_t>(cfg.trajectory.count), 1, topts);
          const double burn = cfg.trajectory.burn_in.value_or(20.0 / params.gamma_ext);
          const auto st = counting_statistics(recs, cfg.channel, burn, svals);
          for (std::size_t k = i; k < j; ++k) {
            const auto& ts = st.theta_hat[k - i];
            rows[k].theta = ts.theta;
            rows[k].activity = ts.activity;
            rows[k].n_mean = st.mean_n;
            rows[k].residual = ts.error;
            rows[k].iterations = cfg.trajectory.count;
            rows[k].converged = !ts.masked;
          }
        } catch (const std::exception&) {
          for (std::size_t k = i; k < j; ++k) rows[k].converged = false;
        }
        if (wants(cfg, Observable::LimitCycles)) {
          const auto text = describe_cycles(meanfield(pp).cycles());
          for (std::size_t k = i; k < j; ++k) rows[k].limit_cycles = text;
        }
        i = j;
      }
      break;
    }
  }
  return rows;
}

std::vector<std::string> dataset_columns(const SweepConfig& cfg) {
  std::vector<std::string> cols;
  for (const auto& a : cfg.ordered_axes()) cols.push_back(a.name);
  for (auto o : cfg.observables) cols.push_back(to_string(o));
  cols.insert(cols.end(), {"residual", "iterations", "converged"});
  return cols;
}

std::string format_row(const SweepConfig& cfg, const SweepRow& row) {
  std::string out;
  for (double v : row.axes) out += fmt(v) + ',';
  for (auto o : cfg.observables) {
    switch (o) {
      case Observable::Theta: out += fmt(row.theta); break;
      case Observable::Activity: out += fmt(row.activity); break;
      case Observable::NMean: out += fmt(row.n_mean); break;
      case Observable::NMp: out += fmt(row.n_mp); break;
      case Observable::PN:
        for (std::size_t i = 0; i < row.p_n.size(); ++i) out += (i ? ";" : "") + fmt(row.p_n[i]);
        break;
      case Observable::LimitCycles: out += row.limit_cycles; break;
    }
    out += ',';
  }
  out += fmt(row.residual) + ',' + std::to_string(row.iterations) + ',' + (row.converged ? "1" : "0");
  return out;
}

std::vector<std::string> dataset_header(const SweepConfig& cfg, const BasisChoice& basis) {
  std::vector<std::string> h;
  h.push_back("sset-sweep dataset v1");
  h.push_back(std::string("version ") + SSETDYN_VERSION);
  h.push_back("params " + hex_digest(fingerprint(reduce(cfg.params))));
  h.push_back("engine " + std::string(to_string(cfg.engine)) + " channel " + std::string(to_string(cfg.channel)));
  h.push_back("basis n_max=" + std::to_string(basis.n_max) + " m_max=" + std::to_string(basis.m_max) +
              (cfg.n_max ? "" : " (auto, largest cycle " + fmt(basis.largest_cycle) + ")"));
  json echo = cfg.source;
  echo.erase("workers");
  h.push_back("config " + echo.dump());
  return h;
}

unsigned default_workers() {
  if (const char* env = std::getenv("SSET_SWEEP_WORKERS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0 && v <= 1024) return static_cast<unsigned>(v);
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

namespace {

template <class Task>
void run_pool(std::size_t tasks, unsigned workers, Task&& task) {
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto work = [&] {
    for (std::size_t i = next++; i < tasks; i = next++) {
      try {
        task(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  workers = std::max(1U, std::min<unsigned>(workers, static_cast<unsigned>(std::max<std::size_t>(tasks, 1))));
  std::vector<std::thread> pool;
  for (unsigned w = 1; w < workers; ++w) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

std::string row_key(const std::vector<std::string>& fields, std::size_t axes) {
  std::string key;
  for (std::size_t i = 0; i < axes; ++i) key += fields[i] + '|';
  return key;
}

}  // namespace

RunSummary run_sweep(const SweepConfig& cfg, const RunOptions& opts) {
  RunSummary summary;
  summary.basis = resolve_basis(cfg);
  summary.rows = cfg.row_count();
  const auto header = dataset_header(cfg, summary.basis);
  const auto columns = dataset_columns(cfg);
  const std::size_t naxes = cfg.grid.size();
  const std::size_t lines = line_count(cfg);
  const std::size_t len = line_length(cfg);

  std::string column_line;
  for (std::size_t i = 0; i < columns.size(); ++i) column_line += (i ? "," : "") + columns[i];

  // Rows kept from an earlier run, keyed by their axis fields.
  std::map<std::string, std::string> previous;
  if (opts.resume && std::filesystem::exists(cfg.out_path)) {
    std::ifstream in(cfg.out_path, std::ios::binary);
    std::stringstream buf;
    buf << in.rdbuf();
    std::string text = buf.str();
    // A line cut short by an interruption is dropped.
    if (!text.empty() && text.back() != '\n') text.erase(text.find_last_of('\n') + 1);
    std::istringstream ls(text);
    std::string line;
    std::vector<std::string> old_header;
    bool seen_columns = false;
    while (std::getline(ls, line)) {
      if (line.rfind("# ", 0) == 0) {
        old_header.push_back(line.substr(2));
        continue;
      }
      if (!seen_columns) {
        if (line != column_line) throw ConfigError("existing dataset has different columns; cannot resume");
        seen_columns = true;
        continue;
      }
      const auto fields = split(line, ',');
      if (fields.size() != columns.size()) continue;
      previous[row_key(fields, naxes)] = line;
    }
    if (!old_header.empty() && old_header != header)
      throw ConfigError("existing dataset was produced by a different configuration; cannot resume");
  }

  std::vector<std::vector<std::string>> done(lines);
  std::vector<std::size_t> pending;
  for (std::size_t l = 0; l < lines; ++l) {
    std::vector<std::string> kept;
    for (std::size_t i = 0; i < len; ++i) {
      SweepRow probe;
      probe.axes = axis_values(cfg, l * len + i);
      std::vector<std::string> f;
      for (double v : probe.axes) f.push_back(fmt(v));
      auto it = previous.find(row_key(f, naxes));
      if (it == previous.end()) break;
      kept.push_back(it->second);
    }
    if (kept.size() == len) {
      done[l] = std::move(kept);
      summary.reused += len;
    } else {
      pending.push_back(l);
    }
  }

  const auto parent = std::filesystem::path(cfg.out_path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  std::ofstream out(cfg.out_path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write '" + cfg.out_path + "'");
  for (const auto& h : header) out << "# " << h << '\n';
  out << column_line << '\n';
  for (const auto& d : done)
    for (const auto& r : d) out << r << '\n';
  out.flush();

  std::mutex write_mutex;
  std::size_t finished = summary.reused;
  run_pool(pending.size(), opts.workers, [&](std::size_t k) {
    const std::size_t l = pending[k];
    const auto rows = evaluate_line(cfg, summary.basis, l);
    std::vector<std::string> text;
    for (const auto& r : rows) text.push_back(format_row(cfg, r));
    std::lock_guard lock(write_mutex);
    for (const auto& t : text) out << t << '\n';
    out.flush();
    done[l] = std::move(text);
    summary.computed += len;
    finished += len;
    if (opts.progress) opts.progress(finished, summary.rows);
  });
  out.close();

  // Final file in grid order.
  const std::string tmp = cfg.out_path + ".tmp";
  {
    std::ofstream sorted(tmp, std::ios::binary | std::ios::trunc);
    for (const auto& h : header) sorted << "# " << h << '\n';
    sorted << column_line << '\n';
    for (const auto& d : done)
      for (const auto& r : d) {
        sorted << r << '\n';
        if (r.size() < 2 || r.compare(r.size() - 2, 2, ",1") != 0) ++summary.unconverged;
      }
  }
  std::filesystem::rename(tmp, cfg.out_path);
  return summary;
}

std::vector<SweepRow> evaluate_grid(const SweepConfig& cfg, const BasisChoice& basis, unsigned workers) {
  const std::size_t lines = line_count(cfg);
  std::vector<std::vector<SweepRow>> parts(lines);
  run_pool(lines, workers, [&](std::size_t l) { parts[l] = evaluate_line(cfg, basis, l); });
  std::vector<SweepRow> rows;
  rows.reserve(cfg.row_count());
  for (auto& p : parts) rows.insert(rows.end(), p.begin(), p.end());
  return rows;
}

int Dataset::column(const std::string& name) const {
  for (std::size_t i = 0; i < columns.size(); ++i)
    if (columns[i] == name) return static_cast<int>(i);
  return -1;
}

double Dataset::number(std::size_t row, int col) const {
  const auto& f = rows.at(row).at(static_cast<std::size_t>(col));
  if (f == "nan") return NAN;
  return std::stod(f);
}

Dataset read_dataset(std::istream& is) {
  Dataset d;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      d.header.push_back(line.size() > 2 ? line.substr(2) : "");
      continue;
    }
    if (d.columns.empty()) {
      d.columns = split(line, ',');
      continue;
    }
    auto f = split(line, ',');
    if (f.size() != d.columns.size())
      throw std::runtime_error("dataset row has " + std::to_string(f.size()) + " fields, expected " +
                               std::to_string(d.columns.size()));
    d.rows.push_back(std::move(f));
  }
  if (d.columns.empty()) throw std::runtime_error("dataset has no column line");
  return d;
}

Dataset read_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset '" + path + "'");
  return read_dataset(in);
}

namespace {

const char* const kAxisNames[] = {"lambda", "delta_e_over_homega", "s"};

std::vector<int> axis_columns(const Dataset& d) {
  std::vector<int> out;
  for (std::size_t i = 0; i < d.columns.size(); ++i)
    for (const char* a : kAxisNames)
      if (d.columns[i] == a) out.push_back(static_cast<int>(i));
  return out;
}

}  // namespace

std::vector<std::string> check_theta_shape(const Dataset& data, double tol) {
  std::vector<std::string> issues;
  const int cs = data.column("s"), ct = data.column("theta"), cc = data.column("converged");
  if (cs < 0 || ct < 0 || cc < 0) return issues;
  std::map<std::string, std::vector<std::pair<double, double>>> lines;
  const auto axes = axis_columns(data);
  for (std::size_t r = 0; r < data.rows.size(); ++r) {
    if (data.rows[r][cc] != "1") continue;
    std::string key;
    for (int a : axes)
      if (a != cs) key += data.columns[a] + "=" + data.rows[r][a] + " ";
    lines[key].emplace_back(data.number(r, cs), data.number(r, ct));
  }
  for (auto& [key, pts] : lines) {
    std::sort(pts.begin(), pts.end());
    for (std::size_t i = 1; i < pts.size(); ++i) {
      if (pts[i].second > pts[i - 1].second + tol) {
        std::ostringstream os;
        os << key << "theta rises between s=" << pts[i - 1].first << " and s=" << pts[i].first;
        issues.push_back(os.str());
      }
    }
    for (std::size_t i = 1; i + 1 < pts.size(); ++i) {
      const auto &a = pts[i - 1], &m = pts[i], &b = pts[i + 1];
      const double chord = ((b.first - m.first) * a.second + (m.first - a.first) * b.second) / (b.first - a.first);
      if (m.second > chord + tol) {
        std::ostringstream os;
        os << key << "theta not convex at s=" << m.first << " (excess " << m.second - chord << ")";
        issues.push_back(os.str());
      }
    }
  }
  return issues;
}

std::string emit_plots(const std::string& data_path, PlotStyle style) {
  const auto data = read_dataset(data_path);
  const auto axes = axis_columns(data);
  if (axes.empty()) throw std::runtime_error("dataset has no axis columns");
  int value = data.column("activity");
  const bool log_color = value >= 0;
  if (value < 0) value = data.column("theta");
  if (value < 0) throw std::runtime_error("dataset has neither activity nor theta");
  const int conv = data.column("converged");
  const std::string vname = data.columns[value];
  const std::string tag = style == PlotStyle::Heatmap ? "heatmap" : "cuts";
  const std::string dat = data_path + "." + tag + ".dat";
  const std::string gp = data_path + "." + tag + ".gp";
  const std::string png = std::filesystem::path(data_path + "." + tag + ".png").filename().string();
  const std::string dat_name = std::filesystem::path(dat).filename().string();

  // Column order in the CSV is outer axis first, s last.
  const int x = axes.front();
  const int y = axes.size() > 1 ? axes[1] : -1;

  // Log colors span at most six decades below the largest value.
  double smallest = INFINITY, largest = 0.0;
  for (std::size_t r = 0; r < data.rows.size(); ++r) {
    const double v = data.number(r, value);
    if (v > 0.0 && std::isfinite(v)) {
      smallest = std::min(smallest, v);
      largest = std::max(largest, v);
    }
  }
  const double floor_value = std::isfinite(smallest) ? std::max(smallest, 1e-6 * largest) : 1e-12;

  std::ofstream d(dat);
  std::ofstream g(gp);
  g << "# gnuplot script generated from " << std::filesystem::path(data_path).filename().string() << "\n";
  g << "# masked cells: rows whose converged flag is 0\n";
  g << "set terminal pngcairo size 900,700\n";
  g << "set output '" << png << "'\n";
  g << "set datafile missing 'NaN'\n";
  g << "set xlabel '" << data.columns[x] << "'\n";

  if (style == PlotStyle::Heatmap) {
    if (y < 0) throw std::runtime_error("heatmap needs a two-axis dataset");
    d << "# " << data.columns[x] << " " << data.columns[y] << " " << vname << " masked\n";
    std::string last;
    for (std::size_t r = 0; r < data.rows.size(); ++r) {
      if (!last.empty() && data.rows[r][x] != last) d << "\n";
      last = data.rows[r][x];
      const bool ok = conv < 0 || data.rows[r][conv] == "1";
      const double v = data.number(r, value);
      d << data.rows[r][x] << " " << data.rows[r][y] << " "
        << (ok && std::isfinite(v) ? fmt17(log_color ? std::max(v, floor_value) : v) : "NaN") << " "
        << (ok ? 0 : 1) << "\n";
    }
    g << "set ylabel '" << data.columns[y] << "'\n";
    g << "set cblabel '" << vname << "'\n";
    if (log_color) {
      g << "# color: log-scaled activity; values below " << fmt(floor_value) << " are clamped (our normalization)\n";
      g << "set logscale cb\n";
    } else {
      g << "# color: linear scale, normalized to the data range (our choice)\n";
    }
    g << "set palette rgbformulae 33,13,10\n";
    g << "set object 1 rectangle from graph 0,0 to graph 1,1 behind fillcolor rgb '#dddddd' fillstyle solid noborder\n";
    g << "plot '" << dat_name << "' using 1:2:3 with image notitle, \\\n";
    g << "     '' using 1:($4 > 0 ? $2 : 1/0) with points pt 6 ps 0.6 lc rgb 'black' title 'unconverged'\n";
  } else {
    // One block per cut. Two-axis datasets are cut along the outer axis at
    // the first, central and last s values.
    std::vector<std::string> cut_values;
    if (y >= 0) {
      std::set<double> svals;
      for (std::size_t r = 0; r < data.rows.size(); ++r) svals.insert(data.number(r, y));
      std::vector<double> sv(svals.begin(), svals.end());
      double mid = sv.front();
      for (double s : sv)
        if (std::abs(s) < std::abs(mid)) mid = s;
      for (double s : {sv.front(), mid, sv.back()}) {
        const auto f = fmt(s);
        if (std::find(cut_values.begin(), cut_values.end(), f) == cut_values.end()) cut_values.push_back(f);
      }
    } else {
      cut_values.push_back("");
    }
    for (std::size_t c = 0; c < cut_values.size(); ++c) {
      if (c) d << "\n\n";
      d << "# cut " << (y >= 0 ? data.columns[y] + "=" + cut_values[c] : "all") << "\n";
      for (std::size_t r = 0; r < data.rows.size(); ++r) {
        if (y >= 0 && fmt(data.number(r, y)) != cut_values[c]) continue;
        const bool ok = conv < 0 || data.rows[r][conv] == "1";
        const double v = data.number(r, value);
        d << data.rows[r][x] << " " << (std::isfinite(v) ? fmt17(v) : "NaN") << " " << (ok ? 0 : 1) << "\n";
      }
    }
    g << "set ylabel '" << vname << "'\n";
    if (log_color) g << "set logscale y\n";
    g << "plot ";
    for (std::size_t c = 0; c < cut_values.size(); ++c) {
      const std::string title = y >= 0 ? data.columns[y] + "=" + cut_values[c] : vname;
      g << (c ? ", \\\n     " : "") << "'" << dat_name << "' index " << c << " using 1:($3 > 0 ? 1/0 : $2) with lines title '"
        << title << "', \\\n     '' index " << c << " using 1:($3 > 0 ? $2 : 1/0) with points pt 6 lc rgb 'red' notitle";
    }
    g << "\n";
  }
  return gp;
}

EngineComparison compare_activity(const SweepConfig& cfg, const std::vector<SweepRow>& spectral,
                                  const std::vector<SweepRow>& meanfield) {
  if (spectral.size() != meanfield.size()) throw std::invalid_argument("engine outputs differ in size");
  const auto axes = cfg.ordered_axes();
  int lam = -1, sax = -1;
  for (std::size_t k = 0; k < axes.size(); ++k) {
    if (axes[k].name == "lambda") lam = static_cast<int>(k);
    if (axes[k].name == "s") sax = static_cast<int>(k);
  }
  if (lam < 0) throw ConfigError("engine comparison needs a lambda axis");

  EngineComparison cmp;
  std::ostringstream table;
  for (std::size_t k = 0; k < axes.size(); ++k) table << axes[k].name << ',';
  table << "k_spectral,k_meanfield,difference\n";
  for (std::size_t r = 0; r < spectral.size(); ++r) {
    const double a = spectral[r].activity, b = meanfield[r].activity;
    for (double v : spectral[r].axes) table << fmt(v) << ',';
    const bool ok = spectral[r].converged && meanfield[r].converged;
    table << fmt(a) << ',' << fmt(b) << ',' << (ok ? fmt(a - b) : "nan") << '\n';
    if (ok) cmp.max_abs_difference = std::max(cmp.max_abs_difference, std::abs(a - b));
  }
  cmp.table = table.str();

  // Boundary per s value: lambda at the largest |dk/dlambda|.
  std::map<double, std::vector<std::size_t>> by_s;
  for (std::size_t r = 0; r < spectral.size(); ++r)
    by_s[sax >= 0 ? spectral[r].axes[sax] : cfg.s].push_back(r);
  for (auto& [s, idx] : by_s) {
    std::sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) { return spectral[i].axes[lam] < spectral[j].axes[lam]; });
    auto boundary = [&](const std::vector<SweepRow>& rows) {
      double best = -1.0, where = NAN;
      for (std::size_t k = 1; k < idx.size(); ++k) {
        const auto &a = rows[idx[k - 1]], &b = rows[idx[k]];
        if (!a.converged || !b.converged) continue;
        const double slope = std::abs((b.activity - a.activity) / (b.axes[lam] - a.axes[lam]));
        if (slope > best) {
          best = slope;
          where = 0.5 * (a.axes[lam] + b.axes[lam]);
        }
      }
      return where;
    };
    cmp.s_values.push_back(s);
    cmp.spectral_boundary.push_back(boundary(spectral));
    cmp.meanfield_boundary.push_back(boundary(meanfield));
  }
  return cmp;
}

EngineComparison compare_engines(const SweepConfig& cfg, unsigned workers) {
  SweepConfig spec = cfg, mf = cfg;
  spec.engine = Engine::Spectral;
  mf.engine = Engine::MeanField;
  for (auto* c : {&spec, &mf}) {
    c->channel = CountingChannel::PhotonEmission;
    c->observables = {Observable::Theta, Observable::Activity};
  }
  const auto basis = resolve_basis(spec);
  const auto a = evaluate_grid(spec, basis, workers);
  const auto b = evaluate_grid(mf, basis, workers);
  return compare_activity(cfg, a, b);
}

}  // namespace ssetdyn
