#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "ssetdyn/sweep.hpp"

using namespace ssetdyn;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("ssetdyn_sweep_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

json small_config(const fs::path& out) {
  return json{{"params", {{"ej_ratio", 0.0625}, {"de_ratio", -0.1}, {"omega_ratio", 1.0}, {"gamma_ext_ratio", 0.0005}}},
              {"grid", json::array({{{"name", "s"}, {"min", -0.05}, {"max", 0.05}, {"count", 3}},
                                    {{"name", "lambda"}, {"min", 0.0}, {"max", 0.015}, {"count", 4}}})},
              {"n_max", 16},
              {"m_max", 8},
              {"observables", {"theta", "activity", "n_mean", "n_mp", "p_n"}},
              {"out_path", out.string()}};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_SUITE("sweep") {

TEST_CASE("schema violations are rejected before any work") {
  const json good = small_config("x.csv");
  CHECK_NOTHROW(parse_config(good));
  auto broken = [&](auto edit) {
    json j = good;
    edit(j);
    return j;
  };
  CHECK_THROWS_AS(parse_config(broken([](json& j) { j["colour"] = 1; })), ConfigError);
  CHECK_THROWS_AS(parse_config(broken([](json& j) { j["grid"][0]["count"] = 1; })), ConfigError);
  CHECK_THROWS_AS(parse_config(broken([](json& j) { j["grid"][0]["min"] = 0.1; })), ConfigError);
  CHECK_THROWS_AS(parse_config(broken([](json& j) { j["grid"][1]["name"] = "s"; })), ConfigError);
  CHECK_THROWS_AS(parse_config(broken([](json& j) { j["grid"][1]["name"] = "omega"; })), ConfigError);
  CHECK_THROWS_AS(parse_config(broken([](json& j) {
                    j["grid"].push_back({{"name", "delta_e_over_homega"}, {"min", 0}, {"max", 1}, {"count", 2}});
                  })),
                  ConfigError);
  CHECK_THROWS_AS(parse_config(broken([](json& j) { j["grid"] = json::array(); })), ConfigError);
  CHECK_THROWS_AS(parse_config(broken([](json& j) { j["engine"] = "magic"; })), ConfigError);
  CHECK_THROWS_AS(parse_config(broken([](json& j) { j["engine"] = "meanfield"; })), ConfigError);  // p_n
  CHECK_THROWS_AS(parse_config(broken([](json& j) {
                    j["engine"] = "meanfield";
                    j["observables"] = {"theta"};
                    j["channel"] = "quasiparticle";
                  })),
                  ConfigError);
  CHECK_THROWS_AS(parse_config(broken([](json& j) { j["observables"] = {"entropy"}; })), ConfigError);
  CHECK_THROWS_AS(parse_config(broken([](json& j) { j["n_max"] = "big"; })), ConfigError);
  CHECK_THROWS_AS(parse_config(broken([](json& j) { j["m_max"] = 30; })), ConfigError);
  CHECK_THROWS_AS(parse_config(broken([](json& j) { j.erase("out_path"); })), ConfigError);
  CHECK_THROWS_AS(parse_config(broken([](json& j) { j["params"]["omega_ratio"] = 0.0; })), ConfigError);
  CHECK_THROWS_AS(parse_config(broken([](json& j) { j["grid"][0]["max"] = 9.0; })), ConfigError);
  CHECK_THROWS_AS(parse_config(broken([](json& j) {
                    j["engine"] = "trajectory";
                    j["observables"] = {"theta"};
                    j["trajectory"] = {{"t_max", 100.0}, {"burn_in", 60.0}};
                  })),
                  ConfigError);
  CHECK_THROWS_AS(load_config("/nonexistent/config.json"), ConfigError);
}

TEST_CASE("grid layout puts s on the fastest axis") {
  const auto cfg = parse_config(small_config("x.csv"));
  CHECK(cfg.row_count() == 12);
  CHECK(line_count(cfg) == 4);
  CHECK(line_length(cfg) == 3);
  const auto axes = cfg.ordered_axes();
  CHECK(axes[0].name == "lambda");
  CHECK(axes[1].name == "s");
  CHECK(cfg.point_s(4) == doctest::Approx(0.0));
  CHECK(cfg.point_params(4).lambda == doctest::Approx(0.005));
  CHECK(dataset_columns(cfg) == std::vector<std::string>{"lambda", "s", "theta", "activity", "n_mean", "n_mp", "p_n",
                                                          "residual", "iterations", "converged"});

  json j = small_config("x.csv");
  j["grid"][1] = {{"name", "delta_e_over_homega"}, {"min", -2.0}, {"max", 0.0}, {"count", 3}};
  j["params"]["omega_ratio"] = 3.5;
  const auto de = parse_config(j);
  CHECK(de.point_params(0).de_ratio == doctest::Approx(-2.0 * 3.5 / (2 * std::numbers::pi)));
}

TEST_CASE("auto basis follows the largest mean-field cycle") {
  json j = small_config("x.csv");
  j["n_max"] = "auto";
  j.erase("m_max");
  auto b = resolve_basis(parse_config(j));
  CHECK(b.n_max == 60);
  CHECK(b.m_max == 30);
  j["grid"][1]["max"] = 0.04;
  b = resolve_basis(parse_config(j));
  CHECK(b.largest_cycle > 40.0);
  CHECK(b.n_max == std::min(220, static_cast<int>(std::ceil(1.5 * b.largest_cycle))));
}

TEST_CASE("rows are deterministic and independent of the worker count") {
  const auto dir = scratch_dir("workers");
  json j = small_config(dir / "one.csv");
  const auto one = run_sweep(parse_config(j), RunOptions{1, false, {}});
  j["out_path"] = (dir / "three.csv").string();
  j["workers"] = 3;
  const auto three = run_sweep(parse_config(j), RunOptions{3, false, {}});
  CHECK(one.rows == 12);
  CHECK(one.computed == 12);
  CHECK(one.unconverged == 0);
  CHECK(one.exit_code() == 0);
  CHECK(three.unconverged == 0);
  // Output path and worker count are the only differences in the echo.
  auto body = [](const std::string& text) {
    std::string out;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line))
      if (line.rfind("# config", 0) != 0) out += line + "\n";
    return out;
  };
  CHECK(body(slurp(dir / "one.csv")) == body(slurp(dir / "three.csv")));

  const auto data = read_dataset((dir / "one.csv").string());
  CHECK(data.rows.size() == 12);
  CHECK(check_theta_shape(data).empty());
  for (std::size_t r = 0; r < data.rows.size(); ++r) {
    if (data.number(r, data.column("s")) == 0.0) CHECK(std::abs(data.number(r, data.column("theta"))) < 1e-9);
  }
  // s = 0 at lambda = 0: empty resonator
  CHECK(data.rows[1][data.column("n_mp")] == "0");
  CHECK(data.rows[1][data.column("p_n")].find(';') != std::string::npos);
}

TEST_CASE("interrupted run resumes to the same dataset") {
  const auto dir = scratch_dir("resume");
  json j = small_config(dir / "full.csv");
  run_sweep(parse_config(j), RunOptions{1, false, {}});
  const std::string full = slurp(dir / "full.csv");

  // Keep the header, two complete lines and half of a row.
  std::istringstream in(full);
  std::string line, cut;
  int data_lines = 0;
  while (std::getline(in, line)) {
    if (line[0] != '#' && line.rfind("lambda", 0) != 0) ++data_lines;
    if (data_lines > 6) {
      cut += line.substr(0, line.size() / 2);
      break;
    }
    cut += line + "\n";
  }
  const auto part = dir / "part.csv";
  j["out_path"] = part.string();
  {
    // headers echo the out_path, so rebuild the truncated file with the new one
    const auto cfg = parse_config(j);
    const auto header = dataset_header(cfg, resolve_basis(cfg));
    std::ofstream out(part, std::ios::binary);
    for (const auto& h : header) out << "# " << h << "\n";
    out << cut.substr(cut.find("lambda,"));
  }
  const auto summary = run_sweep(parse_config(j), RunOptions{2, true, {}});
  CHECK(summary.reused == 6);
  CHECK(summary.computed == 6);
  auto without_echo = [](const std::string& text) {
    std::string out;
    std::istringstream s(text);
    std::string l;
    while (std::getline(s, l))
      if (l.rfind("# config", 0) != 0) out += l + "\n";
    return out;
  };
  CHECK(without_echo(slurp(part)) == without_echo(full));

  // A different configuration refuses to resume.
  j["grid"][0]["count"] = 5;
  CHECK_THROWS_AS(run_sweep(parse_config(j), RunOptions{1, true, {}}), ConfigError);
}

TEST_CASE("theta shape check flags violations") {
  std::istringstream good("lambda,s,theta,converged\n0.1,-0.1,0.2,1\n0.1,0,0,1\n0.1,0.1,-0.1,1\n");
  CHECK(check_theta_shape(read_dataset(good)).empty());
  std::istringstream rising("lambda,s,theta,converged\n0.1,-0.1,0.2,1\n0.1,0,0,1\n0.1,0.1,0.01,1\n");
  CHECK(check_theta_shape(read_dataset(rising)).size() == 1);
  std::istringstream masked("lambda,s,theta,converged\n0.1,-0.1,0.2,1\n0.1,0,0.5,0\n0.1,0.1,-0.1,1\n");
  CHECK(check_theta_shape(read_dataset(masked)).empty());
  std::istringstream concave("s,theta,converged\n-0.1,0.1,1\n0,0.09,1\n0.1,-0.1,1\n");
  CHECK(check_theta_shape(read_dataset(concave)).size() == 1);
  std::istringstream ragged("s,theta\n0,1,2\n");
  CHECK_THROWS(read_dataset(ragged));
}

TEST_CASE("plot scripts mark unconverged cells") {
  const auto dir = scratch_dir("plots");
  const auto path = dir / "grid.csv";
  std::ofstream(path) << "# test\nlambda,s,activity,converged\n0,-0.1,0.001,1\n0,0.1,0.0005,0\n0.1,-0.1,0.01,1\n0.1,0.1,0.002,1\n";
  const auto script = emit_plots(path.string(), PlotStyle::Heatmap);
  const auto gp = slurp(script);
  CHECK(gp.find("logscale cb") != std::string::npos);
  CHECK(gp.find("unconverged") != std::string::npos);
  const auto dat = slurp(path.string() + ".heatmap.dat");
  CHECK(dat.find("0 0.1 NaN 1") != std::string::npos);
  CHECK(fs::exists(emit_plots(path.string(), PlotStyle::Cuts)));

  const auto line = dir / "line.csv";
  std::ofstream(line) << "lambda,theta,converged\n0,0,1\n0.1,-0.01,1\n";
  CHECK_THROWS(emit_plots(line.string(), PlotStyle::Heatmap));
  CHECK(slurp(emit_plots(line.string(), PlotStyle::Cuts)).find("plot") != std::string::npos);
}

TEST_CASE("mean-field engine and self comparison") {
  json j = small_config("unused.csv");
  j["engine"] = "meanfield";
  j["observables"] = {"theta", "activity", "limit_cycles"};
  j["grid"][1]["max"] = 0.03;
  const auto cfg = parse_config(j);
  const auto rows = evaluate_grid(cfg, resolve_basis(cfg), 2);
  REQUIRE(rows.size() == 12);
  for (const auto& r : rows) {
    CHECK(r.converged);
    CHECK_FALSE(r.limit_cycles.empty());
    if (r.axes[1] == 0.0) CHECK(std::abs(r.theta) < 1e-9);
  }
  const auto same = compare_activity(cfg, rows, rows);
  CHECK(same.max_abs_difference == 0.0);
  REQUIRE(same.s_values.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) CHECK(same.spectral_boundary[i] == same.meanfield_boundary[i]);

  json q = small_config("unused.csv");
  q["grid"] = json::array({{{"name", "s"}, {"min", -0.1}, {"max", 0.1}, {"count", 3}}});
  q["observables"] = {"theta"};
  CHECK_THROWS_AS(compare_activity(parse_config(q), {}, {}), ConfigError);
}

TEST_CASE("trajectory engine reuses one ensemble per line") {
  json j = small_config("unused.csv");
  j["engine"] = "trajectory";
  j["observables"] = {"theta", "activity", "n_mean"};
  j["grid"][1] = {{"name", "lambda"}, {"min", 0.0}, {"max", 0.01}, {"count", 2}};
  j["trajectory"] = {{"t_max", 2000.0}, {"count", 12}, {"burn_in", 200.0}};
  const auto cfg = parse_config(j);
  const auto rows = evaluate_grid(cfg, resolve_basis(cfg), 1);
  REQUIRE(rows.size() == 6);
  for (const auto& r : rows) {
    CHECK(r.iterations == 12);
    if (r.axes[0] == 0.0) CHECK(r.theta == 0.0);
  }
  CHECK(rows[3].n_mean == rows[5].n_mean);
  CHECK(rows[4].theta == 0.0);
  const auto again = evaluate_grid(cfg, resolve_basis(cfg), 2);
  for (std::size_t i = 0; i < rows.size(); ++i) CHECK(format_row(cfg, rows[i]) == format_row(cfg, again[i]));
}

}
