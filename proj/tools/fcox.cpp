// fcox: command-line front end for the functional Cox library.
//
//   fcox fit       fit a model (fixed lambda or GCV), write model JSON + beta curve
//   fcox gcv       GCV score over a lambda grid
//   fcox infer     ACE information bound and confidence intervals for theta
//   fcox bootstrap pointwise percentile band for beta
//   fcox simulate  simulation cells, summary CSV + JSON
//
// Exit codes: 0 success, 2 input or validation error, 3 numerical failure.

#include <CLI11.hpp>

#include <charconv>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "fcox/fcox.hpp"

namespace {

using namespace fcox;

constexpr int kExitInput = 2;
constexpr int kExitNumerical = 3;

struct GridFlags {
  std::string grid_path;
  int uniform = 0;
};

void add_grid_flags(CLI::App* sub, GridFlags& g) {
  auto* grid = sub->add_option("--grid", g.grid_path, "single-column CSV of grid points");
  sub->add_option("--uniform-grid", g.uniform, "uniform grid with this many points")->excludes(grid);
}

Grid resolve_grid(const GridFlags& g, const std::string& data_path) {
  if (!g.grid_path.empty()) return load_grid_csv(g.grid_path);
  const auto G = g.uniform > 0 ? g.uniform : csv_grid_size(data_path);
  if (G < 4) throw ParseError("data file has fewer than 4 x-columns", 1);
  return make_uniform_grid(static_cast<int>(G));
}

std::optional<double> parse_auto_or_double(const std::string& s, const char* flag) {
  if (s == "auto") return std::nullopt;
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v))
    throw InvalidArgument(std::string(flag) + " must be 'auto' or a number, got '" + s + "'");
  return v;
}

BasisChoice parse_basis(const std::string& s, std::uint64_t seed) {
  if (s == "auto") return BasisChoice::reduced(0, seed);
  if (s == "full") return BasisChoice::full();
  int q = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), q);
  if (ec != std::errc() || ptr != s.data() + s.size() || q < 1)
    throw InvalidArgument("--qbasis must be 'auto', 'full' or a positive integer, got '" + s + "'");
  return BasisChoice::reduced(q, seed);
}

std::string replace_extension(const std::string& path, const std::string& ext) {
  return std::filesystem::path(path).replace_extension(ext).string();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidArgument("cannot open for writing: " + path);
  out << text;
}

// --- fit ----------------------------------------------------------------------

struct FitArgs {
  std::string data, out = "model.json", curve, gcv_out;
  GridFlags grid;
  int order = 2;
  std::string lambda = "auto", qbasis = "auto";
  double lambda_min = 1e-8, lambda_max = 1e-1;
  int lambda_count = 25;
  std::uint64_t seed = 0;
  int threads = 1;
};

int cmd_fit(const FitArgs& a) {
  const Grid grid = resolve_grid(a.grid, a.data);
  const Dataset ds = center(load_csv(a.data, grid));
  const SobolevKernel kernel(grid, a.order);
  const auto sys = build_design(ds, kernel, parse_basis(a.qbasis, a.seed));
  const auto fixed = parse_auto_or_double(a.lambda, "--lambda");

  FittedModel model;
  json out;
  if (fixed) {
    model = fit(ds, sys, *fixed);
    out = to_json(model);
  } else {
    GcvOptions go;
    go.keep_models = true;
    const auto res = select_lambda(ds, sys, log_spaced(a.lambda_min, a.lambda_max, a.lambda_count), go);
    model = *res.models[res.best_index];
    out = to_json(model);
    out["gcv"] = to_json(res);
    write_text(a.gcv_out.empty() ? replace_extension(a.out, ".gcv.csv") : a.gcv_out, gcv_csv(res));
  }
  write_json_file(a.out, out);
  if (!a.curve.empty()) write_text(a.curve, beta_curve_csv(grid, model.beta_on_grid));
  if (!model.converged) std::cerr << "warning: Newton iterations did not converge\n";
  return 0;
}

// --- gcv ----------------------------------------------------------------------

struct GcvArgs {
  std::string data, out = "gcv.csv", qbasis = "auto";
  GridFlags grid;
  int order = 2;
  double lambda_min = 1e-8, lambda_max = 1e-1;
  int lambda_count = 25;
  std::uint64_t seed = 0;
  int threads = 1;
};

int cmd_gcv(const GcvArgs& a) {
  const Grid grid = resolve_grid(a.grid, a.data);
  const Dataset ds = center(load_csv(a.data, grid));
  const SobolevKernel kernel(grid, a.order);
  const auto sys = build_design(ds, kernel, parse_basis(a.qbasis, a.seed));
  const auto res = select_lambda(ds, sys, log_spaced(a.lambda_min, a.lambda_max, a.lambda_count));
  write_text(a.out, gcv_csv(res));
  std::cout << "best lambda " << detail::format_double(res.best_lambda) << "\n";
  return 0;
}

// --- infer --------------------------------------------------------------------

struct InferArgs {
  std::string data, model, out = "inference.json";
  double level = 0.95;
  std::uint64_t seed = 0;
  int threads = 1;
};

Dataset load_for_model(const std::string& data_path, const json& j) {
  if (!j.contains("grid") || !j["grid"].is_array()) throw ParseError("model JSON has no grid", -1);
  const Grid grid(detail::from_array(j["grid"]));
  return center(load_csv(data_path, grid));
}

int cmd_infer(const InferArgs& a) {
  const json j = read_json_file(a.model);
  const Dataset ds = load_for_model(a.data, j);
  const FittedModel model = model_from_json(j, ds);
  AceOptions ao;
  ao.seed = a.seed;
  const auto ace = ace_fit(ds, model, ao);
  json out;
  try {
    out = to_json(theta_ci(model, ace.info, ds.n(), a.level));
  } catch (const NumericalError& e) {
    std::cerr << "information matrix: " << detail::to_rows(ace.info).dump() << "\n";
    throw;
  }
  out["n"] = ds.n();
  out["ace"] = to_json(ace);
  write_json_file(a.out, out);
  return 0;
}

// --- bootstrap ----------------------------------------------------------------

struct BootstrapArgs {
  std::string data, model, out = "band.csv";
  int reps = 500;
  double level = 0.95;
  std::uint64_t seed = 1;
  int threads = 1;
};

int cmd_bootstrap(const BootstrapArgs& a) {
  const json j = read_json_file(a.model);
  const Dataset ds = load_for_model(a.data, j);
  const FittedModel model = model_from_json(j, ds);
  BootstrapOptions bo;
  bo.B = a.reps;
  bo.level = a.level;
  bo.seed = a.seed;
  bo.threads = a.threads;
  const auto band = bootstrap_beta_band(ds, model, bo);
  write_text(a.out, band_csv(model.grid, model.beta_on_grid, band));
  if (band.failures > 0) std::cerr << "warning: " << band.failures << " bootstrap refits failed and were dropped\n";
  return 0;
}

// --- simulate -----------------------------------------------------------------

struct SimulateArgs {
  double v = 2.0;
  int n = 100;
  std::string h0 = "const";
  std::optional<double> gamma;
  int reps = 100;
  std::string lambda = "auto";
  std::uint64_t seed = 1;
  std::string out = "report.csv", json_out, replicates_out;
  int threads = 1;
  int grid_size = kDefaultGridSize;
  bool allow_any_v = false;
  bool no_ci = false;
  bool table1 = false, table2 = false, figure1 = false;
};

const std::vector<double> kStudyV{1.0, 1.5, 2.0, 2.5};
const std::vector<int> kStudyN{50, 100, 150, 200};

// Censoring-calibrated gamma per baseline: roughly 10% and 30% censoring.
double gamma_for(BaselineHazard h0, bool heavy) {
  if (h0 == BaselineHazard::Constant) return heavy ? 3.4 : 19.0;
  return heavy ? 3.9 : 15.0;
}

std::vector<SimConfig> simulation_cells(const SimulateArgs& a) {
  std::vector<SimConfig> cells;
  auto cell = [&](double v, int n, BaselineHazard h0, double gamma) {
    SimConfig c;
    c.v = v;
    c.n = n;
    c.h0 = h0;
    c.gamma = gamma;
    c.seed = a.seed;
    c.validate();
    cells.push_back(c);
  };
  if (a.table1 || a.table2) {
    for (int n : kStudyN)
      for (double v : kStudyV) cell(v, n, BaselineHazard::Constant, gamma_for(BaselineHazard::Constant, true));
    return cells;
  }
  if (a.figure1) {
    for (auto h0 : {BaselineHazard::Constant, BaselineHazard::Linear})
      for (bool heavy : {false, true})
        for (int n : kStudyN)
          for (double v : kStudyV) cell(v, n, h0, gamma_for(h0, heavy));
    return cells;
  }
  BaselineHazard h0;
  if (a.h0 == "const")
    h0 = BaselineHazard::Constant;
  else if (a.h0 == "linear")
    h0 = BaselineHazard::Linear;
  else
    throw InvalidArgument("--h0 must be 'const' or 'linear'");
  if (!a.allow_any_v && std::find(kStudyV.begin(), kStudyV.end(), a.v) == kStudyV.end())
    throw InvalidArgument("--v must be one of 1, 1.5, 2, 2.5 (pass --allow-any-v to override)");
  cell(a.v, a.n, h0, a.gamma.value_or(gamma_for(h0, true)));
  return cells;
}

int cmd_simulate(const SimulateArgs& a) {
  if (int(a.table1) + int(a.table2) + int(a.figure1) > 1)
    throw InvalidArgument("--table1, --table2 and --figure1 are mutually exclusive");
  if (a.reps < 1) throw InvalidArgument("--reps must be at least 1");
  const auto cells = simulation_cells(a);
  LambdaPolicy policy;
  policy.fixed = parse_auto_or_double(a.lambda, "--lambda");
  if (policy.fixed && !(*policy.fixed > 0.0)) throw InvalidArgument("--lambda must be positive");
  ExperimentOptions eo;
  eo.reps = a.reps;
  eo.threads = a.threads;
  eo.grid_size = a.grid_size;
  eo.compute_ci = !a.no_ci && !a.figure1;
  const auto report = run_experiment(cells, policy, eo);
  write_text(a.out, report_csv(report));
  write_json_file(a.json_out.empty() ? replace_extension(a.out, ".json") : a.json_out, to_json(report));
  if (!a.replicates_out.empty()) write_text(a.replicates_out, replicates_csv(report));
  for (const auto& c : report.cells)
    if (c.failed)
      std::cerr << "warning: cell v=" << c.cfg.v << " n=" << c.cfg.n << " had " << c.failures << " failed replicates\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Functional Cox model: penalized partial likelihood, GCV, ACE inference, simulation"};
  app.require_subcommand(1);

  FitArgs fa;
  auto* fit_cmd = app.add_subcommand("fit", "fit a functional Cox model");
  fit_cmd->add_option("--data", fa.data, "data CSV (time,event,z1..zp,x1..xG)")->required();
  add_grid_flags(fit_cmd, fa.grid);
  fit_cmd->add_option("--order", fa.order, "Sobolev order m")->check(CLI::Range(1, 20));
  fit_cmd->add_option("--lambda", fa.lambda, "'auto' (GCV) or a positive number");
  fit_cmd->add_option("--qbasis", fa.qbasis, "'auto', 'full' or the reduced basis size");
  fit_cmd->add_option("--lambda-min", fa.lambda_min);
  fit_cmd->add_option("--lambda-max", fa.lambda_max);
  fit_cmd->add_option("--lambda-count", fa.lambda_count);
  fit_cmd->add_option("--seed", fa.seed);
  fit_cmd->add_option("--out", fa.out, "model JSON");
  fit_cmd->add_option("--curve", fa.curve, "beta curve CSV");
  fit_cmd->add_option("--gcv-out", fa.gcv_out, "GCV trace CSV when --lambda auto");
  fit_cmd->add_option("--threads", fa.threads)->check(CLI::PositiveNumber);

  GcvArgs ga;
  auto* gcv_cmd = app.add_subcommand("gcv", "GCV score over a lambda grid");
  gcv_cmd->add_option("--data", ga.data)->required();
  add_grid_flags(gcv_cmd, ga.grid);
  gcv_cmd->add_option("--order", ga.order)->check(CLI::Range(1, 20));
  gcv_cmd->add_option("--qbasis", ga.qbasis);
  gcv_cmd->add_option("--lambda-min", ga.lambda_min);
  gcv_cmd->add_option("--lambda-max", ga.lambda_max);
  gcv_cmd->add_option("--lambda-count", ga.lambda_count);
  gcv_cmd->add_option("--seed", ga.seed);
  gcv_cmd->add_option("--out", ga.out);
  gcv_cmd->add_option("--threads", ga.threads)->check(CLI::PositiveNumber);

  InferArgs ia;
  auto* infer_cmd = app.add_subcommand("infer", "information bound and confidence intervals for theta");
  infer_cmd->add_option("--data", ia.data)->required();
  infer_cmd->add_option("--model", ia.model)->required();
  infer_cmd->add_option("--out", ia.out);
  infer_cmd->add_option("--level", ia.level)->check(CLI::Range(0.0, 1.0));
  infer_cmd->add_option("--seed", ia.seed);
  infer_cmd->add_option("--threads", ia.threads)->check(CLI::PositiveNumber);

  BootstrapArgs ba;
  auto* boot_cmd = app.add_subcommand("bootstrap", "bootstrap percentile band for beta");
  boot_cmd->add_option("--data", ba.data)->required();
  boot_cmd->add_option("--model", ba.model)->required();
  boot_cmd->add_option("--reps", ba.reps);
  boot_cmd->add_option("--level", ba.level)->check(CLI::Range(0.0, 1.0));
  boot_cmd->add_option("--seed", ba.seed);
  boot_cmd->add_option("--out", ba.out);
  boot_cmd->add_option("--threads", ba.threads)->check(CLI::PositiveNumber);

  SimulateArgs sa;
  auto* sim_cmd = app.add_subcommand("simulate", "run simulation cells");
  sim_cmd->add_option("--v", sa.v, "eigenvalue decay of the covariate process");
  sim_cmd->add_option("--n", sa.n);
  sim_cmd->add_option("--h0", sa.h0, "'const' or 'linear'");
  sim_cmd->add_option("--gamma", sa.gamma, "mean of the exponential censoring time");
  sim_cmd->add_option("--reps", sa.reps);
  sim_cmd->add_option("--lambda", sa.lambda);
  sim_cmd->add_option("--seed", sa.seed);
  sim_cmd->add_option("--out", sa.out, "summary CSV");
  sim_cmd->add_option("--json", sa.json_out, "summary JSON (default: --out with .json)");
  sim_cmd->add_option("--replicates", sa.replicates_out, "per-replicate CSV");
  sim_cmd->add_option("--threads", sa.threads)->check(CLI::PositiveNumber);
  sim_cmd->add_option("--grid-size", sa.grid_size)->check(CLI::Range(4, 100000));
  sim_cmd->add_flag("--allow-any-v", sa.allow_any_v);
  sim_cmd->add_flag("--no-ci", sa.no_ci, "skip ACE confidence intervals");
  sim_cmd->add_flag("--table1", sa.table1, "theta mean/sd grid: const h0, ~30% censoring, all v and n");
  sim_cmd->add_flag("--table2", sa.table2, "coverage grid: const h0, ~30% censoring, all v and n");
  sim_cmd->add_flag("--figure1", sa.figure1, "MSE grid: both baselines, both censoring levels, all v and n");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitInput;
  }

  try {
    if (*fit_cmd) return cmd_fit(fa);
    if (*gcv_cmd) return cmd_gcv(ga);
    if (*infer_cmd) return cmd_infer(ia);
    if (*boot_cmd) return cmd_bootstrap(ba);
    if (*sim_cmd) return cmd_simulate(sa);
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const ParseError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kExitInput;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid argument: " << e.what() << "\n";
    return kExitInput;
  } catch (const InvalidData& e) {
    std::cerr << "invalid data: " << e.what() << "\n";
    return kExitInput;
  } catch (const json::exception& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kExitInput;
  }
  return kExitInput;
}
