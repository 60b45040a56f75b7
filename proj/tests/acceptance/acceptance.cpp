// Acceptance run: one [PASS]/[FAIL] line per criterion, nonzero exit if any fails.
// Usage: acceptance [--threads N] [--only K[,K...]]

#include <Eigen/Eigenvalues>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "fcox/fcox.hpp"
#include "test_util.hpp"

using namespace fcox;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

int g_threads = 1;

// 1 -------------------------------------------------------------------------

Verdict derivatives() {
  const Stopwatch sw;
  const Dataset ds = center(test_support::random_dataset(25, 2, 21, 2024));
  const auto sys = build_design(ds, SobolevKernel(ds.grid()), BasisChoice::reduced(0, 7));
  const double lambda = 1e-3;
  const double h = 1e-5;
  std::mt19937_64 rng(99);
  std::normal_distribution<double> N(0.0, 0.5);
  double worst_g = 0.0, worst_h = 0.0;
  for (int point = 0; point < 5; ++point) {
    Eigen::VectorXd c(sys.dim());
    for (auto& v : c) v = N(rng);
    const auto [grad, hess] = gradient_hessian(c, sys, ds, lambda);
    Eigen::VectorXd fdg(c.size());
    Eigen::MatrixXd fdh(c.size(), c.size());
    for (Eigen::Index k = 0; k < c.size(); ++k) {
      Eigen::VectorXd cp = c, cm = c;
      cp(k) += h;
      cm(k) -= h;
      fdg(k) = (neg_log_partial_lik(cp, sys, ds, lambda) - neg_log_partial_lik(cm, sys, ds, lambda)) / (2 * h);
      fdh.col(k) = (gradient_hessian(cp, sys, ds, lambda).first - gradient_hessian(cm, sys, ds, lambda).first) / (2 * h);
    }
    // Relative to the largest entry, so near-zero entries do not dominate.
    worst_g = std::max(worst_g, (grad - fdg).lpNorm<Eigen::Infinity>() / fdg.lpNorm<Eigen::Infinity>());
    worst_h = std::max(worst_h, (hess - fdh).cwiseAbs().maxCoeff() / fdh.cwiseAbs().maxCoeff());
  }
  const double t = sw.seconds();
  return {worst_g <= 1e-5 && worst_h <= 1e-5 && t < 5.0,
          "grad rel err " + fmt("%.2e", worst_g) + ", hess rel err " + fmt("%.2e", worst_h) + ", " + fmt("%.2f s", t)};
}

// 2 -------------------------------------------------------------------------

double cox_loglik(double theta, const Dataset& ds) {
  double ll = 0.0;
  for (Eigen::Index i = 0; i < ds.n(); ++i) {
    if (!ds.event(i)) continue;
    double denom = 0.0;
    for (Eigen::Index j = 0; j < ds.n(); ++j)
      if (ds.times()(j) >= ds.times()(i)) denom += std::exp(theta * ds.Z()(j, 0));
    ll += theta * ds.Z()(i, 0) - std::log(denom);
  }
  return ll;
}

double golden_section_max(const std::function<double(double)>& f, double a, double b) {
  const double r = (std::sqrt(5.0) - 1.0) / 2.0;
  double x1 = b - r * (b - a), x2 = a + r * (b - a);
  double f1 = f(x1), f2 = f(x2);
  while (b - a > 1e-11) {
    if (f1 < f2) {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + r * (b - a);
      f2 = f(x2);
    } else {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - r * (b - a);
      f1 = f(x1);
    }
  }
  return 0.5 * (a + b);
}

Verdict scalar_oracle() {
  const Stopwatch sw;
  double worst = 0.0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const Dataset raw = test_support::random_dataset(20, 1, 11, 500 + seed);
    const Dataset ds = center(Dataset(raw.grid(), raw.times(), raw.events(), raw.Z(),
                                      Eigen::MatrixXd::Zero(raw.n(), raw.grid().size())));
    const auto model = fit(ds, SobolevKernel(ds.grid()), 1e-4, BasisChoice::reduced(0, seed));
    const double oracle = golden_section_max([&](double th) { return cox_loglik(th, ds); }, -10.0, 10.0);
    worst = std::max(worst, std::abs(model.coef.theta(0) - oracle));
  }
  const double t = sw.seconds();
  return {worst <= 1e-6 && t < 10.0, "max |theta - oracle| " + fmt("%.2e", worst) + ", " + fmt("%.2f s", t)};
}

// 3 -------------------------------------------------------------------------

Verdict kernel() {
  double worst = 0.0;
  for (int a = 0; a < 20; ++a)
    for (int b = 0; b < 20; ++b) {
      const double s = a / 19.0, t = b / 19.0;
      const double lo = std::min(s, t);
      const double q = lo > 0.0 ? boost::math::quadrature::gauss_kronrod<double, 15>::integrate(
                                      [&](double u) { return (s - u) * (t - u); }, 0.0, lo)
                                : 0.0;
      worst = std::max(worst, std::abs(k1(s, t, 2) - q));
    }

  double min_eig = std::numeric_limits<double>::infinity();
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Dataset ds = test_support::random_dataset(40, 1, kDefaultGridSize, seed);
    const SobolevKernel kern(ds.grid());
    const Eigen::MatrixXd gram = kern.gram(ds.X(), ds.X());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (gram + gram.transpose()));
    min_eig = std::min(min_eig, eig.eigenvalues().minCoeff());
  }
  return {worst <= 1e-5 && min_eig >= -1e-10,
          "max |closed form - quadrature| " + fmt("%.2e", worst) + ", min Gram eigenvalue " + fmt("%.2e", min_eig)};
}

// 4 -------------------------------------------------------------------------

Verdict censoring() {
  const Stopwatch sw;
  struct Case {
    BaselineHazard h0;
    double gamma, lo, hi;
  };
  const Case cases[] = {{BaselineHazard::Constant, 19.0, 0.05, 0.15},
                        {BaselineHazard::Constant, 3.4, 0.25, 0.35},
                        {BaselineHazard::Linear, 15.0, 0.05, 0.15},
                        {BaselineHazard::Linear, 3.9, 0.25, 0.35}};
  bool ok = true;
  std::string detail;
  for (const auto& c : cases) {
    SimConfig cfg;
    cfg.h0 = c.h0;
    cfg.gamma = c.gamma;
    const double rate = empirical_censoring(cfg, 20000);
    ok = ok && rate >= c.lo && rate <= c.hi;
    detail += std::string(to_string(c.h0)) + "/" + fmt("%g", c.gamma) + ": " + fmt("%.3f", rate) + ", ";
  }
  const double t = sw.seconds();
  return {ok && t < 30.0, detail + fmt("%.1f s", t)};
}

// 5, 6, 10 share one 200-replicate run --------------------------------------

struct BigCell {
  CellSummary cell;
  double seconds = 0.0;
};

const BigCell& big_cell() {
  static const BigCell bc = [] {
    const Stopwatch sw;
    SimConfig cfg;
    cfg.v = 1.0;
    cfg.n = 200;
    cfg.gamma = 3.4;
    ExperimentOptions o;
    o.reps = 200;
    o.threads = g_threads;
    BigCell out;
    out.cell = run_cell(cfg, LambdaPolicy::gcv(), o);
    out.seconds = sw.seconds();
    return out;
  }();
  return bc;
}

Verdict table1() {
  const auto& bc = big_cell();
  std::vector<double> th;
  for (std::size_t r = 0; r < 100; ++r)
    if (bc.cell.replicates[r].ok) th.push_back(bc.cell.replicates[r].theta);
  const double k = static_cast<double>(th.size());
  double mean = 0.0;
  for (double v : th) mean += v;
  mean /= k;
  double ss = 0.0;
  for (double v : th) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / (k - 1.0));
  const bool ok = th.size() >= 95 && mean >= 0.96 && mean <= 1.06 && sd >= 0.08 && sd <= 0.15 && bc.seconds < 900.0;
  return {ok, "mean theta " + fmt("%.4f", mean) + ", sd " + fmt("%.4f", sd) + " over " + std::to_string(th.size()) +
                  " fits, cell time " + fmt("%.0f s", bc.seconds)};
}

Verdict table2() {
  const auto& bc = big_cell();
  int usable = 0, covered = 0;
  for (const auto& r : bc.cell.replicates)
    if (r.ok && r.ci_ok) {
      ++usable;
      covered += r.covered ? 1 : 0;
    }
  const double cov = usable > 0 ? static_cast<double>(covered) / usable : 0.0;
  const bool ok = usable >= 190 && cov >= 0.88 && cov <= 0.98 && bc.seconds < 1800.0;
  return {ok, "coverage " + fmt("%.3f", cov) + " (" + std::to_string(covered) + "/" + std::to_string(usable) +
                  " usable intervals)"};
}

// 7 -------------------------------------------------------------------------

Verdict figure1() {
  const Stopwatch sw;
  const double vs[] = {1.0, 1.5, 2.0, 2.5};
  const int ns[] = {50, 100};
  ExperimentOptions o;
  o.reps = 100;
  o.threads = g_threads;
  o.compute_ci = false;
  double mse[2][4];
  bool ok = true;
  std::string detail;
  for (int a = 0; a < 2; ++a) {
    detail += "n=" + std::to_string(ns[a]) + ":";
    for (int b = 0; b < 4; ++b) {
      SimConfig cfg;
      cfg.n = ns[a];
      cfg.v = vs[b];
      cfg.gamma = 3.4;
      const auto cell = run_cell(cfg, LambdaPolicy::gcv(), o);
      mse[a][b] = cell.mean_mse;
      ok = ok && !cell.failed;
      detail += " " + fmt("%.4f", mse[a][b]);
    }
    detail += "; ";
  }
  for (int a = 0; a < 2; ++a)
    for (int b = 1; b < 4; ++b) ok = ok && mse[a][b] < mse[a][b - 1];
  for (int b = 0; b < 4; ++b) ok = ok && mse[1][b] < mse[0][b];
  const double t = sw.seconds();
  return {ok && t < 1800.0, detail + fmt("%.0f s", t)};
}

// 8 -------------------------------------------------------------------------

Verdict gcv_sanity() {
  SimConfig cfg;
  cfg.n = 100;
  cfg.v = 2.0;
  ExperimentOptions o;
  o.reps = 50;
  o.threads = g_threads;
  o.compute_ci = false;
  o.keep_lambda_path = true;
  const auto cell = run_cell(cfg, LambdaPolicy::gcv(), o);
  int near = 0, ok_reps = 0;
  for (const auto& r : cell.replicates) {
    if (!r.ok) continue;
    ++ok_reps;
    double best = std::numeric_limits<double>::infinity();
    for (double m : r.mse_path)
      if (std::isfinite(m)) best = std::min(best, m);
    near += r.mse <= 1.2 * best ? 1 : 0;
  }
  return {near >= 40, std::to_string(near) + "/50 replicates within 20% of the grid-optimal MSE (" +
                          std::to_string(ok_reps) + " fitted)"};
}

// 9 -------------------------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(FCOX_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Verdict determinism() {
  const fs::path dir = fs::temp_directory_path() / "fcox_acceptance_determinism";
  fs::remove_all(dir);
  fs::create_directories(dir);
  {
    SimConfig cfg;
    const SimDesign design(cfg, make_uniform_grid(kDefaultGridSize));
    Rng rng(stream_seed(31, 0));
    write_csv(simulate_dataset(design, 120, rng), (dir / "data.csv").string());
  }
  const std::string data = (dir / "data.csv").string();
  struct Cmd {
    std::string name, args;
    std::vector<std::string> outputs;  // written into the run directory
  };
  const std::vector<Cmd> cmds = {
      {"fit", "fit --data " + data + " --lambda auto --seed 3 --out {}/m.json --curve {}/beta.csv", {"m.json", "m.gcv.csv", "beta.csv"}},
      {"gcv", "gcv --data " + data + " --seed 3 --out {}/g.csv", {"g.csv"}},
      {"infer", "infer --data " + data + " --model {}/m.json --seed 3 --out {}/inf.json", {"inf.json"}},
      {"bootstrap", "bootstrap --data " + data + " --model {}/m.json --reps 200 --seed 3 --out {}/band.csv", {"band.csv"}},
      {"simulate", "simulate --v 2 --n 60 --reps 6 --seed 3 --out {}/r.csv --replicates {}/rr.csv", {"r.csv", "r.json", "rr.csv"}},
  };
  auto expand = [](std::string s, const fs::path& d) {
    for (std::size_t pos; (pos = s.find("{}")) != std::string::npos;) s.replace(pos, 2, d.string());
    return s;
  };
  bool ok = true;
  std::string detail;
  for (const int threads : {1, 8}) {
    for (const char* tag : {"a", "b"}) {
      const fs::path d = dir / (std::to_string(threads) + tag);
      fs::create_directories(d);
      for (const auto& c : cmds) {
        const int code = run_cli(expand(c.args, d) + " --threads " + std::to_string(threads));
        if (code != 0) {
          ok = false;
          detail += c.name + " exited " + std::to_string(code) + "; ";
        }
      }
    }
  }
  int compared = 0;
  const fs::path ref = dir / "1a";
  for (const auto& c : cmds)
    for (const auto& f : c.outputs) {
      const std::string base = slurp(ref / f);
      if (base.empty()) {
        ok = false;
        detail += f + " missing; ";
        continue;
      }
      for (const char* run : {"1b", "8a", "8b"}) {
        ++compared;
        if (slurp(dir / run / f) != base) {
          ok = false;
          detail += f + " differs in run " + run + "; ";
        }
      }
    }
  return {ok, detail + std::to_string(compared) + " output comparisons across 5 subcommands"};
}

// 10 ------------------------------------------------------------------------

Verdict ace_behaviour() {
  const auto& bc = big_cell();
  int monotone = 0, runs = 0;
  for (const auto& r : bc.cell.replicates)
    if (r.ok && r.ci_ok) {
      ++runs;
      monotone += r.ace_monotone ? 1 : 0;
    }

  SimConfig cfg;
  cfg.n = 2000;
  const SimDesign design(cfg, make_uniform_grid(kDefaultGridSize));
  Rng rng(stream_seed(10, 0));
  const Dataset raw = simulate_dataset(design, cfg.n, rng);
  std::normal_distribution<double> N01;
  Eigen::MatrixXd Z(cfg.n, 1);
  for (int i = 0; i < cfg.n; ++i) Z(i, 0) = N01(rng);
  const Dataset ds = center(Dataset(raw.grid(), raw.times(), raw.events(), Z, raw.X()));
  const auto ace = ace_fit(ds, SobolevKernel(ds.grid()));
  const Eigen::VectorXd z = ds.Z().col(0);
  const double var = (z.array() - z.mean()).square().sum() / (cfg.n - 1.0);
  const double target = static_cast<double>(ds.num_events()) / ds.n() * var;
  const double rel = std::abs(ace.info(0, 0) - target) / target;
  return {monotone == runs && runs > 0 && rel <= 0.1,
          std::to_string(monotone) + "/" + std::to_string(runs) + " monotone paths; I = " + fmt("%.4f", ace.info(0, 0)) +
              " vs P(D=1) Var(Z) = " + fmt("%.4f", target) + " (rel " + fmt("%.3f", rel) + ")"};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  g_threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--threads" && i + 1 < argc) {
      g_threads = std::max(1, std::atoi(argv[++i]));
    } else if (a == "--only" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      for (std::string tok; std::getline(ss, tok, ',');) only.insert(std::atoi(tok.c_str()));
    } else {
      std::cerr << "usage: acceptance [--threads N] [--only K[,K...]]\n";
      return 2;
    }
  }

  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
      {"gradient and Hessian vs finite differences", derivatives},
      {"X = 0 reduces to scalar Cox", scalar_oracle},
      {"closed-form kernel and Gram PSD", kernel},
      {"censoring calibration", censoring},
      {"theta mean and sd, n=200 v=1", table1},
      {"CI coverage, n=200 v=1", table2},
      {"MSE decreases in v and n", figure1},
      {"GCV lambda near grid-optimal MSE", gcv_sanity},
      {"CLI determinism across threads", determinism},
      {"ACE monotone path and independent-Z bound", ace_behaviour},
  };

  int failed = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const int id = static_cast<int>(k) + 1;
    if (!only.empty() && !only.count(id)) continue;
    Verdict v;
    try {
      v = criteria[k].second();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    failed += v.pass ? 0 : 1;
    std::cout << (v.pass ? "[PASS] " : "[FAIL] ") << id << ". " << criteria[k].first << ": " << v.detail << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
