#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "fcox/ace.hpp"
#include "fcox/error.hpp"
#include "fcox/gcv.hpp"
#include "fcox/grid.hpp"
#include "fcox/pcox.hpp"
#include "fcox/sobolev.hpp"
#include "fcox/survival_data.hpp"

namespace fcox {

// Synthetic design: X(s) = sum_k zeta_k U_k phi_k(s) over the cosine basis
// phi_1 = 1, phi_{k+1} = sqrt(2) cos(k pi s), zeta_k = (-1)^{k+1} k^{-v/2},
// U_k ~ U[-3,3]; Z ~ N(0,1); beta_0 = sum_k (-1)^k k^{-3/2} phi_k;
// exponential censoring with mean gamma.

using Rng = std::mt19937_64;

enum class BaselineHazard { Constant, Linear };

inline const char* to_string(BaselineHazard h) { return h == BaselineHazard::Constant ? "const" : "linear"; }

struct SimConfig {
  double v = 2.0;
  int n = 100;
  BaselineHazard h0 = BaselineHazard::Constant;
  double h0_const = 1.0;
  double gamma = 3.4;
  double theta0 = 1.0;
  int n_terms = 50;
  std::uint64_t seed = 1;

  void validate() const {
    if (!(v > 0.0)) throw InvalidArgument("v must be positive");
    if (n < 2) throw InvalidArgument("n must be at least 2");
    if (!(h0_const > 0.0)) throw InvalidArgument("h0 constant must be positive");
    if (!(gamma > 0.0)) throw InvalidArgument("gamma must be positive");
    if (n_terms < 1) throw InvalidArgument("n_terms must be at least 1");
  }
};

/// SplitMix64 finalizer; mixes a master seed with stream coordinates so every
/// replicate owns an independent generator regardless of scheduling.
inline std::uint64_t stream_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b = 0) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(master) ^ a) ^ (b * 0xd6e8feb86659fd93ULL));
}

inline double cosine_basis(int k, double s) {
  return k == 1 ? 1.0 : std::numbers::sqrt2 * std::cos((k - 1) * std::numbers::pi * s);
}

/// Tabulated pieces of the generator shared by all replicates of a cell.
class SimDesign {
 public:
  SimDesign(const SimConfig& cfg, Grid grid) : cfg_(cfg), grid_(std::move(grid)) {
    cfg_.validate();
    const auto G = grid_.size();
    phi_.resize(G, cfg_.n_terms);
    for (Eigen::Index a = 0; a < G; ++a)
      for (int k = 1; k <= cfg_.n_terms; ++k) phi_(a, k - 1) = cosine_basis(k, grid_[a]);
    zeta_.resize(cfg_.n_terms);
    beta_coef_.resize(cfg_.n_terms);
    for (int k = 1; k <= cfg_.n_terms; ++k) {
      const double sign = (k % 2 == 1) ? 1.0 : -1.0;
      zeta_(k - 1) = sign * std::pow(k, -cfg_.v / 2.0);
      beta_coef_(k - 1) = -sign * std::pow(k, -1.5);
    }
    beta0_ = phi_ * beta_coef_;
  }

  const SimConfig& config() const noexcept { return cfg_; }
  const Grid& grid() const noexcept { return grid_; }
  const Eigen::MatrixXd& phi() const noexcept { return phi_; }
  const Eigen::VectorXd& beta0() const noexcept { return beta0_; }
  const Eigen::VectorXd& zeta() const noexcept { return zeta_; }

  /// X on the grid for given U_1..U_K (test hook for the random draw).
  Eigen::VectorXd covariate_from_uniforms(const Eigen::VectorXd& U) const {
    if (U.size() != cfg_.n_terms) throw InvalidArgument("need one uniform per basis term");
    return phi_ * zeta_.cwiseProduct(U);
  }

  /// \int X beta_0 by quadrature.
  double functional_eta(const Eigen::Ref<const Eigen::VectorXd>& x) const { return integrate(x.cwiseProduct(beta0_), grid_); }

  /// -sum_k k^{-(3+v)/2} U_k, the same integral via orthonormality.
  double functional_eta_series(const Eigen::VectorXd& U) const { return beta_coef_.cwiseProduct(zeta_).dot(U); }

 private:
  SimConfig cfg_;
  Grid grid_;
  Eigen::MatrixXd phi_;  // G x K
  Eigen::VectorXd zeta_;
  Eigen::VectorXd beta_coef_;
  Eigen::VectorXd beta0_;
};

struct Covariates {
  double z = 0.0;
  Eigen::VectorXd x;
  Eigen::VectorXd U;
};

inline Covariates gen_covariates(const SimDesign& design, Rng& rng) {
  std::uniform_real_distribution<double> unif(-3.0, 3.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  Covariates c;
  c.U.resize(design.config().n_terms);
  for (Eigen::Index k = 0; k < c.U.size(); ++k) c.U(k) = unif(rng);
  c.z = normal(rng);
  c.x = design.covariate_from_uniforms(c.U);
  return c;
}

inline double true_eta(const SimDesign& design, double z, const Eigen::Ref<const Eigen::VectorXd>& x) {
  return design.config().theta0 * z + design.functional_eta(x);
}

/// Inverse-CDF failure time from a uniform u in (0,1): H(T) = -log u with
/// H(t) = h0 t e^eta (constant) or t^2/2 e^eta (linear).
inline double failure_time(const SimConfig& cfg, double eta, double u) {
  const double e = -std::log(u);
  if (cfg.h0 == BaselineHazard::Constant) return e / (cfg.h0_const * std::exp(eta));
  return std::sqrt(2.0 * e * std::exp(-eta));
}

struct Outcome {
  double time = 0.0;
  bool event = false;
};

inline Outcome gen_survival(const SimConfig& cfg, double eta, Rng& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  double u = unif(rng);
  while (u <= 0.0) u = unif(rng);
  const double t_fail = failure_time(cfg, eta, u);
  std::exponential_distribution<double> censor(1.0 / cfg.gamma);
  const double t_cens = censor(rng);
  return {std::min(t_fail, t_cens), t_fail <= t_cens};
}

/// n records from the generator. Times of zero (underflow) are nudged to the
/// smallest positive double so the dataset invariant holds.
inline Dataset simulate_dataset(const SimDesign& design, int n, Rng& rng) {
  const auto G = design.grid().size();
  Eigen::VectorXd times(n);
  Eigen::VectorXi events(n);
  Eigen::MatrixXd Z(n, 1);
  Eigen::MatrixXd X(n, G);
  for (int i = 0; i < n; ++i) {
    const auto cov = gen_covariates(design, rng);
    const auto out = gen_survival(design.config(), true_eta(design, cov.z, cov.x), rng);
    times(i) = std::max(out.time, std::numeric_limits<double>::denorm_min());
    events(i) = out.event ? 1 : 0;
    Z(i, 0) = cov.z;
    X.row(i) = cov.x.transpose();
  }
  if (events.sum() == 0) throw InvalidData("simulated sample has no events");
  return Dataset(design.grid(), std::move(times), std::move(events), std::move(Z), std::move(X), false);
}

/// sqrt of the Delta-weighted mean of (\int X_i beta_hat - \int X_i beta_0)^2,
/// evaluated on the centered covariates.
inline double mse_beta(const Eigen::VectorXd& beta_hat_on_grid, const std::function<double(const Eigen::VectorXd&)>& truth,
                       const Dataset& ds) {
  const Dataset c = ensure_centered(ds);
  const Eigen::VectorXd fitted = functional_eta(beta_hat_on_grid, c.X(), c.grid());
  double sum = 0.0;
  double N = 0.0;
  for (Eigen::Index i = 0; i < c.n(); ++i) {
    if (!c.event(i)) continue;
    const double diff = fitted(i) - truth(c.X().row(i).transpose());
    sum += diff * diff;
    N += 1.0;
  }
  return std::sqrt(sum / N);
}

inline double mse_beta(const FittedModel& model, const std::function<double(const Eigen::VectorXd&)>& truth,
                       const Dataset& ds) {
  return mse_beta(model.beta_on_grid, truth, ds);
}

// ---------------------------------------------------------------------------
// Parallel map with a fixed output slot per task, so results never depend on
// the number of threads.

template <typename Fn>
void parallel_for(std::size_t count, int threads, Fn&& fn) {
  const auto workers = static_cast<std::size_t>(std::max(1, threads));
  if (workers == 1 || count <= 1) {
    for (std::size_t k = 0; k < count; ++k) fn(k);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < std::min(workers, count); ++w)
    pool.emplace_back([&] {
      for (std::size_t k = next++; k < count; k = next++) fn(k);
    });
  for (auto& t : pool) t.join();
}

// ---------------------------------------------------------------------------
// Experiment runner

struct LambdaPolicy {
  std::optional<double> fixed;           // nullopt: GCV
  std::vector<double> grid = default_lambda_grid();

  static LambdaPolicy gcv() { return {}; }
  static LambdaPolicy fixed_at(double l) { return {l, {}}; }
};

struct ExperimentOptions {
  int reps = 100;
  int threads = 1;
  int grid_size = kDefaultGridSize;
  int order = 2;
  bool compute_ci = true;
  bool keep_lambda_path = false;  // per-replicate MSE at every grid lambda (GCV policy)
  double level = 0.95;
};

struct ReplicateResult {
  bool ok = false;
  std::string error;
  double mse = 0.0;
  double theta = 0.0;
  double lambda = 0.0;
  double censoring = 0.0;
  bool ci_ok = false;
  bool covered = false;
  double ci_low = 0.0;
  double ci_high = 0.0;
  bool ace_monotone = true;
  std::vector<double> mse_path;  // aligned with LambdaPolicy::grid when keep_lambda_path
};

struct CellSummary {
  SimConfig cfg;
  int reps = 0;
  int failures = 0;
  int ci_failures = 0;
  bool failed = false;
  double mean_mse = 0.0;
  double sd_mse = 0.0;
  double mean_theta = 0.0;
  double sd_theta = 0.0;
  double coverage = 0.0;  // over replicates with a usable CI
  double censoring = 0.0;
  double mean_lambda = 0.0;
  std::vector<ReplicateResult> replicates;
};

struct SimReport {
  std::vector<CellSummary> cells;
};

/// Every replicate r draws from stream (seed, r) in every cell, so cells that
/// differ in v or n see common random numbers.
inline ReplicateResult run_replicate(const SimDesign& design, const SobolevKernel& kernel, const LambdaPolicy& policy,
                                     const ExperimentOptions& opts, std::size_t rep) {
  ReplicateResult rr;
  try {
    const SimConfig& cfg = design.config();
    Rng rng(stream_seed(cfg.seed, rep));
    const Dataset raw = simulate_dataset(design, cfg.n, rng);
    const Dataset ds = center(raw);
    const std::uint64_t basis_seed = rng();
    const DesignSystem sys = build_design(ds, kernel, BasisChoice::reduced(0, basis_seed));
    auto truth = [&](const Eigen::VectorXd& x) { return design.functional_eta(x); };

    FittedModel model;
    if (policy.fixed) {
      model = fit(ds, sys, *policy.fixed);
    } else {
      GcvOptions go;
      go.keep_models = true;
      auto res = select_lambda(ds, sys, policy.grid, go);
      model = *res.models[res.best_index];
      if (opts.keep_lambda_path) {
        rr.mse_path.assign(res.lambdas.size(), std::numeric_limits<double>::quiet_NaN());
        for (std::size_t k = 0; k < res.lambdas.size(); ++k)
          if (res.models[k]) rr.mse_path[k] = mse_beta(*res.models[k], truth, ds);
      }
    }
    rr.mse = mse_beta(model, truth, ds);
    rr.theta = model.coef.theta(0);
    rr.lambda = model.lambda;
    rr.censoring = 1.0 - static_cast<double>(ds.num_events()) / ds.n();
    if (opts.compute_ci) {
      try {
        AceOptions ao;
        ao.seed = basis_seed;
        const auto ace = ace_fit(ds, kernel, ao);
        for (const auto& path : ace.objective)
          for (std::size_t k = 1; k < path.size(); ++k)
            if (path[k] > path[k - 1]) rr.ace_monotone = false;
        const auto inf = theta_ci(model, ace.info, ds.n(), opts.level);
        rr.ci_ok = true;
        rr.ci_low = inf.ci_low(0);
        rr.ci_high = inf.ci_high(0);
        rr.covered = inf.ci_low(0) <= cfg.theta0 && cfg.theta0 <= inf.ci_high(0);
      } catch (const std::exception&) {
        rr.ci_ok = false;
      }
    }
    rr.ok = true;
  } catch (const std::exception& e) {
    rr.ok = false;
    rr.error = e.what();
  }
  return rr;
}

inline CellSummary summarize_cell(const SimConfig& cfg, std::vector<ReplicateResult> reps) {
  CellSummary cs;
  cs.cfg = cfg;
  cs.reps = static_cast<int>(reps.size());
  double s_mse = 0, ss_mse = 0, s_th = 0, ss_th = 0, s_cens = 0, s_lam = 0;
  int ok = 0, ci = 0, covered = 0;
  for (const auto& r : reps) {
    if (!r.ok) {
      ++cs.failures;
      continue;
    }
    ++ok;
    s_mse += r.mse;
    ss_mse += r.mse * r.mse;
    s_th += r.theta;
    ss_th += r.theta * r.theta;
    s_cens += r.censoring;
    s_lam += r.lambda;
    if (r.ci_ok) {
      ++ci;
      covered += r.covered ? 1 : 0;
    } else {
      ++cs.ci_failures;
    }
  }
  auto sd = [](double s, double ss, int k) { return k > 1 ? std::sqrt(std::max(0.0, (ss - s * s / k) / (k - 1))) : 0.0; };
  if (ok > 0) {
    cs.mean_mse = s_mse / ok;
    cs.sd_mse = sd(s_mse, ss_mse, ok);
    cs.mean_theta = s_th / ok;
    cs.sd_theta = sd(s_th, ss_th, ok);
    cs.censoring = s_cens / ok;
    cs.mean_lambda = s_lam / ok;
  }
  cs.coverage = ci > 0 ? static_cast<double>(covered) / ci : 0.0;
  cs.failed = cs.failures > 0.05 * cs.reps;
  cs.replicates = std::move(reps);
  return cs;
}

inline CellSummary run_cell(const SimConfig& cfg, const LambdaPolicy& policy, const ExperimentOptions& opts) {
  if (opts.reps < 1) throw InvalidArgument("reps must be at least 1");
  const SimDesign design(cfg, make_uniform_grid(opts.grid_size));
  const SobolevKernel kernel(design.grid(), opts.order);
  std::vector<ReplicateResult> reps(static_cast<std::size_t>(opts.reps));
  parallel_for(reps.size(), opts.threads, [&](std::size_t r) { reps[r] = run_replicate(design, kernel, policy, opts, r); });
  return summarize_cell(cfg, std::move(reps));
}

inline SimReport run_experiment(const std::vector<SimConfig>& cells, const LambdaPolicy& policy,
                                const ExperimentOptions& opts) {
  SimReport report;
  for (const auto& cfg : cells) report.cells.push_back(run_cell(cfg, policy, opts));
  return report;
}

/// Censoring probability of the generator, estimated from `draws` records.
inline double empirical_censoring(const SimConfig& cfg, int draws, int grid_size = kDefaultGridSize) {
  const SimDesign design(cfg, make_uniform_grid(grid_size));
  Rng rng(stream_seed(cfg.seed, 0xC3));
  int censored = 0;
  for (int i = 0; i < draws; ++i) {
    const auto cov = gen_covariates(design, rng);
    censored += gen_survival(cfg, true_eta(design, cov.z, cov.x), rng).event ? 0 : 1;
  }
  return static_cast<double>(censored) / draws;
}

// ---------------------------------------------------------------------------
// Pairs bootstrap

struct BootstrapOptions {
  int B = 500;
  double level = 0.95;
  std::uint64_t seed = 1;
  int threads = 1;
  int max_redraws = 100;
};

struct BootstrapBand {
  double level = 0.95;
  Eigen::VectorXd lower;      // on the grid
  Eigen::VectorXd upper;
  Eigen::VectorXd eta_lower;  // \int X_i beta over the original (centered) records
  Eigen::VectorXd eta_upper;
  Eigen::MatrixXd draws;      // B x G bootstrap curves
  Eigen::MatrixXd eta_draws;  // B x n
  int failures = 0;
};

namespace detail {

/// Quantile with linear interpolation between order statistics.
inline double quantile_sorted(const std::vector<double>& x, double q) {
  const double pos = q * static_cast<double>(x.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, x.size() - 1);
  return x[lo] + (pos - static_cast<double>(lo)) * (x[hi] - x[lo]);
}

inline void percentile_band(const Eigen::MatrixXd& draws, double level, Eigen::VectorXd& lo, Eigen::VectorXd& hi) {
  lo.resize(draws.cols());
  hi.resize(draws.cols());
  std::vector<double> col(static_cast<std::size_t>(draws.rows()));
  for (Eigen::Index a = 0; a < draws.cols(); ++a) {
    for (Eigen::Index b = 0; b < draws.rows(); ++b) col[static_cast<std::size_t>(b)] = draws(b, a);
    std::sort(col.begin(), col.end());
    lo(a) = quantile_sorted(col, 0.5 * (1.0 - level));
    hi(a) = quantile_sorted(col, 0.5 * (1.0 + level));
  }
}

}  // namespace detail

/// Resample records with replacement, refit at the fixed lambda with the
/// original basis curves, and take pointwise percentiles.
inline BootstrapBand bootstrap_beta_band(const Dataset& ds, const SobolevKernel& kernel, double lambda,
                                         const Eigen::MatrixXd& basis_curves, const BootstrapOptions& opts,
                                         const std::optional<Eigen::VectorXd>& warm = std::nullopt) {
  if (opts.B < 100) throw InvalidArgument("bootstrap needs B >= 100");
  if (!(opts.level > 0.0 && opts.level < 1.0)) throw InvalidArgument("level must lie in (0,1)");
  const Dataset centered = ensure_centered(ds);
  const auto G = ds.grid().size();
  BootstrapBand band;
  band.level = opts.level;
  band.draws.resize(opts.B, G);
  std::vector<char> ok(static_cast<std::size_t>(opts.B), 0);
  std::vector<std::string> errors(static_cast<std::size_t>(opts.B));

  parallel_for(static_cast<std::size_t>(opts.B), opts.threads, [&](std::size_t b) {
    try {
      Rng rng(stream_seed(opts.seed, b, 0xB0));
      std::uniform_int_distribution<Eigen::Index> pick(0, ds.n() - 1);
      std::optional<Dataset> sample;
      for (int attempt = 0; attempt <= opts.max_redraws && !sample; ++attempt) {
        std::vector<Eigen::Index> idx(static_cast<std::size_t>(ds.n()));
        int events = 0;
        for (auto& i : idx) {
          i = pick(rng);
          events += ds.events()(i);
        }
        if (events > 0) sample = center(ds.subset(idx));
      }
      if (!sample) throw InvalidData("bootstrap resample without events after redraws");
      const auto sys = build_design(*sample, kernel, BasisChoice::from_curves(basis_curves));
      FitOptions fo;
      fo.initial = warm;
      const auto model = fit(*sample, sys, lambda, fo);
      band.draws.row(static_cast<Eigen::Index>(b)) = model.beta_on_grid.transpose();
      ok[b] = 1;
    } catch (const std::exception& e) {
      errors[b] = e.what();
    }
  });

  std::vector<Eigen::Index> good;
  for (std::size_t b = 0; b < ok.size(); ++b)
    if (ok[b]) good.push_back(static_cast<Eigen::Index>(b));
  band.failures = opts.B - static_cast<int>(good.size());
  if (good.size() < 2) throw NumericalError("bootstrap: too few successful refits");
  if (band.failures > 0) band.draws = Eigen::MatrixXd(band.draws(good, Eigen::all));

  band.eta_draws = band.draws * ds.grid().weights().asDiagonal() * centered.X().transpose();
  detail::percentile_band(band.draws, opts.level, band.lower, band.upper);
  detail::percentile_band(band.eta_draws, opts.level, band.eta_lower, band.eta_upper);
  return band;
}

inline BootstrapBand bootstrap_beta_band(const Dataset& ds, const FittedModel& model, const BootstrapOptions& opts) {
  const SobolevKernel kernel(model.grid, model.order);
  return bootstrap_beta_band(ds, kernel, model.lambda, model.basis_curves, opts, model.stacked());
}

}  // namespace fcox
