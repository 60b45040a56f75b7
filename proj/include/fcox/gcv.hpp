#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "fcox/error.hpp"
#include "fcox/pcox.hpp"

namespace fcox {

/// Components of the GCV score, kept separately for diagnostics.
struct GcvTerms {
  double mean_eta = 0.0;        // (1/n) sum_i eta_i
  double trace = 0.0;           // tr[(S H^-1 S')(diag(Delta) - Delta 1'/n)]
  double mean_log_denom = 0.0;  // (1/N) sum_i Delta_i log sum_{T_j >= T_i} e^{eta_j}
  double score = 0.0;
};

/// GCV(lambda) = -(1/n) sum eta_i + tr[(S H^-1 S')(diag Delta - Delta 1'/n)] / (n(n-1))
///               + (1/N) sum Delta_i log sum_{T_j >= T_i} exp(eta_j),
/// with H the penalized Hessian at the fitted coefficients. The leave-one-out
/// predictor is replaced by its one-step Newton approximation, which is what
/// produces the trace correction.
inline GcvTerms gcv_terms(const FittedModel& model, const DesignSystem& sys, const Dataset& ds) {
  const Eigen::VectorXd c = model.stacked();
  const auto obj = detail::evaluate(c, sys, ds, model.lambda, 2);
  const auto n = static_cast<double>(ds.n());
  const Eigen::VectorXd delta = ds.event_weights();
  const double N = delta.sum();
  if (N <= 0.0) throw InvalidData("GCV needs at least one uncensored record");
  if (ds.n() < 2) throw InvalidData("GCV needs at least two records");

  const Eigen::VectorXd eta = sys.S * c;
  const auto llt = robust_cholesky(obj.hessian);
  const Eigen::MatrixXd HinvSt = llt.solve(sys.S.transpose());  // P x n

  double diag_term = 0.0;
  for (Eigen::Index i = 0; i < ds.n(); ++i)
    if (ds.event(i)) diag_term += sys.S.row(i).dot(HinvSt.col(i));
  const double cross_term = sys.S.colwise().sum().dot(HinvSt * delta) / n;

  // Unpenalized A_0 = (1/n) sum Delta_i (log denom_i - eta_i).
  const double a0 = obj.value - model.lambda * c.dot(sys.Q * c);
  const double sum_log_denom = n * a0 + delta.dot(eta);

  GcvTerms t;
  t.mean_eta = eta.sum() / n;
  t.trace = diag_term - cross_term;
  t.mean_log_denom = sum_log_denom / N;
  t.score = -t.mean_eta + t.trace / (n * (n - 1.0)) + t.mean_log_denom;
  return t;
}

inline double gcv_score(const FittedModel& model, const DesignSystem& sys, const Dataset& ds) {
  return gcv_terms(model, sys, ds).score;
}

/// `count` points log-spaced over [lo, hi], both ends included.
inline std::vector<double> log_spaced(double lo, double hi, int count) {
  if (!(lo > 0.0) || !(hi >= lo) || count < 1) throw InvalidArgument("log_spaced: need 0 < lo <= hi and count >= 1");
  std::vector<double> out(static_cast<std::size_t>(count));
  if (count == 1) {
    out[0] = lo;
    return out;
  }
  const double a = std::log(lo), b = std::log(hi);
  for (int k = 0; k < count; ++k) out[static_cast<std::size_t>(k)] = std::exp(a + (b - a) * k / (count - 1));
  out.front() = lo;
  out.back() = hi;
  return out;
}

inline std::vector<double> default_lambda_grid() { return log_spaced(1e-8, 1e-1, 25); }

struct GcvResult {
  std::vector<double> lambdas;  // strictly increasing
  std::vector<double> scores;   // +inf where the fit failed
  double best_lambda = 0.0;
  std::size_t best_index = 0;
  std::vector<std::optional<FittedModel>> models;  // filled when keep_models is set
};

struct GcvOptions {
  bool warm_start = true;
  bool keep_models = false;
  FitOptions fit;
};

/// Fit at every lambda (largest first, each warm-started from the previous
/// converged fit), score, and return the argmin. Ties go to the larger lambda.
inline GcvResult select_lambda(const Dataset& ds, const DesignSystem& sys, std::vector<double> lambda_grid,
                               const GcvOptions& opts = {}) {
  if (lambda_grid.empty()) throw InvalidArgument("lambda grid is empty");
  for (double l : lambda_grid)
    if (!(l > 0.0) || !std::isfinite(l)) throw InvalidArgument("lambda grid values must be positive");
  std::sort(lambda_grid.begin(), lambda_grid.end());
  lambda_grid.erase(std::unique(lambda_grid.begin(), lambda_grid.end()), lambda_grid.end());

  GcvResult res;
  res.lambdas = lambda_grid;
  res.scores.assign(lambda_grid.size(), std::numeric_limits<double>::infinity());
  if (opts.keep_models) res.models.resize(lambda_grid.size());

  std::optional<Eigen::VectorXd> warm;
  for (std::size_t r = lambda_grid.size(); r-- > 0;) {
    FitOptions fo = opts.fit;
    if (opts.warm_start && warm) fo.initial = warm;
    try {
      auto model = fit(ds, sys, lambda_grid[r], fo);
      const double score = gcv_score(model, sys, ds);
      if (std::isfinite(score)) {
        res.scores[r] = score;
        if (opts.warm_start) warm = model.stacked();
      }
      if (opts.keep_models) res.models[r] = std::move(model);
    } catch (const NumericalError&) {
      // scored +inf
    }
  }

  bool any = false;
  for (std::size_t r = 0; r < res.scores.size(); ++r) {
    if (!std::isfinite(res.scores[r])) continue;
    if (!any || res.scores[r] <= res.scores[res.best_index]) res.best_index = r;
    any = true;
  }
  if (!any) throw NumericalError("every fit on the lambda grid failed");
  res.best_lambda = res.lambdas[res.best_index];
  return res;
}

inline GcvResult select_lambda(const Dataset& ds, const SobolevKernel& kernel, std::vector<double> lambda_grid,
                               const BasisChoice& basis, const GcvOptions& opts = {}) {
  const Dataset centered = ensure_centered(ds);
  return select_lambda(centered, build_design(centered, kernel, basis), std::move(lambda_grid), opts);
}

}  // namespace fcox
