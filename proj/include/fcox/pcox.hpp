#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "fcox/error.hpp"
#include "fcox/grid.hpp"
#include "fcox/sobolev.hpp"
#include "fcox/survival_data.hpp"

namespace fcox {

// Penalized partial likelihood for the functional Cox model
//
//   h(t | Z, X) = h0(t) exp(theta'Z + \int X(s) beta(s) ds),
//
// with beta in W_{2,m}. By the representer theorem beta lives in
//   span{xi_1..xi_m} + span{K1(X~_j, .) : j in basis},
// so the linear predictor of every record is a row of the design S times the
// stacked coefficient vector c = (theta, d, c_beta), and J(beta) = c'Qc.

enum class BasisMode { Full, Reduced, Explicit };

inline const char* to_string(BasisMode m) {
  switch (m) {
    case BasisMode::Full: return "full";
    case BasisMode::Reduced: return "reduced";
    case BasisMode::Explicit: return "explicit";
  }
  return "?";
}

/// Which functions span the kernel part of beta.
struct BasisChoice {
  BasisMode mode = BasisMode::Reduced;
  int q = 0;  // reduced mode; 0 selects default_basis_size
  std::uint64_t seed = 0;
  std::vector<Eigen::Index> indices;      // explicit mode: record indices
  std::optional<Eigen::MatrixXd> curves;  // explicit mode: fixed curves (rows on the grid)

  static BasisChoice full() { return {BasisMode::Full, 0, 0, {}, std::nullopt}; }
  static BasisChoice reduced(int q = 0, std::uint64_t seed = 0) {
    return {BasisMode::Reduced, q, seed, {}, std::nullopt};
  }
  static BasisChoice from_indices(std::vector<Eigen::Index> idx) {
    return {BasisMode::Explicit, 0, 0, std::move(idx), std::nullopt};
  }
  static BasisChoice from_curves(Eigen::MatrixXd c, std::vector<Eigen::Index> idx = {}) {
    return {BasisMode::Explicit, 0, 0, std::move(idx), std::move(c)};
  }
};

/// min(#uncensored, ceil(10 n^0.4)).
inline Eigen::Index default_basis_size(Eigen::Index n, Eigen::Index num_events) {
  const auto rate = static_cast<Eigen::Index>(std::ceil(10.0 * std::pow(static_cast<double>(n), 0.4)));
  return std::min(num_events, rate);
}

/// Uncensored record indices in a canonical order (time, then Z, then X,
/// lexicographically) so that seeded subsampling does not depend on record order.
inline std::vector<Eigen::Index> canonical_uncensored(const Dataset& ds) {
  std::vector<Eigen::Index> idx;
  for (Eigen::Index i = 0; i < ds.n(); ++i)
    if (ds.event(i)) idx.push_back(i);
  auto key_less = [&](Eigen::Index a, Eigen::Index b) {
    if (ds.times()(a) != ds.times()(b)) return ds.times()(a) < ds.times()(b);
    for (Eigen::Index k = 0; k < ds.p(); ++k)
      if (ds.Z()(a, k) != ds.Z()(b, k)) return ds.Z()(a, k) < ds.Z()(b, k);
    for (Eigen::Index k = 0; k < ds.X().cols(); ++k)
      if (ds.X()(a, k) != ds.X()(b, k)) return ds.X()(a, k) < ds.X()(b, k);
    return false;
  };
  std::stable_sort(idx.begin(), idx.end(), key_less);
  return idx;
}

/// Seeded uniform sample of q elements without replacement (partial Fisher-Yates).
inline std::vector<Eigen::Index> sample_without_replacement(std::vector<Eigen::Index> pool, Eigen::Index q,
                                                            std::uint64_t seed) {
  const auto N = static_cast<Eigen::Index>(pool.size());
  std::mt19937_64 rng(seed);
  for (Eigen::Index k = 0; k < q; ++k) {
    std::uniform_int_distribution<Eigen::Index> pick(k, N - 1);
    std::swap(pool[static_cast<std::size_t>(k)], pool[static_cast<std::size_t>(pick(rng))]);
  }
  pool.resize(static_cast<std::size_t>(q));
  return pool;
}

struct DesignSystem {
  Eigen::MatrixXd S;  // n x (p + m + nb): [Z | \int X_i xi_nu | \int X_i K1(X~_j, .)]
  Eigen::MatrixXd Q;  // penalty; nonzero only in the trailing nb x nb block
  Eigen::Index p = 0;
  Eigen::Index m = 0;
  Eigen::Index nb = 0;
  BasisMode mode = BasisMode::Reduced;
  std::vector<Eigen::Index> basis_index;
  Eigen::MatrixXd basis_curves;    // nb x G
  Eigen::MatrixXd basis_sections;  // G x nb, K1(X~_j, t) at grid points
  Eigen::MatrixXd null_table;      // G x m

  Eigen::Index dim() const noexcept { return p + m + nb; }
  Eigen::Index kernel_offset() const noexcept { return p + m; }
};

/// Unpacked view of the stacked coefficient vector.
struct CoefVector {
  Eigen::VectorXd theta;
  Eigen::VectorXd d;
  Eigen::VectorXd c_beta;

  static CoefVector split(const Eigen::VectorXd& c, Eigen::Index p, Eigen::Index m) {
    const Eigen::Index nb = c.size() - p - m;
    return {c.head(p), c.segment(p, m), c.tail(nb)};
  }
  Eigen::VectorXd stacked() const {
    Eigen::VectorXd c(theta.size() + d.size() + c_beta.size());
    c << theta, d, c_beta;
    return c;
  }
};

inline DesignSystem build_design(const Dataset& ds, const SobolevKernel& kernel, const BasisChoice& basis) {
  if (!ds.centered()) throw InvalidArgument("build_design: dataset must be centered");
  if (!(ds.grid() == kernel.grid())) throw InvalidArgument("build_design: kernel and dataset grids differ");

  DesignSystem sys;
  sys.p = ds.p();
  sys.m = kernel.order();
  sys.mode = basis.mode;
  sys.null_table = kernel.null_table();

  if (basis.mode == BasisMode::Full) {
    sys.basis_index.resize(static_cast<std::size_t>(ds.n()));
    std::iota(sys.basis_index.begin(), sys.basis_index.end(), Eigen::Index{0});
  } else if (basis.mode == BasisMode::Reduced) {
    const auto uncensored = canonical_uncensored(ds);
    const auto N = static_cast<Eigen::Index>(uncensored.size());
    const Eigen::Index q = basis.q > 0 ? basis.q : default_basis_size(ds.n(), N);
    if (q > N)
      throw InvalidArgument("reduced basis size " + std::to_string(q) + " exceeds the " + std::to_string(N) +
                            " uncensored records");
    sys.basis_index = sample_without_replacement(uncensored, q, basis.seed);
  } else {
    sys.basis_index = basis.indices;
    for (auto i : sys.basis_index)
      if (i < 0 || i >= ds.n()) throw InvalidArgument("basis index out of range");
  }

  if (basis.mode == BasisMode::Explicit && basis.curves) {
    if (basis.curves->cols() != ds.grid().size()) throw InvalidArgument("basis curves are not on the dataset grid");
    sys.basis_curves = *basis.curves;
  } else {
    sys.basis_curves.resize(static_cast<Eigen::Index>(sys.basis_index.size()), ds.grid().size());
    for (std::size_t k = 0; k < sys.basis_index.size(); ++k)
      sys.basis_curves.row(static_cast<Eigen::Index>(k)) = ds.X().row(sys.basis_index[k]);
  }
  sys.nb = sys.basis_curves.rows();
  sys.basis_sections = kernel.k1_sections(sys.basis_curves);

  const auto& w = ds.grid().weights();
  const Eigen::MatrixXd Xw = ds.X() * w.asDiagonal();
  sys.S.resize(ds.n(), sys.dim());
  sys.S.leftCols(sys.p) = ds.Z();
  sys.S.middleCols(sys.p, sys.m) = Xw * sys.null_table;
  sys.S.rightCols(sys.nb) = Xw * sys.basis_sections;

  sys.Q = Eigen::MatrixXd::Zero(sys.dim(), sys.dim());
  const Eigen::MatrixXd gram = kernel.gram(sys.basis_curves, sys.basis_curves);
  sys.Q.bottomRightCorner(sys.nb, sys.nb) = 0.5 * (gram + gram.transpose());
  return sys;
}

/// Value and optionally derivatives of A_lambda(c).
struct Objective {
  double value = 0.0;
  Eigen::VectorXd gradient;
  Eigen::MatrixXd hessian;
};

namespace detail {

/// Records sorted by decreasing time; ties end up adjacent.
inline std::vector<Eigen::Index> descending_time_order(const Eigen::VectorXd& times) {
  std::vector<Eigen::Index> order(static_cast<std::size_t>(times.size()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return times(a) > times(b); });
  return order;
}

inline void check_dims(const Eigen::VectorXd& c, const DesignSystem& sys, const Dataset& ds) {
  if (c.size() != sys.dim()) throw InvalidArgument("coefficient vector has wrong length");
  if (sys.S.rows() != ds.n()) throw InvalidArgument("design and dataset disagree on n");
}

/// Sweeps risk sets from the latest time backwards, accumulating
/// sum_j Y_j(T_i) e^{eta_j} s_j^{(k)} for k = 0, 1, 2. Every accumulator is
/// kept relative to the running maximum of eta in the current risk set so the
/// log denominators never overflow.
inline Objective evaluate(const Eigen::VectorXd& c, const DesignSystem& sys, const Dataset& ds, double lambda,
                          int derivatives) {
  check_dims(c, sys, ds);
  const Eigen::Index n = ds.n();
  const Eigen::Index P = sys.dim();
  const Eigen::VectorXd eta = sys.S * c;
  const auto order = descending_time_order(ds.times());
  const bool want_grad = derivatives >= 1;
  const bool want_hess = derivatives >= 2;

  double shift = -std::numeric_limits<double>::infinity();
  double s0 = 0.0;
  Eigen::VectorXd s1;
  Eigen::MatrixXd s2;
  Objective out;
  if (want_grad) {
    s1 = Eigen::VectorXd::Zero(P);
    out.gradient = Eigen::VectorXd::Zero(P);
  }
  if (want_hess) {
    s2 = Eigen::MatrixXd::Zero(P, P);
    out.hessian = Eigen::MatrixXd::Zero(P, P);
  }

  double loglik_sum = 0.0;
  std::size_t k = 0;
  while (k < order.size()) {
    std::size_t end = k;
    const double t = ds.times()(order[k]);
    while (end < order.size() && ds.times()(order[end]) == t) ++end;

    double group_max = shift;
    for (std::size_t r = k; r < end; ++r) group_max = std::max(group_max, eta(order[r]));
    if (group_max > shift) {
      const double scale = std::isfinite(shift) ? std::exp(shift - group_max) : 0.0;
      s0 *= scale;
      if (want_grad) s1 *= scale;
      if (want_hess) s2 *= scale;
      shift = group_max;
    }
    int events = 0;
    for (std::size_t r = k; r < end; ++r) {
      const auto j = order[r];
      const double wj = std::exp(eta(j) - shift);
      s0 += wj;
      if (want_grad) s1.noalias() += wj * sys.S.row(j).transpose();
      if (want_hess) s2.selfadjointView<Eigen::Lower>().rankUpdate(sys.S.row(j).transpose(), wj);
      events += ds.events()(j);
    }
    if (events > 0) {
      loglik_sum += events * (shift + std::log(s0));
      for (std::size_t r = k; r < end; ++r)
        if (ds.event(order[r])) loglik_sum -= eta(order[r]);
      if (want_grad) {
        const Eigen::VectorXd mu = s1 / s0;
        out.gradient.noalias() += events * mu;
        if (want_hess) {
          out.hessian.noalias() += (events / s0) * s2;
          out.hessian.selfadjointView<Eigen::Lower>().rankUpdate(mu, -static_cast<double>(events));
        }
      }
    }
    k = end;
  }

  const double inv_n = 1.0 / static_cast<double>(n);
  const Eigen::VectorXd Qc = sys.Q * c;
  out.value = loglik_sum * inv_n + lambda * c.dot(Qc);
  if (want_grad) {
    out.gradient -= sys.S.transpose() * ds.event_weights();
    out.gradient *= inv_n;
    out.gradient += 2.0 * lambda * Qc;
  }
  if (want_hess) {
    Eigen::MatrixXd full = out.hessian.selfadjointView<Eigen::Lower>();
    out.hessian = inv_n * full;
    out.hessian += 2.0 * lambda * sys.Q;
  }
  return out;
}

}  // namespace detail

inline double neg_log_partial_lik(const Eigen::VectorXd& c, const DesignSystem& sys, const Dataset& ds,
                                  double lambda) {
  return detail::evaluate(c, sys, ds, lambda, 0).value;
}

inline std::pair<Eigen::VectorXd, Eigen::MatrixXd> gradient_hessian(const Eigen::VectorXd& c,
                                                                   const DesignSystem& sys, const Dataset& ds,
                                                                   double lambda) {
  auto obj = detail::evaluate(c, sys, ds, lambda, 2);
  return {std::move(obj.gradient), std::move(obj.hessian)};
}

/// Cholesky of a PSD matrix, adding ridge jitter 1e-10 * trace/dim and growing
/// it tenfold up to three times if the plain factorization fails. A
/// factorization whose smallest pivot is below 1e-13 of the largest counts as
/// failed.
inline Eigen::LLT<Eigen::MatrixXd> robust_cholesky(const Eigen::MatrixXd& H) {
  auto usable = [](const Eigen::LLT<Eigen::MatrixXd>& f) {
    if (f.info() != Eigen::Success) return false;
    const Eigen::VectorXd piv = f.matrixLLT().diagonal().cwiseAbs2();
    return piv.size() == 0 || piv.minCoeff() > 1e-13 * piv.maxCoeff();
  };
  Eigen::LLT<Eigen::MatrixXd> llt(H);
  if (usable(llt)) return llt;
  const double tr = H.trace();
  double jitter = 1e-10 * (tr > 0.0 ? tr / static_cast<double>(H.rows()) : 1.0);
  for (int attempt = 0; attempt <= 3; ++attempt, jitter *= 10.0) {
    Eigen::MatrixXd Hj = H;
    Hj.diagonal().array() += jitter;
    llt.compute(Hj);
    if (attempt == 3 ? llt.info() == Eigen::Success : usable(llt)) return llt;
  }
  throw NumericalError("Hessian is singular even after ridge escalation (trace " + std::to_string(tr) + ")");
}

namespace detail {

/// Newton direction -H^+ g. Cholesky when H is comfortably positive definite;
/// otherwise an eigen-decomposition that leaves directions at rounding-level
/// curvature untouched and solves the rest exactly. A ridge would also damp
/// genuine low-curvature directions, which then converge only linearly.
inline Eigen::VectorXd newton_direction(const Eigen::MatrixXd& H, const Eigen::VectorXd& g) {
  Eigen::LLT<Eigen::MatrixXd> llt(H);
  if (llt.info() == Eigen::Success) {
    const Eigen::VectorXd piv = llt.matrixLLT().diagonal().cwiseAbs2();
    if (piv.size() == 0 || piv.minCoeff() > 1e-13 * piv.maxCoeff()) return -llt.solve(g);
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(H);
  if (eig.info() != Eigen::Success) throw NumericalError("Hessian eigen-decomposition failed");
  const double top = eig.eigenvalues().maxCoeff();
  if (!(top > 0.0) || !std::isfinite(top))
    throw NumericalError("Hessian has no positive curvature (largest eigenvalue " + std::to_string(top) + ")");
  const double cut = std::numeric_limits<double>::epsilon() * top;
  const Eigen::VectorXd inv = eig.eigenvalues().unaryExpr([cut](double v) { return v > cut ? 1.0 / v : 0.0; });
  return -(eig.eigenvectors() * inv.asDiagonal() * (eig.eigenvectors().transpose() * g));
}

}  // namespace detail

struct FitOptions {
  int max_iterations = 50;
  double rel_tol = 1e-9;
  double grad_tol = 1e-8;
  std::optional<Eigen::VectorXd> initial;  // warm start; zero otherwise
};

struct FittedModel {
  CoefVector coef;
  Eigen::VectorXd beta_on_grid;
  double lambda = 0.0;
  double neg_loglik = 0.0;
  int iterations = 0;
  bool converged = false;
  std::vector<double> objective_path;  // A_lambda at the start and after each accepted step

  int order = 2;
  Grid grid;
  BasisMode mode = BasisMode::Reduced;
  std::vector<Eigen::Index> basis_index;
  Eigen::MatrixXd basis_curves;  // nb x G

  Eigen::VectorXd stacked() const { return coef.stacked(); }
  Eigen::Index p() const { return coef.theta.size(); }
};

inline Eigen::VectorXd beta_on_grid(const Eigen::VectorXd& c, const DesignSystem& sys) {
  return sys.null_table * c.segment(sys.p, sys.m) + sys.basis_sections * c.tail(sys.nb);
}

/// Newton-Raphson on A_lambda with step halving. Each accepted step strictly
/// decreases the objective.
inline FittedModel fit(const Dataset& ds, const DesignSystem& sys, double lambda, const FitOptions& opts = {}) {
  if (!(lambda > 0.0)) throw InvalidArgument("lambda must be positive");
  if (!ds.centered()) throw InvalidArgument("fit: dataset must be centered");

  Eigen::VectorXd c = opts.initial ? *opts.initial : Eigen::VectorXd::Zero(sys.dim());
  if (c.size() != sys.dim()) throw InvalidArgument("warm start has wrong length");

  auto obj = detail::evaluate(c, sys, ds, lambda, 2);
  if (!std::isfinite(obj.value)) throw NumericalError("objective is not finite at the starting point");
  int iterations = 0;
  bool converged = false;
  std::vector<double> path{obj.value};
  while (iterations < opts.max_iterations) {
    if (obj.gradient.lpNorm<Eigen::Infinity>() < opts.grad_tol) {
      converged = true;
      break;
    }
    const Eigen::VectorXd step = detail::newton_direction(obj.hessian, obj.gradient);
    const double decrement = -obj.gradient.dot(step);
    const double scale = std::max(1.0, std::abs(obj.value));
    // Stop on the Newton-predicted decrease, not the realized one: a damped
    // step or a flat direction can decrease A very little far from the optimum.
    const bool predicted_small = 0.5 * decrement < opts.rel_tol * scale;

    double t = 1.0;
    bool accepted = false;
    double trial_value = 0.0;
    for (int halving = 0; halving < 40; ++halving, t *= 0.5) {
      trial_value = detail::evaluate(c + t * step, sys, ds, lambda, 0).value;
      if (std::isfinite(trial_value) && trial_value < obj.value) {
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      // No representable decrease left: converged iff Newton predicted none.
      converged = predicted_small;
      break;
    }
    c += t * step;
    ++iterations;
    obj = detail::evaluate(c, sys, ds, lambda, 2);
    path.push_back(obj.value);
    if (predicted_small && t == 1.0) {
      converged = true;
      break;
    }
  }

  FittedModel model;
  model.coef = CoefVector::split(c, sys.p, sys.m);
  model.beta_on_grid = beta_on_grid(c, sys);
  model.lambda = lambda;
  model.neg_loglik = obj.value;
  model.iterations = iterations;
  model.converged = converged;
  model.objective_path = std::move(path);
  model.order = static_cast<int>(sys.m);
  model.grid = ds.grid();
  model.mode = sys.mode;
  model.basis_index = sys.basis_index;
  model.basis_curves = sys.basis_curves;
  return model;
}

inline FittedModel fit(const Dataset& ds, const SobolevKernel& kernel, double lambda, const BasisChoice& basis,
                       const FitOptions& opts = {}) {
  const Dataset centered = ensure_centered(ds);
  return fit(centered, build_design(centered, kernel, basis), lambda, opts);
}

/// beta_hat(s) = sum_nu d_nu xi_nu(s) + sum_j c_j K1(X~_j, s), for any s in [0,1].
inline double eval_beta(const FittedModel& model, double s) {
  if (!(s >= 0.0 && s <= 1.0)) throw InvalidArgument("eval_beta: s must lie in [0,1]");
  double value = 0.0;
  for (Eigen::Index nu = 0; nu < model.coef.d.size(); ++nu)
    value += model.coef.d(nu) * null_basis(static_cast<int>(nu) + 1, s);
  const auto& w = model.grid.weights();
  for (Eigen::Index j = 0; j < model.coef.c_beta.size(); ++j) {
    if (model.coef.c_beta(j) == 0.0) continue;
    double section = 0.0;
    for (Eigen::Index a = 0; a < model.grid.size(); ++a)
      section += w(a) * model.basis_curves(j, a) * k1(model.grid[a], s, model.order);
    value += model.coef.c_beta(j) * section;
  }
  return value;
}

/// Functional part of the linear predictor, \int X_i beta, for every row of X.
inline Eigen::VectorXd functional_eta(const Eigen::VectorXd& beta, const Eigen::MatrixXd& X, const Grid& grid) {
  return X * grid.weights().cwiseProduct(beta);
}

/// Full linear predictor theta'Z_i + \int X_i beta_hat on a (centered) dataset.
inline Eigen::VectorXd linear_predictor(const FittedModel& model, const Dataset& ds) {
  return ds.Z() * model.coef.theta + functional_eta(model.beta_on_grid, ds.X(), ds.grid());
}

}  // namespace fcox
