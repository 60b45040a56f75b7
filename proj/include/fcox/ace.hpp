#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "fcox/error.hpp"
#include "fcox/gcv.hpp"
#include "fcox/pcox.hpp"
#include "fcox/sobolev.hpp"
#include "fcox/survival_data.hpp"

namespace fcox {

// Information bound for theta via alternating conditional expectations: find
// (a*, g*) minimizing e(a, g) = (1/n) sum_i Delta_i |Z_i - a(T_i) - \int X_i g|^2,
// then I(theta) = (1/n) sum_i Delta_i r_i r_i' with r_i the residual at (a*, g*).
// Each component of Z is handled by its own ACE run.

struct AceOptions {
  int max_iterations = 20;
  double rel_tol = 1e-4;
  int min_events = 10;
  int ridge_count = 30;  // GCV grid for the functional regression ridge level
  double ridge_min = 1e-10;
  double ridge_max = 1.0;
  int basis_size = 0;  // 0: default_basis_size
  std::uint64_t seed = 0;
};

struct AceResult {
  Eigen::VectorXd times;                       // sorted distinct uncensored times
  Eigen::MatrixXd a_star;                      // times.size() x p
  Eigen::MatrixXd g_star;                      // G x p, on the dataset grid
  std::vector<std::vector<double>> objective;  // e(a, g) after every accepted update, per component
  std::vector<int> iterations;                 // per component
  std::vector<double> ridge;                   // ridge level of the last accepted g-update, per component
  Eigen::MatrixXd info;                        // p x p

  Eigen::Index p() const { return a_star.cols(); }
};

namespace detail {

/// Local-linear regression with a Gaussian kernel, as a linear operator: maps
/// responses at `x` to fitted values at `at`.
inline Eigen::MatrixXd local_linear_operator(const Eigen::VectorXd& x, const Eigen::VectorXd& at, double bandwidth) {
  const Eigen::Index N = x.size();
  Eigen::MatrixXd L(at.size(), N);
  Eigen::VectorXd w(N);
  for (Eigen::Index k = 0; k < at.size(); ++k) {
    const Eigen::ArrayXd u = (x.array() - at(k)) / bandwidth;
    w = (-0.5 * u.square()).exp().matrix();
    const Eigen::ArrayXd dx = x.array() - at(k);
    const double s0 = w.sum();
    const double s1 = (w.array() * dx).sum();
    const double s2 = (w.array() * dx.square()).sum();
    const double denom = s0 * s2 - s1 * s1;
    if (denom > 1e-12 * s0 * s2) {
      L.row(k) = (w.array() * (s2 - dx * s1) / denom).matrix().transpose();
    } else {
      L.row(k) = (w / s0).transpose();  // Nadaraya-Watson fallback
    }
  }
  return L;
}

/// Silverman's rule of thumb: 0.9 min(sd, IQR/1.34) N^{-1/5}.
inline double silverman_bandwidth(std::vector<double> x) {
  const auto N = static_cast<double>(x.size());
  std::sort(x.begin(), x.end());
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= N;
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / (N - 1.0));
  auto quantile = [&](double q) {
    const double pos = q * (N - 1.0);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, x.size() - 1);
    return x[lo] + (pos - static_cast<double>(lo)) * (x[hi] - x[lo]);
  };
  const double iqr = quantile(0.75) - quantile(0.25);
  const double spread = iqr > 0.0 ? std::min(sd, iqr / 1.34) : sd;
  if (!(spread > 0.0)) throw InvalidData("ACE smoother: uncensored times have no spread");
  return 0.9 * spread * std::pow(N, -0.2);
}

/// Penalized least squares of y on the functional design B with penalty P,
/// the ridge level chosen by GCV over a log grid.
struct RidgeFit {
  Eigen::VectorXd coef;
  double ridge = 0.0;
};

inline RidgeFit penalized_regression(const Eigen::MatrixXd& B, const Eigen::MatrixXd& P, const Eigen::VectorXd& y,
                                     const AceOptions& opts) {
  const auto N = static_cast<double>(B.rows());
  const Eigen::MatrixXd BtB = B.transpose() * B / N;
  const Eigen::VectorXd Bty = B.transpose() * y / N;
  RidgeFit best;
  double best_score = std::numeric_limits<double>::infinity();
  for (double rho : log_spaced(opts.ridge_min, opts.ridge_max, opts.ridge_count)) {
    const Eigen::MatrixXd A = BtB + rho * P;
    Eigen::LLT<Eigen::MatrixXd> llt;
    try {
      llt = robust_cholesky(A);
    } catch (const NumericalError&) {
      continue;
    }
    Eigen::VectorXd coef = llt.solve(Bty);
    const double rss = (y - B * coef).squaredNorm();
    const double df = llt.solve(BtB).trace();
    if (!(df < N)) continue;
    const double score = N * rss / ((N - df) * (N - df));
    if (score < best_score) {
      best_score = score;
      best.coef = std::move(coef);
      best.ridge = rho;
    }
  }
  if (!std::isfinite(best_score)) throw NumericalError("functional regression failed at every ridge level");
  return best;
}

inline double residual_objective(const Eigen::VectorXd& residual_uncensored, double n) {
  return residual_uncensored.squaredNorm() / n;
}

}  // namespace detail

inline Eigen::MatrixXd info_bound(const AceResult& ace, const Dataset& ds);

/// Runs ACE separately for each column of Z. `ds` must be centered. Returns the
/// least-favorable directions and the information matrix.
inline AceResult ace_fit(const Dataset& ds, const SobolevKernel& kernel, const AceOptions& opts = {}) {
  if (!ds.centered()) throw InvalidArgument("ace_fit: dataset must be centered");
  std::vector<Eigen::Index> unc;
  for (Eigen::Index i = 0; i < ds.n(); ++i)
    if (ds.event(i)) unc.push_back(i);
  const auto N = static_cast<Eigen::Index>(unc.size());
  if (N < opts.min_events)
    throw InvalidData("ACE needs at least " + std::to_string(opts.min_events) + " uncensored records, got " +
                      std::to_string(N));
  const double n = static_cast<double>(ds.n());

  // Smoother from uncensored records to distinct uncensored times.
  std::vector<double> t_unc;
  for (auto i : unc) t_unc.push_back(ds.times()(i));
  std::vector<double> distinct = t_unc;
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  const auto K = static_cast<Eigen::Index>(distinct.size());
  std::vector<Eigen::Index> slot(static_cast<std::size_t>(N));  // uncensored record -> distinct time
  for (Eigen::Index r = 0; r < N; ++r)
    slot[static_cast<std::size_t>(r)] = std::lower_bound(distinct.begin(), distinct.end(), t_unc[static_cast<std::size_t>(r)]) - distinct.begin();
  const Eigen::VectorXd tx = Eigen::Map<Eigen::VectorXd>(t_unc.data(), N);
  const Eigen::VectorXd tk = Eigen::Map<Eigen::VectorXd>(distinct.data(), K);
  const Eigen::MatrixXd smoother = detail::local_linear_operator(tx, tk, detail::silverman_bandwidth(t_unc));

  // Functional regression design over uncensored records; kernel basis sampled
  // from them in canonical order.
  Eigen::MatrixXd Xu(N, ds.grid().size());
  for (Eigen::Index r = 0; r < N; ++r) Xu.row(r) = ds.X().row(unc[static_cast<std::size_t>(r)]);
  const Eigen::Index q =
      opts.basis_size > 0 ? std::min<Eigen::Index>(opts.basis_size, N) : default_basis_size(ds.n(), N);
  const auto basis_records = sample_without_replacement(canonical_uncensored(ds), q, opts.seed);
  Eigen::MatrixXd basis(q, ds.grid().size());
  for (Eigen::Index k = 0; k < q; ++k) basis.row(k) = ds.X().row(basis_records[static_cast<std::size_t>(k)]);
  const Eigen::Index m = kernel.order();
  Eigen::MatrixXd functions(ds.grid().size(), m + q);  // g = functions * coef on the grid
  functions << kernel.null_table(), kernel.k1_sections(basis);
  const Eigen::MatrixXd B = Xu * ds.grid().weights().asDiagonal() * functions;
  Eigen::MatrixXd P = Eigen::MatrixXd::Zero(m + q, m + q);
  const Eigen::MatrixXd gram = kernel.gram(basis, basis);
  P.bottomRightCorner(q, q) = 0.5 * (gram + gram.transpose());

  const Eigen::Index p = ds.p();
  AceResult res;
  res.times = tk;
  res.a_star = Eigen::MatrixXd::Zero(K, p);
  res.g_star = Eigen::MatrixXd::Zero(ds.grid().size(), p);
  res.objective.resize(static_cast<std::size_t>(p));
  res.iterations.assign(static_cast<std::size_t>(p), 0);
  res.ridge.assign(static_cast<std::size_t>(p), 0.0);

  for (Eigen::Index comp = 0; comp < p; ++comp) {
    Eigen::VectorXd z(N);
    for (Eigen::Index r = 0; r < N; ++r) z(r) = ds.Z()(unc[static_cast<std::size_t>(r)], comp);

    // a-update: pool ties, smooth, read back at each record's time.
    auto update_a = [&](const Eigen::VectorXd& eta_g) {
      const Eigen::VectorXd target = z - eta_g;
      Eigen::VectorXd sum = Eigen::VectorXd::Zero(K), cnt = Eigen::VectorXd::Zero(K);
      for (Eigen::Index r = 0; r < N; ++r) {
        sum(slot[static_cast<std::size_t>(r)]) += target(r);
        cnt(slot[static_cast<std::size_t>(r)]) += 1.0;
      }
      Eigen::VectorXd pooled(N);
      for (Eigen::Index r = 0; r < N; ++r) pooled(r) = sum(slot[static_cast<std::size_t>(r)]) / cnt(slot[static_cast<std::size_t>(r)]);
      return Eigen::VectorXd(smoother * pooled);
    };
    auto a_at_records = [&](const Eigen::VectorXd& a_k) {
      Eigen::VectorXd out(N);
      for (Eigen::Index r = 0; r < N; ++r) out(r) = a_k(slot[static_cast<std::size_t>(r)]);
      return out;
    };

    Eigen::VectorXd coef = Eigen::VectorXd::Zero(m + q);
    Eigen::VectorXd eta_g = Eigen::VectorXd::Zero(N);
    Eigen::VectorXd a_k = update_a(eta_g);
    double e = detail::residual_objective(z - a_at_records(a_k) - eta_g, n);
    auto& path = res.objective[static_cast<std::size_t>(comp)];
    path.push_back(e);

    int iter = 0;
    while (iter < opts.max_iterations) {
      ++iter;
      const double e_start = e;
      bool improved = false;

      const auto rf = detail::penalized_regression(B, P, z - a_at_records(a_k), opts);
      const Eigen::VectorXd eta_try = B * rf.coef;
      const double e_g = detail::residual_objective(z - a_at_records(a_k) - eta_try, n);
      if (e_g < e) {
        coef = rf.coef;
        eta_g = eta_try;
        e = e_g;
        res.ridge[static_cast<std::size_t>(comp)] = rf.ridge;
        path.push_back(e);
        improved = true;
      }

      const Eigen::VectorXd a_try = update_a(eta_g);
      const double e_a = detail::residual_objective(z - a_at_records(a_try) - eta_g, n);
      if (e_a < e) {
        a_k = a_try;
        e = e_a;
        path.push_back(e);
        improved = true;
      }

      if (!improved || (e_start - e) < opts.rel_tol * e_start) break;
    }
    res.iterations[static_cast<std::size_t>(comp)] = iter;
    res.a_star.col(comp) = a_k;
    res.g_star.col(comp) = functions * coef;
  }
  res.info = info_bound(res, ds);
  return res;
}

/// ACE depends only on the data; the model supplies the kernel order and grid.
inline AceResult ace_fit(const Dataset& ds, const FittedModel& model, const AceOptions& opts = {}) {
  return ace_fit(ds, SobolevKernel(model.grid, model.order), opts);
}

/// Residuals Z_i - a*(T_i) - \int X_i g* for uncensored records (zero rows for censored).
inline Eigen::MatrixXd ace_residuals(const AceResult& ace, const Dataset& ds) {
  if (ace.p() != ds.p()) throw InvalidArgument("ACE result and dataset disagree on p");
  if (ace.g_star.rows() != ds.grid().size()) throw InvalidArgument("ACE result is not on the dataset grid");
  const Eigen::MatrixXd eta_g = ds.X() * ds.grid().weights().asDiagonal() * ace.g_star;  // n x p
  Eigen::MatrixXd r = Eigen::MatrixXd::Zero(ds.n(), ds.p());
  for (Eigen::Index i = 0; i < ds.n(); ++i) {
    if (!ds.event(i)) continue;
    const double t = ds.times()(i);
    const auto* first = ace.times.data();
    const auto* last = first + ace.times.size();
    const auto* it = std::lower_bound(first, last, t);
    if (it == last || *it != t) throw InvalidArgument("ACE result has no a*(T) at an uncensored time");
    r.row(i) = ds.Z().row(i) - ace.a_star.row(it - first) - eta_g.row(i);
  }
  return r;
}

/// e(a, g) at the stored directions, per component.
inline Eigen::VectorXd ace_objective(const AceResult& ace, const Dataset& ds) {
  return ace_residuals(ace, ds).colwise().squaredNorm().transpose() / static_cast<double>(ds.n());
}

/// (1/n) sum_i Delta_i r_i r_i'.
inline Eigen::MatrixXd info_bound(const AceResult& ace, const Dataset& ds) {
  const Eigen::MatrixXd r = ace_residuals(ace, ds);
  return r.transpose() * r / static_cast<double>(ds.n());
}

struct ThetaInference {
  Eigen::VectorXd theta_hat;
  Eigen::VectorXd std_err;
  Eigen::VectorXd ci_low;
  Eigen::VectorXd ci_high;
  double level = 0.95;
};

/// Wald interval theta_hat +- z_{(1+level)/2} sqrt(diag(I^-1)/n).
inline ThetaInference theta_ci(const Eigen::VectorXd& theta_hat, const Eigen::MatrixXd& info, Eigen::Index n,
                               double level = 0.95) {
  if (!(level > 0.0 && level < 1.0)) throw InvalidArgument("confidence level must lie in (0,1)");
  if (info.rows() != theta_hat.size() || info.cols() != theta_hat.size())
    throw InvalidArgument("information matrix does not match theta");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (info + info.transpose()));
  const double lo = eig.eigenvalues().minCoeff();
  const double hi = eig.eigenvalues().maxCoeff();
  if (!(lo > 0.0) || hi / lo > 1e12) {
    const double cond = lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity();
    throw NumericalError("information matrix is singular (condition number " + std::to_string(cond) + ")");
  }
  const Eigen::MatrixXd inv = eig.eigenvectors() * eig.eigenvalues().cwiseInverse().asDiagonal() *
                              eig.eigenvectors().transpose();
  const double zq = boost::math::quantile(boost::math::normal(), 0.5 * (1.0 + level));
  ThetaInference out;
  out.level = level;
  out.theta_hat = theta_hat;
  out.std_err = (inv.diagonal() / static_cast<double>(n)).cwiseSqrt();
  out.ci_low = theta_hat - zq * out.std_err;
  out.ci_high = theta_hat + zq * out.std_err;
  return out;
}

inline ThetaInference theta_ci(const FittedModel& model, const Eigen::MatrixXd& info, Eigen::Index n,
                               double level = 0.95) {
  return theta_ci(model.coef.theta, info, n, level);
}

}  // namespace fcox
