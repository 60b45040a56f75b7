#pragma once

#include <Eigen/Core>
#include <boost/math/quadrature/gauss.hpp>

#include <algorithm>
#include <cmath>
#include <string>

#include "fcox/error.hpp"
#include "fcox/grid.hpp"

namespace fcox {

// Reproducing kernel of the order-m Sobolev space W_{2,m}[0,1], split as
// K = K0 + K1 where K0 spans the null space of J(f) = \int (f^{(m)})^2 and
// K1 is the kernel of the penalized complement (boundary conditions at 0).

namespace detail {

inline void check_order(int m) {
  if (m < 1 || m > 20) throw InvalidArgument("Sobolev order must be in [1, 20], got " + std::to_string(m));
}

inline double factorial(int k) { return std::tgamma(k + 1.0); }

}  // namespace detail

/// Null-space basis function xi_nu(t) = t^(nu-1)/(nu-1)!, nu = 1..m.
inline double null_basis(int nu, double t) {
  return std::pow(t, nu - 1) / detail::factorial(nu - 1);
}

inline double k0(double s, double t, int m = 2) {
  detail::check_order(m);
  double sum = 0.0;
  for (int nu = 1; nu <= m; ++nu) sum += null_basis(nu, s) * null_basis(nu, t);
  return sum;
}

/// K1(s,t) = \int_0^1 G_m(s,u) G_m(t,u) du with G_m(t,u) = (t-u)_+^{m-1}/(m-1)!.
/// Cubic-spline closed form for m = 2; Gauss-Legendre on [0, min(s,t)] otherwise,
/// which is exact because the integrand is a polynomial of degree 2m-2 there.
inline double k1(double s, double t, int m = 2) {
  detail::check_order(m);
  const double lo = std::min(s, t);
  const double hi = std::max(s, t);
  if (lo <= 0.0) return 0.0;
  if (m == 2) return lo * lo * (3.0 * hi - lo) / 6.0;
  const double norm = detail::factorial(m - 1) * detail::factorial(m - 1);
  auto integrand = [&](double u) { return std::pow((s - u) * (t - u), m - 1) / norm; };
  return boost::math::quadrature::gauss<double, 20>::integrate(integrand, 0.0, lo);
}

/// Kernel tabulated on a grid. Holds the G x G matrix of K1 values and the
/// G x m matrix of null-space basis values, so that kernel sections and Gram
/// entries reduce to weighted matrix products.
class SobolevKernel {
 public:
  SobolevKernel(Grid grid, int m = 2) : m_(m), grid_(std::move(grid)) {
    detail::check_order(m);
    const auto G = grid_.size();
    k1_table_.resize(G, G);
    for (Eigen::Index a = 0; a < G; ++a)
      for (Eigen::Index b = a; b < G; ++b) k1_table_(a, b) = k1_table_(b, a) = k1(grid_[a], grid_[b], m);
    null_table_.resize(G, m);
    for (Eigen::Index a = 0; a < G; ++a)
      for (int nu = 1; nu <= m; ++nu) null_table_(a, nu - 1) = null_basis(nu, grid_[a]);
  }

  int order() const noexcept { return m_; }
  const Grid& grid() const noexcept { return grid_; }
  const Eigen::MatrixXd& k1_table() const noexcept { return k1_table_; }
  const Eigen::MatrixXd& null_table() const noexcept { return null_table_; }

  /// t -> \int x(s) K1(s,t) ds at every grid point t.
  Eigen::VectorXd k1_section(const Eigen::Ref<const Eigen::VectorXd>& x) const {
    check_on_grid(x.size());
    return k1_table_ * grid_.weights().cwiseProduct(x);
  }

  /// Kernel sections of every row of `curves` (n x G), returned as G x n.
  Eigen::MatrixXd k1_sections(const Eigen::Ref<const Eigen::MatrixXd>& curves) const {
    check_on_grid(curves.cols());
    return k1_table_ * (curves * grid_.weights().asDiagonal()).transpose();
  }

  /// Section evaluated at an arbitrary t in [0,1] (not necessarily a grid point).
  double k1_section_at(const Eigen::Ref<const Eigen::VectorXd>& x, double t) const {
    check_on_grid(x.size());
    double sum = 0.0;
    for (Eigen::Index a = 0; a < grid_.size(); ++a) sum += grid_.weights()(a) * x(a) * k1(grid_[a], t, m_);
    return sum;
  }

  /// Cross Gram matrix (\int\int A_i(s) K1(s,t) B_j(t) ds dt)_{ij} for rows of A and B.
  Eigen::MatrixXd gram(const Eigen::Ref<const Eigen::MatrixXd>& A, const Eigen::Ref<const Eigen::MatrixXd>& B) const {
    check_on_grid(A.cols());
    check_on_grid(B.cols());
    const auto& w = grid_.weights();
    return (A * w.asDiagonal()) * k1_table_ * (B * w.asDiagonal()).transpose();
  }

 private:
  void check_on_grid(Eigen::Index len) const {
    if (len != grid_.size())
      throw InvalidArgument("functional covariate has " + std::to_string(len) + " values, kernel grid has " +
                            std::to_string(grid_.size()));
  }

  int m_;
  Grid grid_;
  Eigen::MatrixXd k1_table_;
  Eigen::MatrixXd null_table_;
};

}  // namespace fcox
