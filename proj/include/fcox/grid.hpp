#pragma once

#include <Eigen/Core>

#include <cmath>
#include <string>

#include "fcox/error.hpp"

namespace fcox {

/// Quadrature grid on [0,1]. Points are strictly increasing from 0 to 1 and the
/// weights integrate constants exactly.
class Grid {
 public:
  Grid() = default;

  /// Trapezoid weights for arbitrary ordered points. Throws if the points do not
  /// start at 0, end at 1, increase strictly, or number fewer than 4.
  explicit Grid(Eigen::VectorXd points) : points_(std::move(points)) {
    const auto G = points_.size();
    if (G < 4) throw InvalidArgument("grid needs at least 4 points, got " + std::to_string(G));
    if (points_(0) != 0.0 || points_(G - 1) != 1.0)
      throw InvalidArgument("grid must start at 0 and end at 1");
    weights_ = Eigen::VectorXd::Zero(G);
    for (Eigen::Index i = 0; i + 1 < G; ++i) {
      const double h = points_(i + 1) - points_(i);
      if (!(h > 0.0)) throw InvalidArgument("grid points must be strictly increasing");
      weights_(i) += 0.5 * h;
      weights_(i + 1) += 0.5 * h;
    }
  }

  Eigen::Index size() const noexcept { return points_.size(); }
  const Eigen::VectorXd& points() const noexcept { return points_; }
  const Eigen::VectorXd& weights() const noexcept { return weights_; }
  double operator[](Eigen::Index i) const { return points_(i); }

  bool operator==(const Grid& other) const {
    return points_.size() == other.points_.size() && points_ == other.points_;
  }

 private:
  Eigen::VectorXd points_;
  Eigen::VectorXd weights_;
};

inline constexpr int kDefaultGridSize = 101;

inline Grid make_uniform_grid(int G) {
  if (G < 4) throw InvalidArgument("uniform grid needs G >= 4, got " + std::to_string(G));
  Eigen::VectorXd pts(G);
  for (int i = 0; i < G; ++i) pts(i) = static_cast<double>(i) / (G - 1);
  pts(G - 1) = 1.0;
  return Grid(std::move(pts));
}

/// Sum of weights times values; the trapezoid approximation of the integral over [0,1].
template <typename Derived>
double integrate(const Eigen::DenseBase<Derived>& f_values, const Grid& grid) {
  if (f_values.size() != grid.size())
    throw InvalidArgument("integrand has " + std::to_string(f_values.size()) + " values, grid has " +
                          std::to_string(grid.size()));
  return grid.weights().dot(f_values.derived().matrix().reshaped());
}

}  // namespace fcox
