#include <gtest/gtest.h>

#include <Eigen/QR>

#include <cmath>

#include "fcox/gcv.hpp"
#include "fcox/sim.hpp"
#include "test_util.hpp"

using namespace fcox;
using fcox::test_support::random_dataset;

namespace {

// GCV assembled from naive risk-set sums and explicit n x n matrices.
double gcv_oracle(const Eigen::VectorXd& c, const DesignSystem& sys, const Dataset& ds, double lambda) {
  const Eigen::Index n = ds.n();
  const Eigen::Index P = sys.dim();
  const Eigen::VectorXd eta = sys.S * c;
  Eigen::MatrixXd H = 2.0 * lambda * sys.Q;
  double log_denoms = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!ds.event(i)) continue;
    double s0 = 0.0;
    Eigen::VectorXd s1 = Eigen::VectorXd::Zero(P);
    Eigen::MatrixXd s2 = Eigen::MatrixXd::Zero(P, P);
    for (Eigen::Index j = 0; j < n; ++j) {
      if (ds.times()(j) < ds.times()(i)) continue;
      const double w = std::exp(eta(j));
      const Eigen::VectorXd sj = sys.S.row(j).transpose();
      s0 += w;
      s1 += w * sj;
      s2 += w * sj * sj.transpose();
    }
    const Eigen::VectorXd mu = s1 / s0;
    H += (s2 / s0 - mu * mu.transpose()) / static_cast<double>(n);
    log_denoms += std::log(s0);
  }
  const Eigen::MatrixXd M = sys.S * H.completeOrthogonalDecomposition().pseudoInverse() * sys.S.transpose();
  const Eigen::VectorXd delta = ds.event_weights();
  const Eigen::MatrixXd D = Eigen::MatrixXd(delta.asDiagonal()) - delta * Eigen::RowVectorXd::Ones(n) / n;
  const double dn = static_cast<double>(n);
  return -eta.sum() / dn + (M * D).trace() / (dn * (dn - 1.0)) + log_denoms / delta.sum();
}

}  // namespace

TEST(Gcv, ThreeRecordsMatchHandAssembly) {
  // Centered curves of three uncensored records sum to zero, so only two can
  // serve as basis curves; order 1 keeps the unpenalized block at two columns.
  // Coefficients are fixed rather than fitted: three records are separable and
  // the unpenalized fit would diverge.
  const Grid g = make_uniform_grid(5);
  Eigen::MatrixXd X(3, 5);
  X << 0.1, 0.4, -0.2, 0.3, 0.0, -0.5, 0.2, 0.1, 0.0, 0.6, 0.3, -0.1, 0.4, -0.2, 0.2;
  const Dataset ds = center(Dataset(g, Eigen::Vector3d(1.0, 2.5, 1.7), Eigen::Vector3i(1, 1, 1),
                                    Eigen::Vector3d(0.3, -1.2, 0.8), X));
  const auto sys = build_design(ds, SobolevKernel(g, 1), BasisChoice::from_indices({0, 1}));
  ASSERT_EQ(sys.dim(), 4);
  FitOptions fo;
  fo.max_iterations = 0;
  fo.initial = (Eigen::VectorXd(4) << 0.4, -0.3, 0.8, -0.5).finished();
  const auto model = fit(ds, sys, 0.05, fo);
  EXPECT_NEAR(gcv_score(model, sys, ds), gcv_oracle(model.stacked(), sys, ds, 0.05), 1e-10);
}

TEST(Gcv, RandomInstancesMatchHandAssembly) {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const Dataset ds = center(random_dataset(12, 2, 9, seed));
    const auto sys = build_design(ds, SobolevKernel(ds.grid()), BasisChoice::reduced(4, seed));
    const auto model = fit(ds, sys, 1e-2);
    EXPECT_NEAR(gcv_score(model, sys, ds), gcv_oracle(model.stacked(), sys, ds, 1e-2), 1e-9);
  }
}

TEST(Gcv, TermsAddUp) {
  const Dataset ds = center(random_dataset(40, 1, 21, 4));
  const auto sys = build_design(ds, SobolevKernel(ds.grid()), BasisChoice::reduced());
  const auto model = fit(ds, sys, 1e-3);
  const auto t = gcv_terms(model, sys, ds);
  const double n = static_cast<double>(ds.n());
  EXPECT_NEAR(t.score, -t.mean_eta + t.trace / (n * (n - 1.0)) + t.mean_log_denom, 1e-14);
  EXPECT_GT(t.trace, 0.0);
}

TEST(LogSpaced, EndpointsAndRatios) {
  const auto g = default_lambda_grid();
  ASSERT_EQ(g.size(), 25u);
  EXPECT_EQ(g.front(), 1e-8);
  EXPECT_EQ(g.back(), 1e-1);
  for (std::size_t k = 1; k < g.size(); ++k) EXPECT_NEAR(std::log(g[k] / g[k - 1]), std::log(1e7) / 24.0, 1e-12);
  EXPECT_EQ(log_spaced(0.5, 0.5, 1), std::vector<double>{0.5});
  EXPECT_THROW(log_spaced(0.0, 1.0, 3), InvalidArgument);
  EXPECT_THROW(log_spaced(1.0, 0.1, 3), InvalidArgument);
}

TEST(SelectLambda, SingleAndDuplicatedGrid) {
  const Dataset ds = center(random_dataset(30, 1, 21, 5));
  const auto sys = build_design(ds, SobolevKernel(ds.grid()), BasisChoice::reduced());
  const auto one = select_lambda(ds, sys, {3e-4});
  EXPECT_EQ(one.best_lambda, 3e-4);
  const auto two = select_lambda(ds, sys, {3e-4, 3e-4});
  EXPECT_EQ(two.lambdas.size(), 1u);
  EXPECT_EQ(two.scores, one.scores);
}

TEST(SelectLambda, TiesGoToLargerLambda) {
  // Without a functional covariate the penalty is inert and every score is equal.
  const Dataset raw = random_dataset(25, 1, 11, 6);
  const Dataset ds = center(
      Dataset(raw.grid(), raw.times(), raw.events(), raw.Z(), Eigen::MatrixXd::Zero(raw.n(), raw.grid().size())));
  const auto sys = build_design(ds, SobolevKernel(ds.grid()), BasisChoice::reduced(3));
  GcvOptions go;
  go.warm_start = false;
  const auto res = select_lambda(ds, sys, {1e-6, 1e-4, 1e-2}, go);
  EXPECT_DOUBLE_EQ(res.scores[0], res.scores[2]);
  EXPECT_EQ(res.best_lambda, 1e-2);
}

TEST(SelectLambda, WarmStartDoesNotChangeScores) {
  const Dataset ds = center(random_dataset(50, 1, 21, 7));
  const auto sys = build_design(ds, SobolevKernel(ds.grid()), BasisChoice::reduced());
  const auto grid = log_spaced(1e-6, 1e-1, 8);
  GcvOptions cold;
  cold.warm_start = false;
  const auto a = select_lambda(ds, sys, grid);
  const auto b = select_lambda(ds, sys, grid, cold);
  for (std::size_t k = 0; k < grid.size(); ++k) EXPECT_NEAR(a.scores[k], b.scores[k], 1e-8);
  EXPECT_EQ(a.best_index, b.best_index);
}

TEST(SelectLambda, KeepsModelsWhenAsked) {
  const Dataset ds = center(random_dataset(30, 1, 21, 8));
  const auto sys = build_design(ds, SobolevKernel(ds.grid()), BasisChoice::reduced());
  GcvOptions go;
  go.keep_models = true;
  const auto res = select_lambda(ds, sys, {1e-5, 1e-3, 1e-1}, go);
  ASSERT_EQ(res.models.size(), 3u);
  for (std::size_t k = 0; k < 3; ++k) {
    ASSERT_TRUE(res.models[k].has_value());
    EXPECT_EQ(res.models[k]->lambda, res.lambdas[k]);
  }
}

TEST(SelectLambda, RejectsBadGrid) {
  const Dataset ds = center(random_dataset(10, 1, 11, 9));
  const auto sys = build_design(ds, SobolevKernel(ds.grid()), BasisChoice::full());
  EXPECT_THROW(select_lambda(ds, sys, {}), InvalidArgument);
  EXPECT_THROW(select_lambda(ds, sys, {1e-3, -1.0}), InvalidArgument);
}

TEST(SelectLambda, DefaultGridUsuallyBracketsOptimum) {
  // Simulated data, n = 150, v = 2: the GCV minimizer lies strictly inside the
  // default grid for most seeds.
  SimConfig cfg;
  cfg.v = 2.0;
  cfg.n = 150;
  const SimDesign design(cfg, make_uniform_grid(kDefaultGridSize));
  const SobolevKernel kernel(design.grid());
  int interior = 0;
  const int seeds = 50;
  for (int s = 0; s < seeds; ++s) {
    Rng rng(stream_seed(2024, static_cast<std::uint64_t>(s)));
    const Dataset ds = center(simulate_dataset(design, cfg.n, rng));
    const auto sys = build_design(ds, kernel, BasisChoice::reduced(0, rng()));
    const auto res = select_lambda(ds, sys, default_lambda_grid());
    if (res.best_index > 0 && res.best_index + 1 < res.lambdas.size()) ++interior;
  }
  EXPECT_GE(interior, 35) << interior << " of " << seeds;
}
