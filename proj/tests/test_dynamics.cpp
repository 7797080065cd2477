#include <gtest/gtest.h>

#include <cmath>

#include "uccd/uccd.hpp"

using namespace uccd;

namespace {

std::vector<double> uniform_grid(double tf, std::size_t n) {
  std::vector<double> g(n);
  for (std::size_t k = 0; k < n; ++k) g[k] = tf * static_cast<double>(k) / static_cast<double>(n - 1);
  return g;
}

}  // namespace

TEST(Care, ScalarClosedForm) {
  // p = (a + sqrt(a^2 + b^2 q / r)) r / b^2
  for (double a : {-2.0, 0.0, 1.0, 3.0}) {
    double b = 2.0, q = 3.0, r = 0.5;
    CareSolution s = solve_care(LqrSpec::scalar(a, b, q, r));
    double p = (a + std::sqrt(a * a + b * b * q / r)) * r / (b * b);
    EXPECT_NEAR(s.P(0, 0), p, 1e-10 * (1 + p)) << "a = " << a;
    EXPECT_NEAR(s.K(0, 0), b * p / r, 1e-9 * (1 + p));
    EXPECT_LT(s.closed_loop_real.maxCoeff(), 0.0);
  }
}

TEST(Care, DoubleIntegratorResidual) {
  LqrSpec s;
  s.A = Mat::Zero(2, 2);
  s.A(0, 1) = 1.0;
  s.B = Mat::Zero(2, 1);
  s.B(1, 0) = 1.0;
  s.Q = Mat::Identity(2, 2);
  s.R = Mat::Identity(1, 1);
  CareSolution c = solve_care(s);
  // Known solution: P = [[sqrt3, 1], [1, sqrt3]].
  EXPECT_NEAR(c.P(0, 0), std::sqrt(3.0), 1e-10);
  EXPECT_NEAR(c.P(0, 1), 1.0, 1e-10);
  EXPECT_NEAR(c.P(1, 1), std::sqrt(3.0), 1e-10);
  EXPECT_LE(c.residual, 1e-9);
}

TEST(Care, UnstabilizableAndBadInputs) {
  LqrSpec s = LqrSpec::scalar(1.0, 0.0, 1.0, 1.0);
  EXPECT_THROW(solve_care(s), NumericalError);
  EXPECT_THROW(solve_care(LqrSpec::scalar(1.0, 1.0, 1.0, 0.0)), ValidationError);
  EXPECT_THROW(solve_care(LqrSpec::scalar(1.0, 1.0, -1.0, 1.0)), ValidationError);
}

TEST(EulerMaruyama, DeterministicDecay) {
  SdeModel m = SdeModel::linear(Mat::Constant(1, 1, -1.0));
  auto grid = uniform_grid(1.0, 1001);
  PathEnsemble e = euler_maruyama(m, {StochasticModel::discrete({2.0}, {1.0})}, grid, 3, 0);
  EXPECT_NEAR(e.mean(1000, 0), 2.0 * std::pow(1.0 - 1e-3, 1000), 1e-12);
  EXPECT_NEAR(e.mean(1000, 0), 2.0 * std::exp(-1.0), 1e-3);
  EXPECT_LE(e.std(1000, 0), 1e-15);
}

TEST(EulerMaruyama, BrownianVarianceGrowsLinearly) {
  SdeModel m = SdeModel::linear(Mat::Zero(1, 1), Mat::Constant(1, 1, 0.5));
  auto grid = uniform_grid(4.0, 101);
  PathEnsemble e = euler_maruyama(m, {StochasticModel::discrete({0.0}, {1.0})}, grid, 20000, 11);
  // Var = 0.25 t; sample std of the std estimate is about sd / sqrt(2n).
  double sd = std::sqrt(0.25 * 4.0);
  EXPECT_NEAR(e.std(100, 0), sd, 4.0 * sd / std::sqrt(2.0 * 20000));
  EXPECT_NEAR(e.mean(100, 0), 0.0, 4.0 * sd / std::sqrt(20000.0));
}

TEST(EulerMaruyama, ThreadCountDoesNotChangePaths) {
  SdeModel m = SdeModel::linear(Mat::Constant(1, 1, -0.5), Mat::Constant(1, 1, 1.0));
  auto grid = uniform_grid(1.0, 51);
  std::vector<StochasticModel> x0{StochasticModel::gaussian(1.0, 0.3)};
  setenv("UCCD_THREADS", "1", 1);
  PathEnsemble a = euler_maruyama(m, x0, grid, 300, 7);
  setenv("UCCD_THREADS", "4", 1);
  PathEnsemble b = euler_maruyama(m, x0, grid, 300, 7);
  unsetenv("UCCD_THREADS");
  EXPECT_EQ(a.mean, b.mean);
  EXPECT_EQ(a.std, b.std);
  EXPECT_EQ(a.paths[299], b.paths[299]);
}

TEST(EulerMaruyama, DivergedPathsAreExcluded) {
  SdeModel m = SdeModel::linear(Mat::Constant(1, 1, 1.0));
  m.drift = [](double, const Vec& x, Vec& f) { f = x.array().square().matrix() * 1e300; };
  auto grid = uniform_grid(1.0, 11);
  PathEnsemble e = euler_maruyama(m, {StochasticModel::discrete({1.0}, {1.0})}, grid, 4, 0);
  EXPECT_EQ(e.n_diverged(), 4);
  EXPECT_TRUE(std::isnan(e.mean(10, 0)));
}

TEST(EulerMaruyama, RejectsBadInputs) {
  SdeModel m = SdeModel::linear(Mat::Constant(1, 1, 1.0));
  std::vector<StochasticModel> x0{StochasticModel::gaussian(0.0, 1.0)};
  EXPECT_THROW(euler_maruyama(m, x0, {0.0, 1.0}, 0, 0), ValidationError);
  EXPECT_THROW(euler_maruyama(m, x0, {0.0}, 1, 0), ValidationError);
  EXPECT_THROW(euler_maruyama(m, x0, {0.0, 0.5, 0.5}, 1, 0), ValidationError);
  EXPECT_THROW(euler_maruyama(m, {}, {0.0, 1.0}, 1, 0), ValidationError);
}

TEST(Feedback, ClosedLoopStationarySpread) {
  // dx = (a - b k) x dt + s dw settles at std s / sqrt(2 (b k - a)).
  LqrSpec spec = LqrSpec::scalar(-1.0, 1.0, 1.0, 1.0);
  CareSolution c = solve_care(spec);
  const double rate = -c.closed_loop_real(0);
  auto grid = settling_grid(c, 10.0, 2001);
  EXPECT_NEAR(grid.back(), 10.0 / rate, 1e-12);
  PathEnsemble e = feedback_ensemble(spec, c.K, Mat::Constant(1, 1, 0.5),
                                     {StochasticModel::discrete({0.0}, {1.0})}, grid, 20000, 3);
  double expect = 0.5 / std::sqrt(2.0 * rate);
  EXPECT_NEAR(e.std(2000, 0), expect, 0.03 * expect);
}

TEST(Feedback, ReferenceOffsetIsTracked) {
  LqrSpec spec = LqrSpec::scalar(0.0, 1.0, 1.0, 1.0);
  spec.reference = Vec::Constant(1, 2.0);
  CareSolution c = solve_care(spec);
  auto grid = settling_grid(c, 12.0, 601);
  PathEnsemble e = feedback_ensemble(spec, c.K, Mat(), {StochasticModel::discrete({0.0}, {1.0})}, grid, 1, 0);
  EXPECT_NEAR(e.mean(600, 0), 2.0, 1e-4);
}

TEST(SdeFromProblem, ZeroOrderHoldDrift) {
  Document d = parse_document(read_file(std::string(UCCD_PROBLEMS_DIR) + "/tradeoff.json"));
  auto pb = std::make_shared<const UccdProblem>(d.problem);
  const Index n = static_cast<Index>(pb->grid.size());
  Mat u = Mat::Constant(n, 1, 0.5);
  SdeModel m = SdeModel::from_problem(pb, u, Vec());
  PathEnsemble e = euler_maruyama(m, {StochasticModel::discrete({0.0}, {1.0})}, pb->grid.nodes(), 1, 0);
  // Nominal b = 1: x(1) = 0.5.
  EXPECT_NEAR(e.mean(n - 1, 0), 0.5, 1e-12);
}
