#include <gtest/gtest.h>

#include <cmath>

#include "uccd/uccd.hpp"

using namespace uccd;

namespace {

const char* kScalar = R"({
  "schema": 1,
  "grid": {"t0": 0.0, "tf": 2.0, "n_nodes": 21},
  "statics": [{"name": "p0", "lower": -5, "upper": 5}],
  "data": {"constants": {"a": 0.0, "gain": 1.0}},
  "dynamics": {"kind": "registry", "id": "scalar_linear", "coefficients": {"a": "a", "b": "gain"}},
  "cost": {"lagrange": {"id": "min_energy"}, "mayer": {"static_linear": [3.0]}},
  "constraints": {
    "inequalities": [{"name": "cap", "applies": "terminal", "state": [1.0], "constant": -1.5}]
  },
  "boundary": {"xi0": [0.5]},
  "uncertainty": [{"target": "gain", "kind": "gaussian", "params": {"mu": 1.0, "sigma": 0.1}}]
})";

Trajectory traj(Mat v, TrajectoryKind k) {
  Trajectory t;
  t.values = std::move(v);
  t.kind = k;
  return t;
}

}  // namespace

TEST(TimeGrid, UniformNodesAndTrapezoidWeights) {
  auto g = TimeGrid::uniform(1.0, 3.0, 5);
  EXPECT_EQ(g.size(), 5u);
  EXPECT_DOUBLE_EQ(g[2], 2.0);
  EXPECT_DOUBLE_EQ(g.tf(), 3.0);
  auto w = g.trapezoid_weights();
  EXPECT_DOUBLE_EQ(w.front(), 0.25);
  EXPECT_DOUBLE_EQ(w[1], 0.5);
  double s = 0.0;
  for (double x : w) s += x;
  EXPECT_DOUBLE_EQ(s, 2.0);
  EXPECT_THROW(TimeGrid::uniform(0.0, 0.0, 3), ValidationError);
  EXPECT_THROW(TimeGrid::uniform(0.0, 1.0, 1), ValidationError);
  EXPECT_THROW(TimeGrid::from_nodes({0.0, 0.5, 0.5}), ValidationError);
}

TEST(Model, ObjectiveIsTrapezoidPlusMayer) {
  UccdProblem pb = parse_document(kScalar).problem;
  const Index n = 21;
  Mat u = Mat::Constant(n, 1, 2.0);
  Vec p = Vec::Constant(1, 0.25);
  Mat X = simulate_trapezoid(pb, u, p, pb.nominal_realization(), Vec::Constant(1, 0.5));
  // dx/dt = u: trapezoid is exact for constant input.
  EXPECT_NEAR(X(n - 1, 0), 0.5 + 2.0 * 2.0, 1e-12);
  double J = eval_objective(pb, traj(u, TrajectoryKind::control), traj(X, TrajectoryKind::state), p);
  EXPECT_NEAR(J, 4.0 * 2.0 + 3.0 * 0.25, 1e-12);
  Mat d = eval_defects(pb, traj(u, TrajectoryKind::control), traj(X, TrajectoryKind::state), p);
  EXPECT_LE(d.cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Model, ConstraintValuesAndBoundaryResiduals) {
  UccdProblem pb = parse_document(kScalar).problem;
  const Index n = 21;
  Mat u = Mat::Constant(n, 1, 0.5);
  Vec p = Vec::Zero(1);
  Mat X = simulate_trapezoid(pb, u, p, pb.nominal_realization(), Vec::Constant(1, 0.5));
  auto cv = eval_constraints(pb, traj(u, TrajectoryKind::control), traj(X, TrajectoryKind::state), p);
  ASSERT_EQ(cv.g.size(), 1u);
  ASSERT_EQ(cv.g[0].size(), 1u);
  EXPECT_NEAR(cv.g[0][0], X(n - 1, 0) - 1.5, 1e-12);
  ASSERT_EQ(cv.boundary.size(), 1u);
  EXPECT_NEAR(cv.boundary[0], 0.0, 1e-15);
}

TEST(Model, RealizationAppliesScenarioPoint) {
  UccdProblem pb = parse_document(kScalar).problem;
  EXPECT_EQ(pb.uncertain_dim(), 1);
  EXPECT_EQ(pb.binding_order(), std::vector<std::string>{"gain"});
  Realization r = pb.realize(Vec::Constant(1, 2.0));
  const Index n = 21;
  Mat u = Mat::Constant(n, 1, 1.0);
  Mat X = simulate_trapezoid(pb, u, Vec::Zero(1), r, Vec::Constant(1, 0.5));
  EXPECT_NEAR(X(n - 1, 0), 0.5 + 2.0 * 2.0, 1e-12);
  EXPECT_THROW(pb.realize(Vec::Zero(2)), ValidationError);
  EXPECT_DOUBLE_EQ(pb.nominal_point()(0), 1.0);
}

TEST(Model, DoubleIntegratorAnalyticControl) {
  UccdProblem pb = parse_document(read_file(std::string(UCCD_PROBLEMS_DIR) + "/double_integrator.json")).problem;
  const Index n = static_cast<Index>(pb.grid.size());
  Mat u(n, 1);
  for (Index k = 0; k < n; ++k) u(k, 0) = 6.0 - 12.0 * pb.grid[static_cast<std::size_t>(k)];
  Mat X = simulate_trapezoid(pb, u, Vec(), pb.nominal_realization(), Vec::Zero(2));
  EXPECT_NEAR(X(n - 1, 0), 1.0, 1e-4);
  EXPECT_NEAR(X(n - 1, 1), 0.0, 1e-12);
  double J = eval_objective(pb, traj(u, TrajectoryKind::control), traj(X, TrajectoryKind::state), Vec());
  EXPECT_NEAR(J, 12.0, 1e-3);
}

TEST(Model, TerminalQuadraticMayer) {
  UccdProblem pb = parse_document(read_file(std::string(UCCD_PROBLEMS_DIR) + "/two_node.json")).problem;
  Mat u = Mat::Zero(2, 1);
  Mat X = Mat::Zero(2, 2);
  X(1, 0) = 0.25;
  double J = eval_objective(pb, traj(u, TrajectoryKind::control), traj(X, TrajectoryKind::state), Vec());
  EXPECT_NEAR(J, 8.0 * 0.5 * 0.5, 1e-12);
}

TEST(Model, EpigraphMovesObjectiveIntoConstraint) {
  UccdProblem pb = parse_document(kScalar).problem;
  UccdProblem epi = epigraph_transform(pb);
  ASSERT_EQ(epi.n_statics(), 2);
  EXPECT_EQ(epi.statics.vars.back().name, "epigraph_v0");
  ASSERT_TRUE(epi.original_cost);
  const Index n = 21;
  Mat u = Mat::Constant(n, 1, 1.0);
  Vec p(2);
  p << 0.25, 7.0;
  Mat X = simulate_trapezoid(epi, u, p, epi.nominal_realization(), Vec::Constant(1, 0.5));
  auto U = traj(u, TrajectoryKind::control), S = traj(X, TrajectoryKind::state);
  EXPECT_NEAR(eval_objective(epi, U, S, p), 7.0, 1e-12);
  Vec p1 = p.head(1);
  double o = eval_objective(pb, U, S, p1);
  auto cv = eval_constraints(epi, U, S, p);
  ASSERT_EQ(cv.g.size(), 2u);
  EXPECT_NEAR(cv.g[1][0], o - 7.0, 1e-12);
  // A second transform adds another auxiliary and keeps the first original cost.
  UccdProblem twice = epigraph_transform(epi);
  EXPECT_EQ(twice.n_statics(), 3);
  EXPECT_EQ(twice.original_cost, epi.original_cost);
}

TEST(Model, TrajectoryShapeIsChecked) {
  UccdProblem pb = parse_document(kScalar).problem;
  Mat u = Mat::Zero(20, 1);
  Mat X = Mat::Zero(21, 1);
  EXPECT_THROW(eval_objective(pb, traj(u, TrajectoryKind::control), traj(X, TrajectoryKind::state), Vec::Zero(1)),
               ValidationError);
}
