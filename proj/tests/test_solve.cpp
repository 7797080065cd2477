#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "uccd/uccd.hpp"

using namespace uccd;

namespace {

// min sum_i (x_i - t_i)^2 over a box; constraints are added by each test.
CompiledNlp quadratic(const Vec& t, double lo, double hi) {
  CompiledNlp nlp;
  const Index n = t.size();
  nlp.n = n;
  nlp.lower = Vec::Constant(n, lo);
  nlp.upper = Vec::Constant(n, hi);
  nlp.layout.push_back(Slice{"x", 0, 1, n, -1});
  ElementBlock b;
  b.label = "sq";
  b.rows = n;
  for (Index i = 0; i < n; ++i) b.deps.push_back({i});
  b.eval = [t, n](const double* x, double* y) {
    for (Index i = 0; i < n; ++i) y[i] = (x[i] - t(i)) * (x[i] - t(i));
  };
  nlp.add_block(std::move(b));
  nlp.objective.kind = Reduction::Kind::sum;
  for (Index i = 0; i < n; ++i) {
    nlp.objective.terms.push_back(LinearTerm::element(i));
    nlp.objective.weights.push_back(1.0);
  }
  nlp.initial_guess = Vec::Zero(n);
  return nlp;
}

CompiledConstraint linear(const Vec& a, double c, std::string label) {
  LinearTerm t;
  for (Index j = 0; j < a.size(); ++j) t.x.emplace_back(j, a(j));
  t.c = c;
  CompiledConstraint k;
  k.reduction = Reduction::single(std::move(t));
  k.label = std::move(label);
  return k;
}

SolverOptions tight() {
  SolverOptions o;
  o.constraint_tol = 1e-9;
  return o;
}

// Central-difference check of Reduction::eval's gradient.
void check_gradient(const Reduction& r, const std::vector<double>& z, double tol) {
  std::vector<double> g;
  r.eval(z, &g, nullptr);
  for (std::size_t t = 0; t < z.size(); ++t) {
    auto zp = z, zm = z;
    double h = 1e-6 * std::max(1.0, std::abs(z[t]));
    zp[t] += h;
    zm[t] -= h;
    double fd = (r.eval(zp, nullptr, nullptr) - r.eval(zm, nullptr, nullptr)) / (2 * h);
    EXPECT_NEAR(g[t], fd, tol) << "term " << t;
  }
}

std::vector<double> random_z(std::size_t m, unsigned seed) {
  std::mt19937 gen(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<double> z(m);
  for (auto& v : z) v = nd(gen);
  return z;
}

}  // namespace

TEST(Reduction, GradientsMatchFiniteDifferences) {
  auto z = random_z(9, 1);
  Reduction ms;
  ms.kind = Reduction::Kind::mean_std;
  ms.a = 0.7;
  ms.b = 1.3;
  for (int i = 0; i < 9; ++i) {
    ms.terms.push_back(LinearTerm::element(i));
    ms.weights.push_back(1.0 + 0.1 * i);
  }
  check_gradient(ms, z, 1e-7);

  Reduction sg = ms;
  sg.kind = Reduction::Kind::sigmoid;
  sg.tau = 0.4;
  check_gradient(sg, z, 1e-7);

  Reduction sys = sg;
  sys.kind = Reduction::Kind::system_sigmoid;
  sys.groups = {0, 0, 0, 1, 1, 1, 2, 2, 2};
  sys.weights = {0.2, 0.3, 0.5};
  check_gradient(sys, z, 1e-7);

  Reduction ut = ms;
  ut.kind = Reduction::Kind::utility;
  ut.rho = 2.0;
  ut.shift = 5.0;
  check_gradient(ut, z, 1e-6);
}

TEST(Reduction, MeanStdValue) {
  Reduction r;
  r.kind = Reduction::Kind::mean_std;
  r.a = 1.0;
  r.b = 2.0;
  for (int i = 0; i < 4; ++i) {
    r.terms.push_back(LinearTerm::element(i));
    r.weights.push_back(0.25);
  }
  EXPECT_NEAR(r.eval({1.0, 2.0, 3.0, 4.0}, nullptr, nullptr), 2.5 + 2.0 * std::sqrt(1.25), 1e-14);
}

TEST(SolveNlp, ActiveInequalityWithMultiplier) {
  Vec t(2);
  t << 1.0, 2.0;
  CompiledNlp nlp = quadratic(t, -10.0, 10.0);
  nlp.inequalities.push_back(linear(Vec::Ones(2), -1.0, "sum"));
  SolveReport r = solve_nlp(nlp, nlp.initial_guess, tight());
  ASSERT_EQ(r.status, SolveStatus::optimal) << r.message;
  EXPECT_NEAR(r.x(0), 0.0, 1e-6);
  EXPECT_NEAR(r.x(1), 1.0, 1e-6);
  EXPECT_NEAR(r.objective, 2.0, 1e-6);
  EXPECT_NEAR(r.mu(0), 2.0, 1e-4);
  EXPECT_LE(r.max_violation, 1e-9);
}

TEST(SolveNlp, BoundsActive) {
  Vec t(3);
  t << -3.0, 0.5, 4.0;
  CompiledNlp nlp = quadratic(t, -1.0, 1.0);
  SolveReport r = solve_nlp(nlp, nlp.initial_guess, tight());
  ASSERT_EQ(r.status, SolveStatus::optimal);
  EXPECT_DOUBLE_EQ(r.x(0), -1.0);
  EXPECT_NEAR(r.x(1), 0.5, 1e-8);
  EXPECT_DOUBLE_EQ(r.x(2), 1.0);
}

TEST(SolveNlp, WideEqualityUsesRankOneTerms) {
  // 100 variables tied by one dense equality: x_i = t_i + (50 - sum t) / 100.
  const Index n = 100;
  Vec t(n);
  for (Index i = 0; i < n; ++i) t(i) = static_cast<double>(i) / 100.0;
  CompiledNlp nlp = quadratic(t, -10.0, 10.0);
  nlp.equalities.push_back(linear(Vec::Ones(n), -50.0, "total"));
  SolveReport r = solve_nlp(nlp, nlp.initial_guess, tight());
  ASSERT_EQ(r.status, SolveStatus::optimal) << r.message;
  const double shift = (50.0 - t.sum()) / n;
  EXPECT_LE((r.x - (t.array() + shift).matrix()).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_NEAR(r.objective, n * shift * shift, 1e-8);
}

TEST(SolveNlp, InfeasibleReportsStatus) {
  Vec t = Vec::Zero(2);
  CompiledNlp nlp = quadratic(t, 0.0, 1.0);
  Vec a(2);
  a << -1.0, -1.0;
  nlp.inequalities.push_back(linear(a, 3.0, "needs three"));
  SolveReport r = solve_nlp(nlp, nlp.initial_guess, tight());
  EXPECT_EQ(r.status, SolveStatus::infeasible);
  EXPECT_NEAR(r.max_violation, 1.0, 1e-6);
  EXPECT_FALSE(r.message.empty());
}

TEST(SolveNlp, RepeatSolvesAreBitIdentical) {
  Vec t(3);
  t << 0.3, -0.2, 0.9;
  CompiledNlp nlp = quadratic(t, -1.0, 1.0);
  Vec a(3);
  a << 1.0, 2.0, 3.0;
  nlp.inequalities.push_back(linear(a, -1.0, "w"));
  SolveReport r1 = solve_nlp(nlp, nlp.initial_guess, tight());
  SolveReport r2 = solve_nlp(nlp, nlp.initial_guess, tight());
  EXPECT_EQ(r1.x, r2.x);
  EXPECT_EQ(r1.trace.size(), r2.trace.size());
}

TEST(SolveNlp, RejectsBadOptions) {
  CompiledNlp nlp = quadratic(Vec::Zero(1), -1.0, 1.0);
  SolverOptions o;
  o.constraint_tol = 0.0;
  EXPECT_THROW(solve_nlp(nlp, nlp.initial_guess, o), ValidationError);
  EXPECT_THROW(solve_nlp(nlp, Vec::Zero(2)), ValidationError);
}

TEST(GridOracle, FindsConstrainedMinimum) {
  Vec t(2);
  t << 1.0, 2.0;
  CompiledNlp nlp = quadratic(t, -2.0, 2.0);
  nlp.inequalities.push_back(linear(Vec::Ones(2), -1.0, "sum"));
  OracleResult o = grid_oracle(nlp, 41);
  ASSERT_TRUE(o.feasible);
  EXPECT_NEAR(o.value, 2.0, 1e-12);
  EXPECT_NEAR(o.x(0), 0.0, 1e-12);
  EXPECT_NEAR(o.x(1), 1.0, 1e-12);
  EXPECT_DOUBLE_EQ(o.cell(0), 0.1);
  EXPECT_EQ(o.evaluated, 41u * 41u);
}

TEST(GridOracle, RejectsLargeOrUnboundedPrograms) {
  CompiledNlp big = quadratic(Vec::Zero(7), -1.0, 1.0);
  EXPECT_THROW(grid_oracle(big, 5), ValidationError);
  CompiledNlp open = quadratic(Vec::Zero(2), -1.0, 1.0);
  open.upper(1) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(grid_oracle(open, 5), ValidationError);
}

TEST(InnerMaximize, VertexModeFindsWorstCorner) {
  WcrSubproblem sub;
  sub.name = "lin";
  Vec c(2), h(2);
  c << 1.0, 0.0;
  h << 0.5, 0.25;
  sub.sets.push_back(CrispSet::box(c, h));
  sub.mode = InnerMode::vertex;
  sub.g = [](const Vec& q, const Vec&) { return q(0) - 2.0 * q(1); };
  InnerMax m = inner_maximize(sub, Vec());
  EXPECT_NEAR(m.value, 1.5 + 0.5, 1e-12);
  EXPECT_NEAR(m.q(0), 1.5, 1e-12);
  EXPECT_NEAR(m.q(1), -0.25, 1e-12);
}

TEST(InnerMaximize, AscentOnBallMatchesDualNorm) {
  WcrSubproblem sub;
  sub.name = "ball";
  sub.sets.push_back(CrispSet::box(Vec::Zero(2), Vec::Ones(2), Norm::l2));
  sub.mode = InnerMode::ascent;
  sub.g = [](const Vec& q, const Vec&) { return 3.0 * q(0) + 4.0 * q(1); };
  InnerMax m = inner_maximize(sub, Vec());
  EXPECT_NEAR(m.value, 5.0, 1e-6);
}
