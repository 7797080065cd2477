#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "uccd/uccd.hpp"

using namespace uccd;

namespace {

// x' = b u from x(0) = 0, min int u^2 + 4 (x_N - 1)^2, with b rendered three
// ways.
const char* kGain = R"({
  "schema": 1,
  "grid": {"t0": 0.0, "tf": 1.0, "n_nodes": 11},
  "data": {"constants": {"b": 1.0}},
  "dynamics": {"kind": "registry", "id": "scalar_linear", "coefficients": {"a": 0.0, "b": "b"}},
  "cost": {"lagrange": {"id": "min_energy"}, "mayer": {"terminal_quadratic": [[4.0]], "terminal_target": [1.0]}},
  "constraints": {"control_bounds": [[-5.0, 5.0]]},
  "boundary": {"xi0": [0.0]},
  "uncertainty": [{
    "target": "b", "kind": "gaussian", "params": {"mu": 1.0, "sigma": 0.2},
    "paired": [
      {"kind": "box", "params": {"center": [1.0], "halfwidth": [0.0]}},
      {"kind": "triangular", "params": {"a": 1.0, "b": 1.0, "c": 1.0}}
    ]
  }]
})";

Document gain_doc() { return parse_document(kGain); }

Document problem(const std::string& name) {
  return parse_document(read_file(std::string(UCCD_PROBLEMS_DIR) + "/" + name));
}

SolverOptions tight() {
  SolverOptions o;
  o.constraint_tol = 1e-9;
  return o;
}

SolveReport solve(const UccdProblem& pb, const FormulationParams& fp) {
  return solve_compiled(compile(pb, fp), tight());
}

}  // namespace

TEST(Formulations, NamesRoundTrip) {
  for (auto t : {FormulationType::det, FormulationType::se, FormulationType::scc, FormulationType::pr_w,
                 FormulationType::pr_c, FormulationType::wcr, FormulationType::fe, FormulationType::pcc})
    EXPECT_EQ(parse_formulation(to_string(t)), t);
  EXPECT_THROW(parse_formulation("minimax"), ValidationError);
}

TEST(Formulations, DeterministicClosedForm) {
  // Constant u = c: cost c^2 + 4 (c - 1)^2 is minimized at c = 0.8 with J = 0.8.
  Document d = gain_doc();
  FormulationParams fp;
  SolveReport r = solve(d.problem, fp);
  ASSERT_TRUE(r.optimal()) << r.message;
  EXPECT_NEAR(r.objective, 0.8, 1e-6);
}

TEST(Formulations, DegenerateSetsReduceToDeterministic) {
  Document d = gain_doc();
  d.problem.bindings[0].stochastic = StochasticModel::discrete({1.0}, {1.0});
  FormulationParams det;
  double J = solve(d.problem, det).objective;
  for (auto t : {FormulationType::se, FormulationType::pr_w, FormulationType::wcr, FormulationType::fe}) {
    FormulationParams fp;
    fp.type = t;
    fp.samples = 8;
    fp.n_levels = 3;
    SolveReport r = solve(d.problem, fp);
    ASSERT_TRUE(r.optimal()) << to_string(t) << ": " << r.message;
    EXPECT_NEAR(r.objective, J, 1e-6) << to_string(t);
  }
}

TEST(Formulations, CompatibilityIsEnforced) {
  Document d = problem("fuzzy_gain.json");
  FormulationParams fp;
  fp.type = FormulationType::scc;
  EXPECT_THROW(compile(d.problem, fp), CompatibilityError);
  fp.type = FormulationType::wcr;
  EXPECT_THROW(compile(d.problem, fp), CompatibilityError);
  fp.type = FormulationType::det;
  EXPECT_NO_THROW(compile(d.problem, fp));
}

TEST(Formulations, OverrideTreatmentMustMatchRepresentation) {
  Document d = problem("regulator.json");
  FormulationParams fp = d.formulation;
  fp.type = FormulationType::se;
  risk::TreatmentSpec pos;
  pos.kind = risk::Treatment::possibilistic;
  fp.overrides["terminal_cap"] = pos;
  EXPECT_THROW(compile(d.problem, fp), CompatibilityError);
  fp.overrides.clear();
  fp.overrides["nonexistent"] = risk::TreatmentSpec{};
  EXPECT_THROW(compile(d.problem, fp), ValidationError);
}

TEST(Formulations, ScenarioLayoutFollowsStructure) {
  Document d = gain_doc();
  FormulationParams fp;
  fp.type = FormulationType::se;
  fp.samples = 4;
  fp.structure = ControlStructure::olsc;
  Compiled sc = compile(d.problem, fp);
  EXPECT_NE(sc.nlp.slice("u"), nullptr);
  EXPECT_NE(sc.nlp.slice("xi[3]"), nullptr);
  EXPECT_EQ(sc.nlp.scenarios.rows(), 4);
  fp.structure = ControlStructure::olmc;
  Compiled mc = compile(d.problem, fp);
  EXPECT_EQ(mc.nlp.slice("u"), nullptr);
  EXPECT_NE(mc.nlp.slice("u[0]"), nullptr);
  EXPECT_NE(mc.nlp.slice("u[3]"), nullptr);
  EXPECT_GT(mc.nlp.n, sc.nlp.n);
}

TEST(Formulations, SampledScenariosAreSeeded) {
  Document d = gain_doc();
  FormulationParams fp;
  fp.type = FormulationType::se;
  fp.samples = 16;
  fp.seed = 3;
  Compiled a = compile(d.problem, fp);
  Compiled b = compile(d.problem, fp);
  EXPECT_EQ(a.nlp.scenarios, b.nlp.scenarios);
  fp.seed = 4;
  Compiled c = compile(d.problem, fp);
  EXPECT_NE(a.nlp.scenarios, c.nlp.scenarios);
  double wsum = std::accumulate(a.nlp.scenario_weights.begin(), a.nlp.scenario_weights.end(), 0.0);
  EXPECT_NEAR(wsum, 1.0, 1e-12);
}

TEST(Formulations, WeightedRobustEndpointIsExpectation) {
  Document d = gain_doc();
  FormulationParams se;
  se.type = FormulationType::se;
  se.samples = 16;
  se.seed = 2;
  FormulationParams pr = se;
  pr.type = FormulationType::pr_w;
  pr.alpha_w = 1.0;
  EXPECT_NEAR(solve(d.problem, pr).objective, solve(d.problem, se).objective, 1e-7);
}

TEST(Formulations, ExpectationMatchesSampleAverageOfFixedControls) {
  // The SE objective at the solution equals the scenario average of the
  // deterministic objective with each sampled gain, recomputed here.
  Document d = gain_doc();
  FormulationParams fp;
  fp.type = FormulationType::se;
  fp.samples = 8;
  fp.seed = 5;
  Compiled c = compile(d.problem, fp);
  SolveReport r = solve_compiled(c, tight());
  ASSERT_TRUE(r.optimal());
  Mat U = controls_of(*c.problem, c.nlp, r.x, 0);
  double acc = 0.0;
  for (Index s = 0; s < c.nlp.scenarios.rows(); ++s) {
    double b = c.nlp.scenarios(s, 0);
    double x = 0.0, J = 0.0;
    for (Index k = 0; k + 1 < U.rows(); ++k) {
      x += 0.1 * b * 0.5 * (U(k, 0) + U(k + 1, 0));
      J += 0.1 * 0.5 * (U(k, 0) * U(k, 0) + U(k + 1, 0) * U(k + 1, 0));
    }
    acc += c.nlp.scenario_weights[static_cast<std::size_t>(s)] * (J + 4.0 * (x - 1.0) * (x - 1.0));
  }
  EXPECT_NEAR(r.objective, acc, 1e-8);
}

TEST(Formulations, GaussianChanceOnStatic) {
  Document d = problem("chance_static.json");
  FormulationParams fp = d.formulation;
  fp.p_f = 0.1;
  Compiled c = compile(d.problem, fp);
  SolveReport r = solve_compiled(c, d.solver);
  ASSERT_TRUE(r.optimal()) << r.message;
  double cval = statics_of(*c.problem, c.nlp, r.x)(0);
  EXPECT_NEAR(cval, 1.0 + risk::normal_quantile(0.9) * 0.5, 1e-5);
}

TEST(Formulations, WorstCaseVertexAndGeneration) {
  Document d = problem("box_affine.json");
  Compiled v = compile_wcr(d.problem, WcrMode::vertex);
  EXPECT_EQ(v.nlp.exactness, "affine-only");
  EXPECT_EQ(v.nlp.scenarios.rows(), 4);
  SolveReport rv = solve_compiled(v, d.solver);
  ASSERT_TRUE(rv.optimal());
  EXPECT_NEAR(rv.objective, 16.0 / 45.0, 1e-6);

  Compiled g = compile_wcr(d.problem, WcrMode::scenario_generation);
  ASSERT_TRUE(g.bilevel());
  SolveReport rg = solve_compiled(g, d.solver);
  ASSERT_TRUE(rg.optimal()) << rg.message;
  EXPECT_NEAR(rg.objective, rv.objective, 1e-6);
  EXPECT_GE(rg.generation_rounds, 1);
  ASSERT_FALSE(rg.worst_case.empty());
}

TEST(Formulations, FuzzyExpectationWeights) {
  auto w = fe_weights(5, 2);
  ASSERT_EQ(w.size(), 10u);
  EXPECT_NEAR(std::accumulate(w.begin(), w.end(), 0.0), 1.0, 1e-15);
  EXPECT_DOUBLE_EQ(w[0], 0.0625);
  EXPECT_DOUBLE_EQ(w[2], 0.125);
  Document d = problem("fuzzy_gain.json");
  CompiledNlp nlp = compile_fe(d.problem, ControlStructure::olsc, 5);
  // The two endpoints of the alpha = 1 cut coincide and are merged.
  EXPECT_EQ(nlp.scenarios.rows(), 9);
  EXPECT_NEAR(std::accumulate(nlp.scenario_weights.begin(), nlp.scenario_weights.end(), 0.0), 1.0, 1e-12);
}

TEST(Formulations, OlscTerminalTargetIsFlagged) {
  Document d = problem("initial_spread.json");
  FormulationParams fp;
  fp.type = FormulationType::se;
  fp.samples = 4;
  Compiled c = compile(d.problem, fp);
  EXPECT_NE(std::find(c.nlp.flags.begin(), c.nlp.flags.end(), "olsc-terminal-mean"), c.nlp.flags.end());
  fp.structure = ControlStructure::olmc;
  Compiled m = compile(d.problem, fp);
  EXPECT_EQ(std::find(m.nlp.flags.begin(), m.nlp.flags.end(), "olsc-terminal-mean"), m.nlp.flags.end());
}

TEST(Formulations, ConservatismGrowsWithShiftIndex) {
  Document d = problem("regulator.json");
  double prev = -1e300;
  for (double k : {0.0, 2.0, 4.0}) {
    FormulationParams fp = d.formulation;
    fp.type = FormulationType::pr_w;
    fp.k_s = k;
    SolveReport r = solve_compiled(compile(d.problem, fp), d.solver);
    ASSERT_TRUE(r.optimal()) << r.message;
    EXPECT_GE(r.objective, prev - 1e-6);
    prev = r.objective;
  }
}
