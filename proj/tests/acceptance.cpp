// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails.  Oracles are computed here, independently of the library.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "uccd/uccd.hpp"

namespace fs = std::filesystem;
using namespace uccd;

namespace {

// Pinned tolerances.
constexpr double kReductionTol = 1e-3;
constexpr double kReductionSeconds = 10.0;
constexpr double kVertexTol = 1e-6;
constexpr int kMaxGenerationRounds = 5;
constexpr double kGaussianBoundaryTol = 1e-4;
constexpr Index kSaaSamples = 10000;
constexpr double kSaaStdErrors = 2.0;
constexpr Index kCvarSamples = 1000000;
constexpr double kCvarTol = 0.002;
constexpr double kFuzzyEvTol = 1e-3;
constexpr double kMonotoneSlack = 1e-5;
constexpr double kTerminalResidualTol = 1e-6;
constexpr double kStructureSeconds = 30.0;
constexpr double kCareTol = 1e-8;
constexpr Index kLqrPaths = 10000;
constexpr double kOracleObjectiveTol = 1e-3;
constexpr int kOracleResolution = 41;
constexpr int kParetoPoints = 11;
constexpr double kParetoSlack = 1e-5;

const std::string kProblems = UCCD_PROBLEMS_DIR;
const std::string kTool = UCCD_TOOL_PATH;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Document load(const std::string& name) { return parse_document(read_file(kProblems + "/" + name)); }

SolveReport run(const UccdProblem& pb, const FormulationParams& fp, const SolverOptions& so, Compiled* keep = nullptr) {
  Compiled c = compile(pb, fp);
  SolveReport r = solve_compiled(c, so);
  if (keep) *keep = std::move(c);
  return r;
}

// Upper quantile of the standard normal by bisection on erfc.
double normal_upper_quantile(double p) {
  double lo = -10.0, hi = 10.0;
  for (int i = 0; i < 200; ++i) {
    double mid = 0.5 * (lo + hi);
    if (0.5 * std::erfc(mid / std::sqrt(2.0)) > p) lo = mid;
    else hi = mid;
  }
  return 0.5 * (lo + hi);
}

double normal_upper_tail(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

// ---------------------------------------------------------------------------

Outcome reduction_identities() {
  auto t0 = std::chrono::steady_clock::now();
  Document d = load("double_integrator.json");
  const double analytic = 12.0;
  FormulationParams fp = d.formulation;
  fp.type = FormulationType::det;
  SolveReport det = run(d.problem, fp, d.solver);
  std::string detail = "det " + num(det.objective);
  double worst = std::abs(det.objective - analytic);
  bool ok = det.status == SolveStatus::optimal && worst <= kReductionTol;

  auto check = [&](const char* tag, FormulationParams p) {
    SolveReport r = run(d.problem, p, d.solver);
    double gap = std::abs(r.objective - det.objective);
    worst = std::max(worst, gap);
    ok = ok && r.status == SolveStatus::optimal && gap <= kReductionTol;
    detail += std::string(", ") + tag + " " + num(r.objective);
  };
  FormulationParams se = d.formulation;
  se.type = FormulationType::se;
  se.samples = 16;
  check("se", se);
  FormulationParams wcr = d.formulation;
  wcr.type = FormulationType::wcr;
  check("wcr", wcr);
  FormulationParams pcc = d.formulation;
  pcc.type = FormulationType::pcc;
  check("pcc", pcc);
  FormulationParams pr = d.formulation;
  pr.type = FormulationType::pr_w;
  pr.alpha_w = 1.0;
  pr.k_s = 0.0;
  check("pr-w", pr);
  double secs = seconds_since(t0);
  ok = ok && secs <= kReductionSeconds;
  return {ok, detail + "; max |dJ| " + num(worst) + ", " + num(secs) + " s"};
}

// min |p - (1,1)|^2 subject to v.p <= 1 for the four box vertices v, by
// enumerating active sets of size 0, 1 and 2.
struct VertexOracle {
  Eigen::Vector2d p;
  double J;
};

VertexOracle enumerate_vertices() {
  std::vector<Eigen::Vector2d> V = {{0.8, 0.4}, {0.8, 0.6}, {1.2, 0.4}, {1.2, 0.6}};
  const Eigen::Vector2d target(1.0, 1.0);
  auto feasible = [&](const Eigen::Vector2d& p) {
    for (const auto& v : V)
      if (v.dot(p) > 1.0 + 1e-12) return false;
    return true;
  };
  VertexOracle best{target, std::numeric_limits<double>::infinity()};
  auto consider = [&](const Eigen::Vector2d& p) {
    if (!feasible(p)) return;
    double J = (p - target).squaredNorm();
    if (J < best.J) best = {p, J};
  };
  consider(target);
  for (const auto& v : V) consider(target - (v.dot(target) - 1.0) / v.squaredNorm() * v);
  for (std::size_t i = 0; i < V.size(); ++i)
    for (std::size_t j = i + 1; j < V.size(); ++j) {
      Eigen::Matrix2d M;
      M << V[i].transpose(), V[j].transpose();
      if (std::abs(M.determinant()) < 1e-12) continue;
      consider(M.inverse() * Eigen::Vector2d(1.0, 1.0));
    }
  return best;
}

Outcome vertex_exactness() {
  Document d = load("box_affine.json");
  VertexOracle oracle = enumerate_vertices();
  auto statics = [&](const Compiled& c, const SolveReport& r) {
    Vec p = statics_of(*c.problem, solved_nlp(c, r), r.x);
    return Eigen::Vector2d(p(0), p(1));
  };
  FormulationParams fp = d.formulation;
  fp.type = FormulationType::wcr;
  fp.wcr_mode = WcrMode::vertex;
  Compiled cv;
  SolveReport rv = run(d.problem, fp, d.solver, &cv);
  Eigen::Vector2d pv = statics(cv, rv);
  double ev = std::max(std::abs(rv.objective - oracle.J), (pv - oracle.p).cwiseAbs().maxCoeff());

  fp.wcr_mode = WcrMode::scenario_generation;
  Compiled cg;
  SolveReport rg = run(d.problem, fp, d.solver, &cg);
  Eigen::Vector2d pg = statics(cg, rg);
  double eg = std::max(std::abs(rg.objective - oracle.J), (pg - oracle.p).cwiseAbs().maxCoeff());

  bool ok = rv.status == SolveStatus::optimal && rg.status == SolveStatus::optimal && ev <= kVertexTol &&
            eg <= kVertexTol && rg.generation_rounds <= kMaxGenerationRounds;
  return {ok, "oracle J " + num(oracle.J) + " p (" + num(oracle.p(0)) + ", " + num(oracle.p(1)) + "); vertex err " +
                  num(ev) + "; generation err " + num(eg) + " in " + std::to_string(rg.generation_rounds) +
                  " rounds"};
}

Outcome chance_calibration() {
  Document d = load("chance_static.json");
  const double mu = 1.0, sigma = 0.5;
  bool ok = true;
  std::string detail;
  for (double pf : {0.5, 0.1, 0.02275}) {
    const double expect = mu + normal_upper_quantile(pf) * sigma;
    FormulationParams fp = d.formulation;
    fp.type = FormulationType::scc;
    fp.p_f = pf;
    fp.chance_mode = risk::ChanceMode::gaussian;
    Compiled cg;
    SolveReport rg = run(d.problem, fp, d.solver, &cg);
    double c_gauss = statics_of(*cg.problem, cg.nlp, rg.x)(0);
    double gauss_err = std::abs(c_gauss - expect);

    fp.chance_mode = risk::ChanceMode::saa;
    fp.samples = kSaaSamples;
    fp.seed = 11;
    Compiled cs;
    SolveReport rs = run(d.problem, fp, d.solver, &cs);
    double c_saa = statics_of(*cs.problem, cs.nlp, rs.x)(0);
    const double realized = normal_upper_tail((c_saa - mu) / sigma);
    const double se = std::sqrt(pf * (1.0 - pf) / static_cast<double>(kSaaSamples));
    const double saa_gap = std::abs(realized - pf);
    ok = ok && rg.status == SolveStatus::optimal && gauss_err <= kGaussianBoundaryTol &&
         rs.status == SolveStatus::optimal && saa_gap <= kSaaStdErrors * se;
    detail += (detail.empty() ? "" : "; ") + std::string("P_f ") + num(pf) + ": gaussian err " + num(gauss_err) +
              ", saa P(fail) " + num(realized) + " (" + num(saa_gap / se) + " se)";
  }
  return {ok, detail};
}

Outcome risk_oracles() {
  std::mt19937_64 gen(20240611);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::vector<double> v(static_cast<std::size_t>(kCvarSamples));
  for (auto& x : v) x = u01(gen);
  double cv = risk::cvar(v, 0.9);
  double fev = risk::fuzzy_expected_value(FuzzySet::triangular(0.0, 1.0, 3.0));
  // Focal elements {0,1} (0.6) and {0,1,2,3} (0.4); event {0,1,2}.
  risk::Bpa bpa;
  bpa.focal.push_back({{0, 1}, 0.6});
  bpa.focal.push_back({{0, 1, 2, 3}, 0.4});
  auto ev = risk::belief_plausibility(bpa, {0, 1, 2});
  bool ok = std::abs(cv - 0.95) <= kCvarTol && std::abs(fev - 1.25) <= kFuzzyEvTol && ev.belief == 0.6 &&
            ev.plausibility == 1.0;
  return {ok, "cvar " + num(cv) + ", fuzzy E " + num(fev) + ", Bel " + num(ev.belief) + ", Pl " +
                  num(ev.plausibility)};
}

Outcome monotone_conservatism() {
  Document d = load("regulator.json");
  double worst = 0.0;
  bool ok = true;
  std::string detail;
  auto sweep = [&](const char* tag, const std::vector<std::function<SolveReport()>>& runs) {
    double prev = -std::numeric_limits<double>::infinity();
    detail += (detail.empty() ? "" : "; ") + std::string(tag);
    for (const auto& f : runs) {
      SolveReport r = f();
      ok = ok && r.status == SolveStatus::optimal;
      double drop = prev - r.objective;
      worst = std::max(worst, drop);
      if (drop > kMonotoneSlack) ok = false;
      prev = r.objective;
      detail += " " + num(r.objective);
    }
  };
  std::vector<std::function<SolveReport()>> ks, hw, pf;
  for (double k : {0.0, 1.0, 3.0})
    ks.push_back([&, k] {
      FormulationParams fp = d.formulation;
      fp.type = FormulationType::pr_w;
      fp.alpha_w = 1.0;
      fp.k_s = k;
      return run(d.problem, fp, d.solver);
    });
  for (double h : {0.0, 0.1, 0.2})
    hw.push_back([&, h] {
      UccdProblem pb = d.problem;
      pb.bindings[0].crisp = CrispSet::box(Vec::Constant(1, -1.0), Vec::Constant(1, h));
      FormulationParams fp = d.formulation;
      fp.type = FormulationType::wcr;
      return run(pb, fp, d.solver);
    });
  for (double p : {0.5, 0.1, 0.01})
    pf.push_back([&, p] {
      FormulationParams fp = d.formulation;
      fp.type = FormulationType::scc;
      fp.p_f = p;
      return run(d.problem, fp, d.solver);
    });
  sweep("k_s", ks);
  sweep("halfwidth", hw);
  sweep("P_f", pf);
  return {ok, detail + "; max decrease " + num(worst)};
}

Outcome structure_contract() {
  auto t0 = std::chrono::steady_clock::now();
  Document d = load("initial_spread.json");
  ScenarioSet s;
  s.points = Mat(5, 1);
  s.points << 0.9, 0.95, 1.0, 1.05, 1.1;
  s.weights.assign(5, 0.2);
  s.provenance = ScenarioSet::Provenance::mcs;
  s.binding_order = d.problem.binding_order();
  const Index N = static_cast<Index>(d.problem.grid.size());
  const Vec target = d.problem.boundary.xif;

  CompiledNlp olmc = compile_se(d.problem, s, ControlStructure::olmc);
  SolveReport rm = solve_nlp(olmc, olmc.initial_guess, d.solver);
  double residual = 0.0;
  for (Index k = 0; k < 5; ++k) {
    Mat X = states_of(d.problem, olmc, rm.x, k);
    residual = std::max(residual, (X.row(N - 1).transpose() - target).cwiseAbs().maxCoeff());
  }

  CompiledNlp olsc = compile_se(d.problem, s, ControlStructure::olsc);
  SolveReport rs = solve_nlp(olsc, olsc.initial_guess, d.solver);
  double spread = 0.0;
  for (Index i = 0; i < d.problem.n_states(); ++i) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (Index k = 0; k < 5; ++k) {
      double v = states_of(d.problem, olsc, rs.x, k)(N - 1, i);
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    spread = std::max(spread, hi - lo);
  }
  bool flagged = std::find(olsc.flags.begin(), olsc.flags.end(), "olsc-terminal-mean") != olsc.flags.end();
  double secs = seconds_since(t0);
  bool ok = rm.status == SolveStatus::optimal && rs.status == SolveStatus::optimal &&
            residual <= kTerminalResidualTol && spread > 0.0 && flagged && secs <= kStructureSeconds;
  return {ok, "olmc terminal residual " + num(residual) + ", olsc terminal spread " + num(spread) + ", " +
                  num(secs) + " s"};
}

Outcome lqr_reproduction() {
  CareSolution care = solve_care(LqrSpec::scalar(1.0, 1.0, 1.0, 1.0));
  const double p_exact = 1.0 + std::sqrt(2.0);
  double p_err = std::abs(care.P(0, 0) - p_exact);

  // Zero process noise, uncertain initial state.
  LqrSpec unstable = LqrSpec::scalar(1.0, 1.0, 1.0, 1.0);
  auto grid = settling_grid(care, 5.0, 101);
  std::vector<StochasticModel> x0{StochasticModel::gaussian(1.0, 0.2)};
  PathEnsemble quiet = feedback_ensemble(unstable, care.K, Mat::Zero(1, 1), x0, grid, kLqrPaths, 3);
  bool shrinking = true;
  for (Index k = 1; k < quiet.std.rows(); ++k) shrinking = shrinking && quiet.std(k, 0) < quiet.std(k - 1, 0);

  // With noise: stable plant a = -1 so the open loop has a stationary spread.
  const double noise = 0.5;
  LqrSpec stable = LqrSpec::scalar(-1.0, 1.0, 1.0, 1.0);
  CareSolution cs = solve_care(stable);
  auto g2 = settling_grid(cs, 8.0, 201);
  std::vector<StochasticModel> x0d{StochasticModel::discrete({1.0}, {1.0})};
  Mat Bw = Mat::Constant(1, 1, noise);
  PathEnsemble closed = feedback_ensemble(stable, cs.K, Bw, x0d, g2, kLqrPaths, 5);
  const double open_stationary = noise / std::sqrt(2.0 * 1.0);
  const double closed_final = closed.std(closed.std.rows() - 1, 0);

  bool ok = p_err <= kCareTol && care.residual <= kCareTol && shrinking && closed_final < open_stationary &&
            quiet.n_diverged() == 0 && closed.n_diverged() == 0;
  return {ok, "P err " + num(p_err) + ", residual " + num(care.residual) + ", std monotone " +
                  (shrinking ? "yes" : "no") + ", closed-loop std " + num(closed_final) + " vs open-loop " +
                  num(open_stationary)};
}

Outcome oracle_equivalence() {
  Document d = load("two_node.json");
  CompiledNlp nlp = compile_deterministic(d.problem);
  Index free = 0;
  for (Index i = 0; i < nlp.n; ++i) free += nlp.lower(i) < nlp.upper(i);
  OracleCheck chk = oracle_check(nlp, d.solver, kOracleResolution, kOracleObjectiveTol);
  bool ok = free <= 4 && chk.agree && chk.solver.status == SolveStatus::optimal;
  return {ok, std::to_string(free) + " free variables, solver " + num(chk.solver.objective) + ", grid " +
                  num(chk.oracle.value) + ", argmin distance " + num(chk.argmin_distance) + " cells"};
}

int shell(const std::string& cmd) {
  int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string quoted(const std::string& s) { return "'" + s + "'"; }

Outcome determinism(const fs::path& scratch) {
  const std::string problem = kProblems + "/regulator.json";
  std::vector<std::string> bodies;
  std::string detail;
  bool ok = true;
  for (int threads : {1, 2, 8}) {
    fs::path out = scratch / ("threads" + std::to_string(threads));
    std::string cmd = "UCCD_THREADS=" + std::to_string(threads) + " " + quoted(kTool) + " solve " + quoted(problem) +
                      " --formulation se --samples 64 --seed 7 --out " + quoted(out.string()) + " > /dev/null";
    int rc = shell(cmd);
    ok = ok && rc == 0;
    bodies.push_back(fs::exists(out / "solution.json") ? read_file((out / "solution.json").string()) : "");
    detail += (detail.empty() ? "" : ", ") + std::to_string(threads) + " thread(s) exit " + std::to_string(rc);
  }
  bool same = !bodies[0].empty() && bodies[0] == bodies[1] && bodies[1] == bodies[2];
  return {ok && same, detail + (same ? "; solution.json identical (" : "; solution.json differs (") +
                          hex64(fnv1a64(bodies[0])) + ")"};
}

Outcome pareto_sanity(const fs::path& scratch) {
  const std::string problem = kProblems + "/tradeoff.json";
  fs::path out = scratch / "pareto";
  int rc = shell(quoted(kTool) + " pareto " + quoted(problem) + " --alpha-grid " + std::to_string(kParetoPoints) +
                 " --out " + quoted(out.string()) + " > /dev/null");
  std::vector<double> alpha, mu, sd;
  std::vector<std::string> status;
  if (fs::exists(out / "pareto.csv")) {
    std::istringstream in(read_file((out / "pareto.csv").string()));
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      std::istringstream ls(line);
      std::string a, m, s, st;
      std::getline(ls, a, ',');
      std::getline(ls, m, ',');
      std::getline(ls, s, ',');
      std::getline(ls, st, ',');
      alpha.push_back(std::stod(a));
      mu.push_back(std::stod(m));
      sd.push_back(std::stod(s));
      status.push_back(st);
    }
  }
  bool ok = rc == 0 && static_cast<int>(alpha.size()) == kParetoPoints;
  double mu_up = 0.0, sd_down = 0.0;
  for (std::size_t i = 1; i < alpha.size(); ++i) {
    mu_up = std::max(mu_up, mu[i] - mu[i - 1]);
    sd_down = std::max(sd_down, sd[i - 1] - sd[i]);
  }
  ok = ok && mu_up <= kParetoSlack && sd_down <= kParetoSlack;

  // Endpoint oracle: the alpha_w = 1 row is the plain expectation solve.
  double endpoint_gap = std::numeric_limits<double>::infinity();
  if (!mu.empty()) {
    Document d = load("tradeoff.json");
    FormulationParams fp = d.formulation;
    fp.type = FormulationType::se;
    SolveReport r = run(d.problem, fp, d.solver);
    endpoint_gap = std::abs(r.objective - mu.back());
  }
  ok = ok && endpoint_gap <= kParetoSlack;
  return {ok, "exit " + std::to_string(rc) + ", " + std::to_string(alpha.size()) + " rows, max o_mu increase " +
                  num(mu_up) + ", max o_sigma decrease " + num(sd_down) + ", endpoint gap " + num(endpoint_gap)};
}

}  // namespace

int main() {
  fs::path scratch = fs::temp_directory_path() / ("uccd_acceptance_" + std::to_string(::getpid()));
  fs::create_directories(scratch);
  struct Criterion {
    const char* name;
    std::function<Outcome()> body;
  };
  std::vector<Criterion> criteria = {
      {"reduction identities", reduction_identities},
      {"vertex exactness", vertex_exactness},
      {"chance-constraint calibration", chance_calibration},
      {"risk-measure oracles", risk_oracles},
      {"monotone conservatism", monotone_conservatism},
      {"olsc/olmc contract", structure_contract},
      {"lqr reproduction", lqr_reproduction},
      {"oracle equivalence", oracle_equivalence},
      {"determinism", [&] { return determinism(scratch); }},
      {"pareto sweep sanity", [&] { return pareto_sanity(scratch); }},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    auto t0 = std::chrono::steady_clock::now();
    try {
      o = criteria[i].body();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << (i + 1) << "] " << criteria[i].name << ": " << o.detail
              << " (" << num(seconds_since(t0)) << " s)" << std::endl;
  }
  std::error_code ec;
  fs::remove_all(scratch, ec);
  return failures == 0 ? 0 : 1;
}
