#pragma once

// Command implementations behind the `uccd` tool.  Each returns a process exit
// code: 0 success, 2 validation, 3 compatibility, 4 solver non-optimal,
// 5 internal.

#include <cmath>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "uccd/document.hpp"
#include "uccd/dynamics.hpp"
#include "uccd/formulations.hpp"
#include "uccd/report.hpp"
#include "uccd/solve.hpp"

namespace uccd {

enum ExitCode : int { kExitOk = 0, kExitValidation = 2, kExitCompatibility = 3, kExitNonOptimal = 4, kExitInternal = 5 };

template <class F>
int guarded(F&& body, std::ostream& err = std::cerr) {
  try {
    return body();
  } catch (const ValidationError& e) {
    err << "validation error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const CompatibilityError& e) {
    err << "compatibility error: " << e.what() << '\n';
    return kExitCompatibility;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << '\n';
    return kExitNonOptimal;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return kExitInternal;
  }
}

// Options shared by the commands that load and solve a document.  Unset
// fields keep the document's values.
struct RunOptions {
  std::string path;
  std::string out = ".";
  std::optional<std::string> formulation;
  std::optional<std::string> structure;
  std::optional<Index> samples;
  std::optional<std::uint64_t> seed;
  std::optional<double> alpha_w;
  std::optional<double> k_s;
  std::optional<double> p_f;
  std::optional<int> max_outer_iters;
  std::optional<int> max_inner_iters;
  std::optional<double> constraint_tol;
  std::optional<double> gradient_tol;
  std::optional<double> penalty_init;
  Index mc_samples = 10000;
};

struct LoadedRun {
  std::string text;
  Document doc;
  std::vector<std::pair<std::string, std::string>> overrides;
};

inline LoadedRun load_run(const RunOptions& o) {
  LoadedRun r;
  r.text = read_file(o.path);
  r.doc = parse_document(r.text);
  auto& fp = r.doc.formulation;
  auto& so = r.doc.solver;
  auto note = [&](const char* k, const std::string& v) { r.overrides.emplace_back(k, v); };
  if (o.formulation) {
    fp.type = parse_formulation(*o.formulation);
    note("formulation", *o.formulation);
  }
  if (o.structure) {
    if (*o.structure == "olsc") fp.structure = ControlStructure::olsc;
    else if (*o.structure == "olmc") fp.structure = ControlStructure::olmc;
    else throw ValidationError("structure must be 'olsc' or 'olmc'");
    note("structure", *o.structure);
  }
  if (o.samples) {
    fp.samples = *o.samples;
    note("samples", std::to_string(*o.samples));
  }
  if (o.seed) {
    fp.seed = *o.seed;
    note("seed", std::to_string(*o.seed));
  }
  if (o.alpha_w) {
    fp.alpha_w = *o.alpha_w;
    note("alpha_w", fmt(*o.alpha_w));
  }
  if (o.k_s) {
    fp.k_s = *o.k_s;
    note("k_s", fmt(*o.k_s));
  }
  if (o.p_f) {
    fp.p_f = *o.p_f;
    note("p_f", fmt(*o.p_f));
  }
  if (o.max_outer_iters) {
    so.max_outer_iters = *o.max_outer_iters;
    note("max_outer_iters", std::to_string(*o.max_outer_iters));
  }
  if (o.max_inner_iters) {
    so.max_inner_iters = *o.max_inner_iters;
    note("max_inner_iters", std::to_string(*o.max_inner_iters));
  }
  if (o.constraint_tol) {
    so.constraint_tol = *o.constraint_tol;
    note("constraint_tol", fmt(*o.constraint_tol));
  }
  if (o.gradient_tol) {
    so.gradient_tol = *o.gradient_tol;
    note("gradient_tol", fmt(*o.gradient_tol));
  }
  if (o.penalty_init) {
    so.penalty_init = *o.penalty_init;
    note("penalty_init", fmt(*o.penalty_init));
  }
  if (o.mc_samples < 0) throw ValidationError("mc-samples must be >= 0");
  fp.validate();
  so.validate();
  return r;
}

inline RunManifest make_manifest(const std::string& command, const RunOptions& o, const LoadedRun& r) {
  RunManifest m;
  m.command = command;
  m.problem_path = o.path;
  m.formulation = to_string(r.doc.formulation.type);
  m.seed = r.doc.formulation.seed;
  m.overrides = r.overrides;
  m.out_dir = o.out;
  m.problem_hash = problem_hash(r.text);
  return m;
}

inline std::string dump(const json& j) { return j.dump(2) + "\n"; }

// ---------------------------------------------------------------------------
// validate
// ---------------------------------------------------------------------------

inline int cmd_validate(const std::string& path, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  return guarded(
      [&] {
        Document d = parse_document(read_file(path));
        check_compatibility(d.problem, d.formulation);
        out << "ok: " << d.problem.n_states() << " states, " << d.problem.n_controls() << " controls, "
            << d.problem.n_statics() << " statics, " << d.problem.grid.size() << " nodes, "
            << d.problem.bindings.size() << " uncertainty bindings\n";
        return int{kExitOk};
      },
      err);
}

// ---------------------------------------------------------------------------
// solve
// ---------------------------------------------------------------------------

inline int cmd_solve(const RunOptions& o, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  return guarded(
      [&] {
        LoadedRun run = load_run(o);
        const std::filesystem::path dir(o.out);
        write_atomic(dir / "manifest.json", dump(make_manifest("solve", o, run).to_json()));
        Compiled c = compile(run.doc.problem, run.doc.formulation);
        SolveReport r = solve_compiled(c, run.doc.solver);
        write_atomic(dir / "solution.json", dump(solution_json(c, r)));
        write_atomic(dir / "trajectories.csv", trajectories_csv(c, r));
        RiskReport risk = risk_report(c, r, o.mc_samples, run.doc.formulation.seed + 1, run.doc.solver.constraint_tol,
                                      run.doc.formulation.n_levels);
        json rep = risk_json(risk);
        if (c.nlp.structure == ControlStructure::olmc && c.nlp.scenarios.rows() > 1)
          rep["flags"] = json::array({"olmc-scenario-0-controls"});
        write_atomic(dir / "report.json", dump(rep));
        out << to_string(r.status) << " objective " << fmt(r.objective) << " violation " << fmt(r.max_violation)
            << '\n';
        if (r.status != SolveStatus::optimal) {
          err << "solver did not reach optimality: " << r.message << '\n';
          return int{kExitNonOptimal};
        }
        return int{kExitOk};
      },
      err);
}

// ---------------------------------------------------------------------------
// pareto
// ---------------------------------------------------------------------------

struct ParetoRow {
  double alpha_w = 0.0;
  double o_mu = 0.0;
  double o_sigma = 0.0;
  SolveStatus status = SolveStatus::optimal;
  double objective = 0.0;
};

// Weighted mean/std sweep, alpha_w = 0, 1/(K-1), ..., 1.
inline std::vector<ParetoRow> pareto_sweep(const UccdProblem& pb, FormulationParams fp, const SolverOptions& so,
                                           int k) {
  require(k >= 2, "alpha grid needs at least 2 points");
  fp.type = FormulationType::pr_w;
  std::vector<ParetoRow> rows;
  for (int i = 0; i < k; ++i) {
    fp.alpha_w = i == k - 1 ? 1.0 : static_cast<double>(i) / static_cast<double>(k - 1);
    Compiled c = compile(pb, fp);
    SolveReport r = solve_compiled(c, so);
    ObjectiveSpread s = objective_spread(solved_nlp(c, r), r.x);
    rows.push_back({fp.alpha_w, s.mean, s.std, r.status, r.objective});
  }
  return rows;
}

inline std::string pareto_csv(const std::vector<ParetoRow>& rows) {
  std::ostringstream os;
  os << "alpha_w,o_mu,o_sigma,status,objective\n";
  for (const auto& r : rows)
    os << fmt(r.alpha_w) << ',' << fmt(r.o_mu) << ',' << fmt(r.o_sigma) << ',' << to_string(r.status) << ','
       << fmt(r.objective) << '\n';
  return os.str();
}

inline int cmd_pareto(const RunOptions& o, int k, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  return guarded(
      [&] {
        LoadedRun run = load_run(o);
        run.overrides.emplace_back("alpha_grid", std::to_string(k));
        const std::filesystem::path dir(o.out);
        RunManifest m = make_manifest("pareto", o, run);
        m.formulation = "pr-w";
        write_atomic(dir / "manifest.json", dump(m.to_json()));
        auto rows = pareto_sweep(run.doc.problem, run.doc.formulation, run.doc.solver, k);
        write_atomic(dir / "pareto.csv", pareto_csv(rows));
        bool all = true;
        for (const auto& r : rows) {
          out << "alpha_w " << fmt(r.alpha_w) << "  o_mu " << fmt(r.o_mu) << "  o_sigma " << fmt(r.o_sigma) << "  "
              << to_string(r.status) << '\n';
          all = all && r.status == SolveStatus::optimal;
        }
        return int{all ? kExitOk : kExitNonOptimal};
      },
      err);
}

// ---------------------------------------------------------------------------
// compare
// ---------------------------------------------------------------------------

struct ComparisonEntry {
  std::string formulation;
  SolveStatus status = SolveStatus::optimal;
  double objective = 0.0;
  std::vector<WorstCase> worst_case;
  RiskReport risk;
};

inline ComparisonEntry compare_one(const UccdProblem& pb, FormulationParams fp, const SolverOptions& so,
                                   FormulationType type, Index mc_samples) {
  fp.type = type;
  Compiled c = compile(pb, fp);
  SolveReport r = solve_compiled(c, so);
  ComparisonEntry e;
  e.formulation = to_string(type);
  e.status = r.status;
  e.objective = r.objective;
  e.worst_case = worst_case_at(c, r, so);
  e.risk = risk_report(c, r, mc_samples, fp.seed + 1, so.constraint_tol, fp.n_levels);
  return e;
}

inline json comparison_json(const std::vector<ComparisonEntry>& entries) {
  json rows = json::array();
  for (const auto& e : entries) {
    json j;
    j["formulation"] = e.formulation;
    j["status"] = to_string(e.status);
    j["objective"] = e.objective;
    json wc = json::object();
    for (const auto& w : e.worst_case) wc[w.name] = w.value;
    j["worst_case_g"] = wc;
    json pf = json::object();
    for (const auto& c : e.risk.constraints) pf[c.name] = c.pfail ? json(*c.pfail) : json();
    j["empirical_pfail"] = pf;
    j["system_pfail"] = e.risk.system_pfail ? json(*e.risk.system_pfail) : json();
    rows.push_back(j);
  }
  json out;
  out["entries"] = rows;
  if (!entries.empty()) {
    out["mc_samples"] = entries.front().risk.mc_samples;
    out["mc_seed"] = entries.front().risk.mc_seed;
  }
  return out;
}

inline int cmd_compare(const RunOptions& o, const std::vector<std::string>& formulations,
                       std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  return guarded(
      [&] {
        require(!formulations.empty(), "compare needs at least one formulation");
        LoadedRun run = load_run(o);
        std::string list;
        for (const auto& f : formulations) list += (list.empty() ? "" : ",") + f;
        run.overrides.emplace_back("formulations", list);
        std::vector<FormulationType> types;
        for (const auto& f : formulations) types.push_back(parse_formulation(f));
        const std::filesystem::path dir(o.out);
        RunManifest m = make_manifest("compare", o, run);
        m.formulation = list;
        write_atomic(dir / "manifest.json", dump(m.to_json()));
        std::vector<ComparisonEntry> entries;
        for (auto t : types)
          entries.push_back(compare_one(run.doc.problem, run.doc.formulation, run.doc.solver, t, o.mc_samples));
        write_atomic(dir / "comparison.json", dump(comparison_json(entries)));
        bool all = true;
        for (const auto& e : entries) {
          out << e.formulation << ": " << to_string(e.status) << " objective " << fmt(e.objective);
          if (e.risk.system_pfail) out << " pfail " << fmt(*e.risk.system_pfail);
          out << '\n';
          all = all && e.status == SolveStatus::optimal;
        }
        return int{all ? kExitOk : kExitNonOptimal};
      },
      err);
}

// ---------------------------------------------------------------------------
// oracle
// ---------------------------------------------------------------------------

struct OracleCheck {
  SolveReport solver;
  OracleResult oracle;
  double objective_gap = std::numeric_limits<double>::infinity();
  double argmin_distance = std::numeric_limits<double>::infinity();  // in grid cells, max over dimensions
  bool agree = false;
};

inline OracleCheck oracle_check(const CompiledNlp& nlp, const SolverOptions& so, int resolution,
                                double objective_tol = 1e-3) {
  OracleCheck c;
  c.solver = solve_nlp(nlp, nlp.initial_guess, so);
  c.oracle = grid_oracle(nlp, resolution, 1e-9);
  const bool solved = c.solver.status == SolveStatus::optimal;
  if (solved && c.oracle.feasible) {
    c.objective_gap = std::abs(c.solver.objective - c.oracle.value);
    c.argmin_distance = 0.0;
    for (Index i = 0; i < nlp.n; ++i) {
      double d = std::abs(c.solver.x(i) - c.oracle.x(i));
      c.argmin_distance = std::max(c.argmin_distance, c.oracle.cell(i) > 0.0 ? d / c.oracle.cell(i) : d / 1e-9);
    }
    c.agree = c.argmin_distance <= 1.0 && c.objective_gap <= objective_tol;
  } else {
    c.agree = !c.oracle.feasible && c.solver.status == SolveStatus::infeasible;
  }
  return c;
}

inline int cmd_oracle(const RunOptions& o, int resolution, std::ostream& out = std::cout,
                      std::ostream& err = std::cerr) {
  return guarded(
      [&] {
        LoadedRun run = load_run(o);
        run.overrides.emplace_back("resolution", std::to_string(resolution));
        Compiled c = compile(run.doc.problem, run.doc.formulation);
        if (c.bilevel()) throw CompatibilityError("oracle cross-check needs a single-level formulation");
        if (c.nlp.n > 6)
          throw ValidationError("oracle needs at most 6 decision variables, document compiles to " +
                                std::to_string(c.nlp.n) + "; reduce grid.n_nodes");
        const std::filesystem::path dir(o.out);
        write_atomic(dir / "manifest.json", dump(make_manifest("oracle", o, run).to_json()));
        OracleCheck chk = oracle_check(c.nlp, run.doc.solver, resolution);
        json j;
        j["resolution"] = resolution;
        j["solver_status"] = to_string(chk.solver.status);
        j["solver_objective"] = chk.solver.objective;
        j["solver_x"] = doc::vec_out(chk.solver.x);
        j["oracle_feasible"] = chk.oracle.feasible;
        j["oracle_objective"] = chk.oracle.feasible ? json(chk.oracle.value) : json();
        j["oracle_x"] = chk.oracle.feasible ? doc::vec_out(chk.oracle.x) : json();
        j["cell"] = doc::vec_out(chk.oracle.cell);
        j["points_evaluated"] = chk.oracle.evaluated;
        j["objective_gap"] = std::isfinite(chk.objective_gap) ? json(chk.objective_gap) : json();
        j["argmin_distance_cells"] = std::isfinite(chk.argmin_distance) ? json(chk.argmin_distance) : json();
        j["agree"] = chk.agree;
        write_atomic(dir / "oracle.json", dump(j));
        out << "solver " << to_string(chk.solver.status) << " " << fmt(chk.solver.objective) << ", oracle "
            << (chk.oracle.feasible ? fmt(chk.oracle.value) : std::string("infeasible")) << ", gap "
            << fmt(chk.objective_gap) << ", argmin distance " << fmt(chk.argmin_distance) << " cells\n";
        return int{chk.agree ? kExitOk : kExitNonOptimal};
      },
      err);
}

// ---------------------------------------------------------------------------
// lqr-demo
// ---------------------------------------------------------------------------

struct LqrDemoOptions {
  double a = 1.0, b = 1.0, q = 1.0, r = 1.0;
  double noise = 0.0;
  double x0 = 1.0;
  double x0_std = 0.0;
  Index paths = 1000;
  std::uint64_t seed = 0;
  Index nodes = 201;
  double time_constants = 5.0;
  std::string out = ".";
};

inline std::string ensemble_csv(const PathEnsemble& e) {
  std::ostringstream os;
  const Index ns = e.mean.cols();
  os << "time";
  for (Index i = 0; i < ns; ++i) os << ",mean" << i << ",std" << i;
  os << '\n';
  for (std::size_t k = 0; k < e.times.size(); ++k) {
    os << fmt(e.times[k]);
    for (Index i = 0; i < ns; ++i)
      os << ',' << fmt(e.mean(static_cast<Index>(k), i)) << ',' << fmt(e.std(static_cast<Index>(k), i));
    os << '\n';
  }
  return os.str();
}

inline int cmd_lqr_demo(const LqrDemoOptions& o, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  return guarded(
      [&] {
        require(o.paths >= 1, "paths must be >= 1");
        require(o.noise >= 0.0 && o.x0_std >= 0.0, "noise and x0-std must be >= 0");
        require(o.nodes >= 2, "nodes must be >= 2");
        LqrSpec spec = LqrSpec::scalar(o.a, o.b, o.q, o.r);
        CareSolution care = solve_care(spec);
        auto grid = settling_grid(care, o.time_constants, static_cast<std::size_t>(o.nodes));
        std::vector<StochasticModel> x0{o.x0_std > 0.0 ? StochasticModel::gaussian(o.x0, o.x0_std)
                                                       : StochasticModel::discrete({o.x0}, {1.0})};
        Mat Bw = Mat::Constant(1, 1, o.noise);
        PathEnsemble e = feedback_ensemble(spec, care.K, Bw, x0, grid, o.paths, o.seed);
        write_atomic(std::filesystem::path(o.out) / "lqr_ensemble.csv", ensemble_csv(e));
        char line[160];
        std::snprintf(line, sizeof line, "gain %.10g\nP %.10g\nresidual %.3e\n", care.K(0, 0), care.P(0, 0),
                      care.residual);
        out << line;
        if (e.n_diverged() > 0) out << e.n_diverged() << " paths diverged\n";
        return int{kExitOk};
      },
      err);
}

}  // namespace uccd
