#pragma once

// Run artifacts: manifest, solution.json, trajectories.csv, report.json with
// fresh-sample risk diagnostics, plus atomic file output.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "uccd/document.hpp"
#include "uccd/formulations.hpp"
#include "uccd/parallel.hpp"
#include "uccd/risk.hpp"
#include "uccd/solve.hpp"

namespace uccd {

inline constexpr const char* kToolVersion = "1.0.0";

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot read '" + path + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// Writes to a sibling temporary and renames it over the target.
inline void write_atomic(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write '" + tmp.string() + "'");
    out << content;
    out.flush();
    if (!out) throw std::runtime_error("write failed for '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

struct RunManifest {
  std::string command;
  std::string problem_path;
  std::string formulation;
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, std::string>> overrides;
  std::string out_dir;
  std::string tool_version = kToolVersion;
  std::string problem_hash;

  json to_json() const {
    json j;
    j["command"] = command;
    j["problem_path"] = problem_path;
    j["formulation"] = formulation;
    j["seed"] = seed;
    json o = json::object();
    for (const auto& [k, v] : overrides) o[k] = v;
    j["overrides"] = o;
    j["out_dir"] = out_dir;
    j["tool_version"] = tool_version;
    j["problem_hash"] = problem_hash;
    return j;
  }
};

inline std::string problem_hash(std::string_view bytes) { return "fnv1a64:" + hex64(fnv1a64(bytes)); }

// ---------------------------------------------------------------------------
// Decoding a solution
// ---------------------------------------------------------------------------

// The NLP whose layout the report's decision vector follows.
inline CompiledNlp solved_nlp(const Compiled& c, const SolveReport& r) {
  if (c.wcr && r.pool.rows() > 0) return c.wcr->build_outer(r.pool);
  return c.nlp;
}

inline Mat slice_matrix(const CompiledNlp& nlp, const Vec& x, const std::string& name, Index rows, Index cols) {
  Mat m = Mat::Zero(rows, cols);
  const Slice* s = nlp.slice(name);
  if (!s) return m;
  for (Index k = 0; k < s->rows; ++k)
    for (Index j = 0; j < s->cols; ++j) m(k, j) = x(s->offset + k * s->cols + j);
  return m;
}

inline Mat controls_of(const UccdProblem& pb, const CompiledNlp& nlp, const Vec& x, Index scenario) {
  std::string name = nlp.structure == ControlStructure::olmc ? "u[" + std::to_string(scenario) + "]" : "u";
  return slice_matrix(nlp, x, name, static_cast<Index>(pb.grid.size()), pb.n_controls());
}

inline Mat states_of(const UccdProblem& pb, const CompiledNlp& nlp, const Vec& x, Index scenario) {
  return slice_matrix(nlp, x, "xi[" + std::to_string(scenario) + "]", static_cast<Index>(pb.grid.size()),
                      pb.n_states());
}

inline Vec statics_of(const UccdProblem& pb, const CompiledNlp& nlp, const Vec& x) {
  const Slice* s = nlp.slice("p");
  if (!s) return Vec::Zero(pb.n_statics());
  return x.segment(s->offset, s->size());
}

// Scenario values of the objective functional at x (positive-weight scenarios
// of the objective reduction).
struct ObjectiveSpread {
  double mean = 0.0;
  double std = 0.0;
  std::vector<double> values;
};

inline ObjectiveSpread objective_spread(const CompiledNlp& nlp, const Vec& x) {
  ObjectiveSpread out;
  auto y = nlp.elements(x);
  const auto& r = nlp.objective;
  double wsum = 0.0;
  for (std::size_t i = 0; i < r.terms.size(); ++i) {
    out.values.push_back(r.terms[i].value(y.data(), x.data()));
    wsum += r.weights[i];
  }
  for (std::size_t i = 0; i < out.values.size(); ++i) out.mean += r.weights[i] / wsum * out.values[i];
  double var = 0.0;
  for (std::size_t i = 0; i < out.values.size(); ++i)
    var += r.weights[i] / wsum * (out.values[i] - out.mean) * (out.values[i] - out.mean);
  out.std = std::sqrt(std::max(0.0, var));
  return out;
}

// ---------------------------------------------------------------------------
// solution.json / trajectories.csv
// ---------------------------------------------------------------------------

inline json solution_json(const Compiled& c, const SolveReport& r) {
  const UccdProblem& pb = *c.problem;
  CompiledNlp nlp = solved_nlp(c, r);
  json j;
  j["status"] = to_string(r.status);
  j["objective"] = r.objective;
  j["max_violation"] = r.max_violation;
  j["stationarity"] = r.stationarity;
  j["message"] = r.message;
  j["formulation"] = nlp.formulation;
  j["structure"] = to_string(nlp.structure);
  j["exactness"] = nlp.exactness;
  json flags = json::array();
  for (const auto& f : nlp.flags) flags.push_back(f);
  for (const auto& f : r.flags)
    if (std::find(nlp.flags.begin(), nlp.flags.end(), f) == nlp.flags.end()) flags.push_back(f);
  j["flags"] = flags;
  j["time"] = pb.grid.nodes();
  json slices;
  for (const auto& s : nlp.layout) {
    if (s.name == "p") continue;
    slices[s.name] = doc::mat_out(slice_matrix(nlp, r.x, s.name, s.rows, s.cols));
  }
  j["slices"] = slices;
  json statics = json::object();
  Vec p = statics_of(pb, nlp, r.x);
  for (Index i = 0; i < p.size(); ++i) statics[pb.statics.vars[static_cast<std::size_t>(i)].name] = p(i);
  j["statics"] = statics;
  json scen;
  scen["binding_order"] = pb.binding_order();
  scen["points"] = doc::mat_out(nlp.scenarios);
  scen["weights"] = nlp.scenario_weights;
  j["scenarios"] = scen;
  json cons = json::array();
  for (std::size_t i = 0; i < nlp.inequalities.size(); ++i) {
    json o;
    o["label"] = nlp.inequalities[i].label;
    o["value"] = i < static_cast<std::size_t>(r.inequalities.size()) ? r.inequalities(static_cast<Index>(i)) : 0.0;
    o["multiplier"] = i < static_cast<std::size_t>(r.mu.size()) ? r.mu(static_cast<Index>(i)) : 0.0;
    cons.push_back(o);
  }
  j["inequalities"] = cons;
  j["equality_residual_max"] = r.equalities.size() ? r.equalities.cwiseAbs().maxCoeff() : 0.0;
  j["generation_rounds"] = r.generation_rounds;
  json wc = json::array();
  for (const auto& w : r.worst_case) {
    json o;
    o["name"] = w.name;
    o["value"] = w.value;
    o["q"] = doc::vec_out(w.q);
    wc.push_back(o);
  }
  j["worst_case"] = wc;
  json trace = json::array();
  for (const auto& t : r.trace)
    trace.push_back({{"outer", t.outer}, {"inner_iters", t.inner_iters}, {"objective", t.objective},
                     {"violation", t.violation}, {"penalty", t.penalty}, {"stationarity", t.stationarity}});
  j["trace"] = trace;
  return j;
}

inline std::string trajectories_csv(const Compiled& c, const SolveReport& r) {
  const UccdProblem& pb = *c.problem;
  CompiledNlp nlp = solved_nlp(c, r);
  const Index N = static_cast<Index>(pb.grid.size());
  std::vector<std::string> header{"time"};
  std::vector<Mat> cols;
  const bool olmc = nlp.structure == ControlStructure::olmc;
  const Index S = nlp.scenarios.rows();
  for (Index s = 0; s < (olmc ? S : 1); ++s) {
    if (pb.n_controls() == 0) break;
    cols.push_back(controls_of(pb, nlp, r.x, s));
    for (Index j = 0; j < pb.n_controls(); ++j)
      header.push_back("u" + std::to_string(j) + (olmc ? "[" + std::to_string(s) + "]" : ""));
  }
  for (Index s = 0; s < S; ++s) {
    cols.push_back(states_of(pb, nlp, r.x, s));
    for (Index i = 0; i < pb.n_states(); ++i) header.push_back("xi" + std::to_string(i) + "[" + std::to_string(s) + "]");
  }
  std::ostringstream os;
  for (std::size_t h = 0; h < header.size(); ++h) os << (h ? "," : "") << header[h];
  os << '\n';
  for (Index k = 0; k < N; ++k) {
    os << fmt(pb.grid[static_cast<std::size_t>(k)]);
    for (const auto& m : cols)
      for (Index j = 0; j < m.cols(); ++j) os << ',' << fmt(m(k, j));
    os << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Risk diagnostics at a solution
// ---------------------------------------------------------------------------

// Worst node value of every source inequality under realization q, with states
// re-simulated from the solution's controls and statics.
inline std::vector<double> constraint_maxima(const UccdProblem& pb, const Mat& U, const Vec& p, const Vec& xi_start,
                                             const Vec& q) {
  Realization R = pb.realize(q);
  const Index ns = pb.n_states();
  Vec xi0 = xi_start;
  for (Index c = 0; c < ns; ++c) {
    if (R.xi0[static_cast<std::size_t>(c)]) xi0(c) = *R.xi0[static_cast<std::size_t>(c)];
    else if (pb.boundary.initial_fixed(c)) xi0(c) = pb.boundary.xi0(c);
  }
  Mat X = simulate_trapezoid(pb, U, p, R, xi0);
  Trajectory ut{U, {}, TrajectoryKind::control}, xt{X, {}, TrajectoryKind::state};
  auto vals = eval_constraints(pb, ut, xt, p, R);
  std::vector<double> out;
  for (const auto& v : vals.g) out.push_back(*std::max_element(v.begin(), v.end()));
  return out;
}

struct ConstraintRisk {
  std::string name;
  std::optional<double> mean, std, cvar, pfail, pos_fail, belief, plausibility;
};

struct RiskReport {
  std::vector<ConstraintRisk> constraints;
  Index mc_samples = 0;
  std::uint64_t mc_seed = 0;
  double failure_threshold = 0.0;
  std::optional<double> system_pfail;
};

// Fresh Monte Carlo (stochastic renderings, seed given) and alpha-cut
// propagation (fuzzy renderings) at a solution.  Failure means g > threshold.
inline RiskReport risk_report(const Compiled& c, const SolveReport& r, Index mc_samples, std::uint64_t mc_seed,
                              double threshold, Index n_levels = kDefaultAlphaLevels) {
  const UccdProblem& pb = *c.problem;
  CompiledNlp nlp = solved_nlp(c, r);
  RiskReport rep;
  rep.mc_samples = mc_samples;
  rep.mc_seed = mc_seed;
  rep.failure_threshold = threshold;
  const Mat U = controls_of(pb, nlp, r.x, 0);
  const Vec p = statics_of(pb, nlp, r.x);
  const Vec xs = pb.n_states() > 0 ? Vec(states_of(pb, nlp, r.x, 0).row(0).transpose()) : Vec();

  std::vector<std::size_t> sources;
  for (std::size_t i = 0; i < pb.constraints.inequalities.size(); ++i)
    if (pb.constraints.inequalities[i].origin != Inequality::Origin::epigraph) sources.push_back(i);
  for (std::size_t i : sources) rep.constraints.push_back({pb.constraints.inequalities[i].name, {}, {}, {}, {}, {}, {}, {}});
  if (sources.empty()) return rep;

  auto evaluate = [&](const Mat& points) {
    Mat G(points.rows(), static_cast<Index>(sources.size()));
    std::vector<char> bad(static_cast<std::size_t>(points.rows()), 0);
    parallel_for(
        static_cast<std::size_t>(points.rows()),
        [&](std::size_t s) {
          try {
            auto g = constraint_maxima(pb, U, p, xs, points.row(static_cast<Index>(s)).transpose());
            for (std::size_t k = 0; k < sources.size(); ++k) G(static_cast<Index>(s), static_cast<Index>(k)) = g[sources[k]];
          } catch (const NumericalError&) {
            bad[s] = 1;
          }
        },
        16);
    // Non-finite simulations count as failures.
    for (std::size_t s = 0; s < bad.size(); ++s)
      if (bad[s]) G.row(static_cast<Index>(s)).setConstant(std::numeric_limits<double>::infinity());
    return G;
  };

  const bool stochastic = !pb.bindings.empty() &&
                          std::all_of(pb.bindings.begin(), pb.bindings.end(),
                                      [](const Binding& b) { return b.stochastic.has_value() && b.width() == 1; });
  const bool no_uncertainty = pb.bindings.empty();
  if ((stochastic || no_uncertainty) && mc_samples > 0) {
    Mat pts = no_uncertainty ? Mat(1, 0) : sample_stochastic(stochastic_models(pb), mc_samples, mc_seed).points;
    Mat G = evaluate(pts);
    const Index n = G.rows();
    Index any_fail = 0;
    for (Index s = 0; s < n; ++s)
      if ((G.row(s).array() > threshold).any()) ++any_fail;
    rep.system_pfail = static_cast<double>(any_fail) / static_cast<double>(n);
    for (std::size_t k = 0; k < sources.size(); ++k) {
      std::vector<double> v(static_cast<std::size_t>(n));
      for (Index s = 0; s < n; ++s) v[static_cast<std::size_t>(s)] = G(s, static_cast<Index>(k));
      auto& cr = rep.constraints[k];
      double m = 0.0;
      for (double x : v) m += x;
      m /= static_cast<double>(n);
      cr.mean = m;
      cr.std = risk::population_std(v);
      cr.cvar = risk::cvar(v, 0.9);
      Index fails = 0;
      for (double x : v) fails += x > threshold;
      cr.pfail = static_cast<double>(fails) / static_cast<double>(n);
    }
  }

  const bool fuzzy = !pb.bindings.empty() &&
                     std::all_of(pb.bindings.begin(), pb.bindings.end(),
                                 [](const Binding& b) { return b.fuzzy.has_value() && b.width() == 1; });
  if (fuzzy) {
    auto sets = fuzzy_sets(pb);
    ScenarioSet grid = alpha_grid_scenarios(sets, n_levels);
    Mat G = evaluate(grid.points);
    const Index combos = grid.size() / n_levels;
    // Nested cuts as a consonant body of evidence: the cut at level j carries
    // mass alpha_j - alpha_{j+1} (top level keeps its own alpha).
    for (std::size_t k = 0; k < sources.size(); ++k) {
      double pos = 0.0, bel = 0.0, pl = 0.0;
      for (Index j = 0; j < n_levels; ++j) {
        double a = grid.levels[static_cast<std::size_t>(j)];
        double next = j + 1 < n_levels ? grid.levels[static_cast<std::size_t>(j + 1)] : 0.0;
        double mass = a - next;
        bool any = false, all = true;
        for (Index cidx = 0; cidx < combos; ++cidx) {
          bool f = G(j * combos + cidx, static_cast<Index>(k)) > threshold;
          any = any || f;
          all = all && f;
        }
        if (any) pos = std::max(pos, a);
        if (any) pl += mass;
        if (all) bel += mass;
      }
      auto& cr = rep.constraints[k];
      cr.pos_fail = pos;
      cr.belief = bel;
      cr.plausibility = pl;
    }
  }
  return rep;
}

// Worst value of each source inequality over the crisp renderings, with the
// solution's controls and statics held fixed.
inline std::vector<WorstCase> worst_case_at(const Compiled& c, const SolveReport& r, const SolverOptions& opts = {}) {
  const UccdProblem& pb = *c.problem;
  std::vector<WorstCase> out;
  if (pb.bindings.empty()) return out;
  for (const auto& b : pb.bindings)
    if (!b.crisp) return out;
  CompiledNlp nlp = solved_nlp(c, r);
  const Mat U = controls_of(pb, nlp, r.x, 0);
  const Vec p = statics_of(pb, nlp, r.x);
  const Vec xs = pb.n_states() > 0 ? Vec(states_of(pb, nlp, r.x, 0).row(0).transpose()) : Vec();
  auto sets = crisp_sets(pb);
  const bool vertices =
      std::all_of(sets.begin(), sets.end(), [](const CrispSet& s) { return s.vertex_enumerable(); });
  for (std::size_t i = 0; i < pb.constraints.inequalities.size(); ++i) {
    if (pb.constraints.inequalities[i].origin == Inequality::Origin::epigraph) continue;
    WcrSubproblem sub;
    sub.name = pb.constraints.inequalities[i].name;
    sub.constraint = static_cast<int>(i);
    sub.sets = sets;
    sub.mode = vertices ? InnerMode::vertex : InnerMode::ascent;
    sub.g = [&pb, &U, &p, &xs, i](const Vec& q, const Vec&) { return constraint_maxima(pb, U, p, xs, q)[i]; };
    InnerMax m = inner_maximize(sub, r.x, opts);
    out.push_back({sub.name, m.value, m.q});
  }
  return out;
}

inline json risk_json(const RiskReport& rep) {
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(); };
  json j;
  j["mc_samples"] = rep.mc_samples;
  j["mc_seed"] = rep.mc_seed;
  j["failure_threshold"] = rep.failure_threshold;
  j["system_pfail"] = opt(rep.system_pfail);
  json cons = json::object();
  for (const auto& c : rep.constraints) {
    json o;
    o["mean"] = opt(c.mean);
    o["std"] = opt(c.std);
    o["cvar"] = opt(c.cvar);
    o["pfail"] = opt(c.pfail);
    o["pos_fail"] = opt(c.pos_fail);
    o["belief"] = opt(c.belief);
    o["plausibility"] = opt(c.plausibility);
    cons[c.name] = o;
  }
  j["constraints"] = cons;
  return j;
}

}  // namespace uccd
