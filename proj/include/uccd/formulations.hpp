#pragma once

// Formulation compilers: expand a problem over a scenario set (OLSC/OLMC),
// then attach an objective and per-constraint treatments to produce a
// CompiledNlp (or a scenario-generation program for worst-case robustness).

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "uccd/common.hpp"
#include "uccd/model.hpp"
#include "uccd/nlp.hpp"
#include "uccd/risk.hpp"
#include "uccd/solve.hpp"
#include "uccd/usets.hpp"

namespace uccd {

// Scenario bookkeeping that survives de-duplication: alpha levels of the
// merged origins (fuzzy grids) and whether the nominal point is among them.
struct ScenarioInfo {
  std::vector<double> levels;
  bool nominal = false;
};

struct ScenarioPlan {
  Mat points;
  std::vector<double> weights;
  std::vector<ScenarioInfo> info;

  Index size() const { return points.rows(); }

  void append(const Vec& q, double w, ScenarioInfo inf) {
    Mat grown(points.rows() + 1, q.size());
    if (points.rows() > 0) grown.topRows(points.rows()) = points;
    grown.row(points.rows()) = q.transpose();
    points = std::move(grown);
    weights.push_back(w);
    info.push_back(std::move(inf));
  }
};

// Identical points are merged (weights summed, first occurrence kept).
inline ScenarioPlan dedup(const ScenarioPlan& in) {
  ScenarioPlan out;
  std::map<std::vector<double>, Index> seen;
  std::vector<Index> keep;
  for (Index r = 0; r < in.size(); ++r) {
    std::vector<double> key(static_cast<std::size_t>(in.points.cols()));
    for (Index c = 0; c < in.points.cols(); ++c) key[static_cast<std::size_t>(c)] = in.points(r, c);
    auto it = seen.find(key);
    if (it == seen.end()) {
      seen.emplace(key, static_cast<Index>(keep.size()));
      keep.push_back(r);
      out.weights.push_back(in.weights[static_cast<std::size_t>(r)]);
      out.info.push_back(in.info[static_cast<std::size_t>(r)]);
    } else {
      auto& dst = out.info[static_cast<std::size_t>(it->second)];
      const auto& src = in.info[static_cast<std::size_t>(r)];
      out.weights[static_cast<std::size_t>(it->second)] += in.weights[static_cast<std::size_t>(r)];
      dst.levels.insert(dst.levels.end(), src.levels.begin(), src.levels.end());
      dst.nominal = dst.nominal || src.nominal;
    }
  }
  out.points.resize(static_cast<Index>(keep.size()), in.points.cols());
  for (std::size_t k = 0; k < keep.size(); ++k) out.points.row(static_cast<Index>(k)) = in.points.row(keep[k]);
  return out;
}

// ---------------------------------------------------------------------------
// Transcription over scenarios
// ---------------------------------------------------------------------------

// Builds the decision layout, bounds, initial guess and every element row for
// a problem expanded over a scenario plan.  Objective and treatments are
// attached afterwards.
class Transcription {
 public:
  Transcription(std::shared_ptr<const UccdProblem> pb, ScenarioPlan plan, ControlStructure structure)
      : pb_(std::move(pb)), plan_(std::move(plan)), structure_(structure) {
    require(plan_.size() >= 1, "scenario set must be nonempty");
    require(plan_.points.cols() == pb_->uncertain_dim(), "scenario columns do not match the binding order");
    build();
  }

  const UccdProblem& problem() const { return *pb_; }
  std::shared_ptr<const UccdProblem> problem_ptr() const { return pb_; }
  const ScenarioPlan& plan() const { return plan_; }
  CompiledNlp& nlp() { return nlp_; }
  const CompiledNlp& nlp() const { return nlp_; }
  Index scenarios() const { return plan_.size(); }
  ControlStructure structure() const { return structure_; }
  const Realization& realization(Index s) const { return real_[static_cast<std::size_t>(s)]; }

  Index control_block(Index s) const { return structure_ == ControlStructure::olmc ? s : 0; }
  Index u_index(Index s, std::size_t k, Index j) const {
    return u_off_[static_cast<std::size_t>(control_block(s))] + static_cast<Index>(k) * pb_->n_controls() + j;
  }
  Index xi_index(Index s, std::size_t k, Index i) const {
    return xi_off_[static_cast<std::size_t>(s)] + static_cast<Index>(k) * pb_->n_states() + i;
  }
  Index p_index(Index i) const { return p_off_ + i; }

  // Scenario value of a cost functional (0 = objective, then epigraph costs).
  LinearTerm functional(Index s, std::size_t f) const {
    LinearTerm t;
    const auto& rows = lagr_rows_[static_cast<std::size_t>(s)][f];
    if (!rows.empty()) {
      auto w = pb_->grid.trapezoid_weights();
      for (std::size_t k = 0; k < rows.size(); ++k) t.y.emplace_back(rows[k], w[k]);
    }
    t.y.emplace_back(mayer_rows_[static_cast<std::size_t>(s)][f], 1.0);
    return t;
  }

  // Value of source inequality i at node slot k (k = 0 for non-path).
  LinearTerm inequality(Index s, std::size_t i, std::size_t k) const {
    const auto& g = pb_->constraints.inequalities[i];
    if (g.origin == Inequality::Origin::epigraph) {
      LinearTerm t = functional(s, epi_functional_[i]);
      t.x.emplace_back(p_index(static_cast<Index>(g.epigraph_static)), -1.0);
      return t;
    }
    return LinearTerm::element(ineq_rows_[static_cast<std::size_t>(s)][i][k]);
  }

  std::size_t inequality_nodes(std::size_t i) const {
    const auto& g = pb_->constraints.inequalities[i];
    return g.origin != Inequality::Origin::epigraph && g.form.applies == Applies::path ? pb_->grid.size() : 1;
  }

  std::size_t functional_count() const { return functionals_.size(); }

 private:
  void build();

  std::shared_ptr<const UccdProblem> pb_;
  ScenarioPlan plan_;
  ControlStructure structure_;
  CompiledNlp nlp_;
  std::vector<Realization> real_;
  std::vector<Index> u_off_, xi_off_;
  Index p_off_ = 0;
  std::vector<const CostSpec*> functionals_;
  std::vector<std::size_t> epi_functional_;
  std::vector<std::vector<std::vector<Index>>> lagr_rows_;  // [s][f][k]
  std::vector<std::vector<Index>> mayer_rows_;              // [s][f]
  std::vector<std::vector<std::vector<Index>>> ineq_rows_;  // [s][i][k]
};

namespace detail {

inline std::vector<double> statics_of(const double* x, Index p_off, const Realization& r) {
  std::vector<double> ps(r.static_offsets.size());
  for (std::size_t i = 0; i < ps.size(); ++i) ps[i] = x[p_off + static_cast<Index>(i)] + r.static_offsets[i];
  return ps;
}

inline double static_initial(const StaticVar& v) {
  if (v.initial) return std::clamp(*v.initial, v.lower, v.upper);
  bool lo = std::isfinite(v.lower), hi = std::isfinite(v.upper);
  if (lo && hi) return 0.5 * (v.lower + v.upper);
  if (lo) return std::max(v.lower, 0.0);
  if (hi) return std::min(v.upper, 0.0);
  return 0.0;
}

}  // namespace detail

inline void Transcription::build() {
  const UccdProblem& pb = *pb_;
  const Index S = plan_.size();
  const Index ns = pb.n_states(), nu = pb.n_controls(), np = pb.n_statics();
  const std::size_t N = pb.grid.size();
  const Index Nn = static_cast<Index>(N);
  const bool single = S == 1;

  for (Index s = 0; s < S; ++s) real_.push_back(pb.realize(plan_.points.row(s).transpose()));

  // Layout: controls, states per scenario, statics.
  Index off = 0;
  const Index n_ublocks = structure_ == ControlStructure::olmc ? S : 1;
  if (nu > 0)
    for (Index b = 0; b < n_ublocks; ++b) {
      std::string name = structure_ == ControlStructure::olmc ? "u[" + std::to_string(b) + "]" : "u";
      nlp_.layout.push_back({name, off, Nn, nu, structure_ == ControlStructure::olmc ? static_cast<int>(b) : -1});
      u_off_.push_back(off);
      off += Nn * nu;
    }
  else
    u_off_.assign(static_cast<std::size_t>(n_ublocks), off);
  for (Index s = 0; s < S; ++s) {
    xi_off_.push_back(off);
    if (ns > 0) {
      nlp_.layout.push_back({"xi[" + std::to_string(s) + "]", off, Nn, ns, static_cast<int>(s)});
      off += Nn * ns;
    }
  }
  p_off_ = off;
  if (np > 0) {
    nlp_.layout.push_back({"p", off, 1, np, -1});
    off += np;
  }
  nlp_.n = off;
  nlp_.structure = structure_;
  nlp_.scenarios = plan_.points;
  nlp_.scenario_weights = plan_.weights;

  // Bounds and initial guess.
  const double inf = std::numeric_limits<double>::infinity();
  nlp_.lower = Vec::Constant(off, -inf);
  nlp_.upper = Vec::Constant(off, inf);
  Vec x0 = Vec::Zero(off);
  for (Index b = 0; b < (nu > 0 ? n_ublocks : 0); ++b)
    for (Index k = 0; k < Nn; ++k)
      for (Index j = 0; j < nu; ++j) {
        Index idx = u_off_[static_cast<std::size_t>(b)] + k * nu + j;
        if (static_cast<std::size_t>(j) < pb.constraints.control_bounds.size()) {
          nlp_.lower(idx) = pb.constraints.control_bounds[static_cast<std::size_t>(j)].first;
          nlp_.upper(idx) = pb.constraints.control_bounds[static_cast<std::size_t>(j)].second;
        }
      }
  const bool terminal_by_bounds = structure_ == ControlStructure::olmc || single;
  for (Index s = 0; s < S; ++s) {
    const auto& R = real_[static_cast<std::size_t>(s)];
    for (Index i = 0; i < ns; ++i) {
      double lo = -inf, hi = inf;
      if (static_cast<std::size_t>(i) < pb.constraints.state_bounds.size()) {
        lo = pb.constraints.state_bounds[static_cast<std::size_t>(i)].first;
        hi = pb.constraints.state_bounds[static_cast<std::size_t>(i)].second;
      }
      std::optional<double> start;
      if (R.xi0[static_cast<std::size_t>(i)]) start = *R.xi0[static_cast<std::size_t>(i)];
      else if (pb.boundary.initial_fixed(i)) start = pb.boundary.xi0(i);
      std::optional<double> end;
      if (pb.boundary.terminal_fixed(i)) end = pb.boundary.xif(i);
      double a = start.value_or(pb.boundary.xi0.size() > i ? pb.boundary.xi0(i) : 0.0);
      double b = end.value_or(a);
      for (Index k = 0; k < Nn; ++k) {
        Index idx = xi_index(s, static_cast<std::size_t>(k), i);
        nlp_.lower(idx) = lo;
        nlp_.upper(idx) = hi;
        double t = Nn > 1 ? static_cast<double>(k) / static_cast<double>(Nn - 1) : 0.0;
        x0(idx) = a + (b - a) * t;
      }
      if (start) {
        Index idx = xi_index(s, 0, i);
        nlp_.lower(idx) = nlp_.upper(idx) = x0(idx) = *start;
      }
      if (end && terminal_by_bounds) {
        Index idx = xi_index(s, N - 1, i);
        nlp_.lower(idx) = nlp_.upper(idx) = x0(idx) = *end;
      }
    }
  }
  for (Index i = 0; i < np; ++i) {
    const auto& v = pb.statics.vars[static_cast<std::size_t>(i)];
    nlp_.lower(p_off_ + i) = v.lower;
    nlp_.upper(p_off_ + i) = v.upper;
    x0(p_off_ + i) = detail::static_initial(v);
  }
  nlp_.initial_guess = x0.cwiseMax(nlp_.lower).cwiseMin(nlp_.upper);

  // Cost functionals: objective then one per epigraph inequality.
  functionals_.push_back(&pb.cost);
  epi_functional_.assign(pb.constraints.inequalities.size(), 0);
  for (std::size_t i = 0; i < pb.constraints.inequalities.size(); ++i) {
    const auto& g = pb.constraints.inequalities[i];
    if (g.origin == Inequality::Origin::epigraph) {
      epi_functional_[i] = functionals_.size();
      functionals_.push_back(g.epigraph_cost.get());
    }
  }

  auto pb_ptr = pb_;
  std::vector<Index> statics_deps;
  for (Index i = 0; i < np; ++i) statics_deps.push_back(p_off_ + i);
  auto node_deps = [&](Index s, std::size_t k, bool with_u, bool with_x) {
    std::vector<Index> d = statics_deps;
    if (with_u)
      for (Index j = 0; j < nu; ++j) d.push_back(u_index(s, k, j));
    if (with_x)
      for (Index i = 0; i < ns; ++i) d.push_back(xi_index(s, k, i));
    return d;
  };

  lagr_rows_.resize(static_cast<std::size_t>(S));
  mayer_rows_.resize(static_cast<std::size_t>(S));
  ineq_rows_.resize(static_cast<std::size_t>(S));
  for (Index s = 0; s < S; ++s) {
    const Realization R = real_[static_cast<std::size_t>(s)];
    const Index uo = u_off_[static_cast<std::size_t>(control_block(s))];
    const Index xo = xi_off_[static_cast<std::size_t>(s)];
    const Index po = p_off_;
    const std::string tag = "[" + std::to_string(s) + "]";

    // Defects.
    if (ns > 0 && N >= 2) {
      ElementBlock b;
      b.label = "defects" + tag;
      b.rows = (Nn - 1) * ns;
      for (std::size_t k = 0; k + 1 < N; ++k) {
        auto d = node_deps(s, k, true, true);
        auto d1 = node_deps(s, k + 1, true, true);
        d.insert(d.end(), d1.begin(), d1.end());
        for (Index i = 0; i < ns; ++i) b.deps.push_back(d);
      }
      b.eval = [pb_ptr, R, uo, xo, po, N, ns, nu](const double* x, double* y) {
        const UccdProblem& P = *pb_ptr;
        auto ps = detail::statics_of(x, po, R);
        EvalContext ctx{&P.data, &R, ps};
        std::vector<double> f(N * static_cast<std::size_t>(ns));
        double zero = 0.0;
        for (std::size_t k = 0; k < N; ++k)
          eval_dynamics(P.dynamics, x + xo + static_cast<Index>(k) * ns, nu > 0 ? x + uo + static_cast<Index>(k) * nu : &zero,
                        ctx, k, f.data() + k * static_cast<std::size_t>(ns));
        for (std::size_t k = 0; k + 1 < N; ++k) {
          double h = P.grid.step(k);
          for (Index i = 0; i < ns; ++i) {
            std::size_t a = k * static_cast<std::size_t>(ns) + static_cast<std::size_t>(i);
            y[a] = x[xo + static_cast<Index>(k + 1) * ns + i] - x[xo + static_cast<Index>(k) * ns + i] -
                   0.5 * h * (f[a] + f[a + static_cast<std::size_t>(ns)]);
          }
        }
      };
      nlp_.add_block(std::move(b));
    }

    // Cost functionals.
    lagr_rows_[static_cast<std::size_t>(s)].resize(functionals_.size());
    for (std::size_t fi = 0; fi < functionals_.size(); ++fi) {
      const CostSpec* cost = functionals_[fi];
      if (!cost->lagrange.is_zero()) {
        ElementBlock b;
        b.label = "lagrange" + tag + "[" + std::to_string(fi) + "]";
        b.rows = Nn;
        for (std::size_t k = 0; k < N; ++k) b.deps.push_back(node_deps(s, k, true, true));
        b.eval = [pb_ptr, R, uo, xo, po, N, ns, nu, cost](const double* x, double* y) {
          const UccdProblem& P = *pb_ptr;
          auto ps = detail::statics_of(x, po, R);
          EvalContext ctx{&P.data, &R, ps};
          double zero = 0.0;
          for (std::size_t k = 0; k < N; ++k)
            y[k] = eval_lagrange(cost->lagrange, x + xo + static_cast<Index>(k) * ns,
                                 nu > 0 ? x + uo + static_cast<Index>(k) * nu : &zero, ns, nu, ctx, k);
        };
        Index first = nlp_.n_elements;
        nlp_.add_block(std::move(b));
        for (Index k = 0; k < Nn; ++k) lagr_rows_[static_cast<std::size_t>(s)][fi].push_back(first + k);
      }
      ElementBlock b;
      b.label = "mayer" + tag + "[" + std::to_string(fi) + "]";
      b.rows = 1;
      auto d = node_deps(s, 0, false, true);
      auto d1 = node_deps(s, N - 1, false, true);
      d.insert(d.end(), d1.begin(), d1.end());
      b.deps.push_back(d);
      b.eval = [pb_ptr, R, xo, po, N, ns, cost](const double* x, double* y) {
        const UccdProblem& P = *pb_ptr;
        auto ps = detail::statics_of(x, po, R);
        EvalContext ctx{&P.data, &R, ps};
        y[0] = eval_mayer(cost->mayer, ps.data(), x + xo, x + xo + static_cast<Index>(N - 1) * ns, ns, ctx, N - 1);
      };
      mayer_rows_[static_cast<std::size_t>(s)].push_back(nlp_.n_elements);
      nlp_.add_block(std::move(b));
    }

    // Inequalities and Type I equalities.
    auto form_block = [&](const ConstraintForm& form, double sign, double shift, const std::string& label) {
      ElementBlock b;
      b.label = label + tag;
      const Applies a = form.applies;
      std::vector<std::size_t> nodes;
      if (a == Applies::path)
        for (std::size_t k = 0; k < N; ++k) nodes.push_back(k);
      else
        nodes.push_back(node_of(a, N));
      b.rows = static_cast<Index>(nodes.size());
      for (std::size_t k : nodes) b.deps.push_back(a == Applies::statics ? statics_deps : node_deps(s, k, true, true));
      const ConstraintForm* fp = &form;
      b.eval = [pb_ptr, R, uo, xo, po, ns, nu, fp, a, nodes, sign, shift](const double* x, double* y) {
        const UccdProblem& P = *pb_ptr;
        auto ps = detail::statics_of(x, po, R);
        EvalContext ctx{&P.data, &R, ps};
        for (std::size_t r = 0; r < nodes.size(); ++r) {
          std::size_t k = nodes[r];
          double v = a == Applies::statics
                         ? eval_form(*fp, nullptr, nullptr, ps.data(), ctx, 0)
                         : eval_form(*fp, ns > 0 ? x + xo + static_cast<Index>(k) * ns : nullptr,
                                     nu > 0 ? x + uo + static_cast<Index>(k) * nu : nullptr, ps.data(), ctx, k);
          y[r] = sign * v - shift;
        }
      };
      Index first = nlp_.n_elements;
      std::vector<Index> rows;
      for (Index r = 0; r < b.rows; ++r) rows.push_back(first + r);
      nlp_.add_block(std::move(b));
      return rows;
    };
    ineq_rows_[static_cast<std::size_t>(s)].resize(pb.constraints.inequalities.size());
    for (std::size_t i = 0; i < pb.constraints.inequalities.size(); ++i) {
      const auto& g = pb.constraints.inequalities[i];
      if (g.origin == Inequality::Origin::epigraph) continue;
      ineq_rows_[static_cast<std::size_t>(s)][i] = form_block(g.form, g.sign, g.shift, "g:" + g.name);
    }
    for (std::size_t h = 0; h < pb.constraints.equalities.size(); ++h) {
      const auto& form = pb.constraints.equalities[h];
      auto rows = form_block(form, 1.0, 0.0, "h:" + form.name);
      for (std::size_t k = 0; k < rows.size(); ++k) {
        CompiledConstraint c;
        c.reduction = Reduction::single(LinearTerm::element(rows[k]));
        c.label = form.name + tag + (rows.size() > 1 ? "@" + std::to_string(k) : "");
        c.node = rows.size() > 1 ? static_cast<int>(k) : -1;
        nlp_.equalities.push_back(std::move(c));
      }
    }
    // Defect rows are equalities of every scenario.
    for (const auto& b : nlp_.blocks)
      if (b.label == "defects" + tag)
        for (Index r = 0; r < b.rows; ++r) {
          CompiledConstraint c;
          c.reduction = Reduction::single(LinearTerm::element(b.first + r));
          c.label = "defect" + tag + "@" + std::to_string(r / ns) + "." + std::to_string(r % ns);
          c.node = static_cast<int>(r / ns);
          nlp_.equalities.push_back(std::move(c));
        }
  }

  // OLSC with several scenarios cannot meet every terminal condition; the
  // scenario-weighted terminal mean is enforced instead.
  if (!terminal_by_bounds) {
    double wsum = 0.0;
    for (double w : plan_.weights) wsum += w;
    for (Index i = 0; i < ns; ++i) {
      if (!pb.boundary.terminal_fixed(i)) continue;
      LinearTerm t;
      for (Index s = 0; s < S; ++s) {
        double w = plan_.weights[static_cast<std::size_t>(s)];
        if (w > 0.0) t.x.emplace_back(xi_index(s, N - 1, i), w / wsum);
      }
      t.c = -pb.boundary.xif(i);
      CompiledConstraint c;
      c.reduction = Reduction::single(std::move(t));
      c.label = "terminal-mean[" + std::to_string(i) + "]";
      nlp_.equalities.push_back(std::move(c));
    }
    nlp_.flags.push_back("olsc-terminal-mean");
  }
}

// Skeleton: layout, bounds, defects per scenario, boundary handling; the
// objective defaults to the weighted scenario mean.
inline CompiledNlp expand_scenarios(const UccdProblem& problem, const ScenarioSet& scenarios,
                                    ControlStructure structure) {
  require(scenarios.size() >= 1, "expand_scenarios: empty scenario set");
  ScenarioPlan plan;
  plan.points = scenarios.points;
  plan.weights = scenarios.weights;
  plan.info.assign(static_cast<std::size_t>(scenarios.size()), {});
  Transcription tr(std::make_shared<const UccdProblem>(problem), plan, structure);
  return tr.nlp();
}

// ---------------------------------------------------------------------------
// Formulation parameters
// ---------------------------------------------------------------------------

enum class FormulationType { det, se, scc, pr_w, pr_c, wcr, fe, pcc };

inline const char* to_string(FormulationType t) {
  switch (t) {
    case FormulationType::det: return "det";
    case FormulationType::se: return "se";
    case FormulationType::scc: return "scc";
    case FormulationType::pr_w: return "pr-w";
    case FormulationType::pr_c: return "pr-c";
    case FormulationType::wcr: return "wcr";
    case FormulationType::fe: return "fe";
    case FormulationType::pcc: return "pcc";
  }
  return "?";
}

inline FormulationType parse_formulation(const std::string& s) {
  for (auto t : {FormulationType::det, FormulationType::se, FormulationType::scc, FormulationType::pr_w,
                 FormulationType::pr_c, FormulationType::wcr, FormulationType::fe, FormulationType::pcc})
    if (s == to_string(t)) return t;
  throw ValidationError("unknown formulation type '" + s + "'");
}

enum class WcrMode { vertex, scenario_generation };

struct FormulationParams {
  FormulationType type = FormulationType::det;
  ControlStructure structure = ControlStructure::olsc;
  Index samples = 64;
  std::uint64_t seed = 0;
  std::optional<bool> moment_match;  // default: on for gaussian-mode scc
  double alpha_w = 1.0;
  double k_s = 0.0;
  double sigma_a = std::numeric_limits<double>::infinity();
  double p_f = 0.05;
  risk::ChanceMode chance_mode = risk::ChanceMode::gaussian;
  double tau_scale = 0.05;
  int anneal_rounds = 3;
  double pos_f = 0.5;
  Index n_levels = kDefaultAlphaLevels;
  WcrMode wcr_mode = WcrMode::vertex;
  std::optional<InnerMode> inner_mode;
  std::optional<Mat> initial_pool;
  std::map<std::string, risk::TreatmentSpec> overrides;

  void validate() const {
    require(samples >= 1, "samples must be >= 1");
    require(alpha_w >= 0.0 && alpha_w <= 1.0, "alpha_w must lie in [0, 1]");
    require(k_s >= 0.0, "k_s must be >= 0");
    require(sigma_a >= 0.0, "sigma_a must be >= 0");
    require(p_f > 0.0 && p_f < 1.0, "P_f must lie in (0, 1)");
    require(pos_f > 0.0 && pos_f <= 1.0, "POS_f must lie in (0, 1]");
    require(n_levels >= 2, "n_levels must be >= 2");
    require(tau_scale > 0.0 && anneal_rounds >= 0, "invalid sigmoid smoothing parameters");
    for (const auto& [_, t] : overrides) t.validate();
  }
};

// Representation a formulation consumes.
inline std::optional<Representation> required_representation(FormulationType t) {
  switch (t) {
    case FormulationType::det: return std::nullopt;
    case FormulationType::se:
    case FormulationType::scc:
    case FormulationType::pr_w:
    case FormulationType::pr_c: return Representation::stochastic;
    case FormulationType::wcr: return Representation::crisp;
    case FormulationType::fe:
    case FormulationType::pcc: return Representation::fuzzy;
  }
  return std::nullopt;
}

inline void check_compatibility(const UccdProblem& pb, const FormulationParams& fp) {
  auto rep = required_representation(fp.type);
  if (rep)
    for (const auto& b : pb.bindings)
      if (!b.has(*rep))
        throw CompatibilityError(std::string("formulation ") + to_string(fp.type) + " needs a " + to_string(*rep) +
                                 " rendering for binding '" + b.targets.front().name + "' (has " +
                                 to_string(b.primary) + ")");
  using risk::Treatment;
  for (const auto& [name, spec] : fp.overrides) {
    bool known = false;
    for (const auto& g : pb.constraints.inequalities) known = known || g.name == name;
    if (!known) throw ValidationError("risk override for unknown constraint '" + name + "'");
    if (!rep) continue;
    bool ok = spec.kind == Treatment::nominal;
    switch (*rep) {
      case Representation::stochastic:
        ok = ok || (spec.kind != Treatment::possibilistic && spec.kind != Treatment::evidence);
        break;
      case Representation::crisp: ok = ok || spec.kind == Treatment::worst_case; break;
      case Representation::fuzzy:
        ok = ok || spec.kind == Treatment::expectation || spec.kind == Treatment::possibilistic ||
             spec.kind == Treatment::evidence;
        break;
    }
    if (!ok)
      throw CompatibilityError(std::string("treatment ") + risk::to_string(spec.kind) + " cannot be applied to " +
                               to_string(*rep) + " uncertainty (constraint '" + name + "')");
  }
}

// ---------------------------------------------------------------------------
// Scenario sources
// ---------------------------------------------------------------------------

inline std::vector<StochasticModel> stochastic_models(const UccdProblem& pb) {
  std::vector<StochasticModel> out;
  for (const auto& b : pb.bindings) {
    require(b.stochastic.has_value(), "binding has no stochastic rendering");
    require(b.width() == 1, "stochastic renderings bind exactly one target");
    out.push_back(*b.stochastic);
  }
  return out;
}

inline std::vector<FuzzySet> fuzzy_sets(const UccdProblem& pb) {
  std::vector<FuzzySet> out;
  for (const auto& b : pb.bindings) {
    require(b.fuzzy.has_value(), "binding has no fuzzy rendering");
    require(b.width() == 1, "fuzzy renderings bind exactly one target");
    out.push_back(*b.fuzzy);
  }
  return out;
}

inline std::vector<CrispSet> crisp_sets(const UccdProblem& pb) {
  std::vector<CrispSet> out;
  for (const auto& b : pb.bindings) {
    require(b.crisp.has_value(), "binding has no crisp rendering");
    require(b.crisp->dim() == b.width(), "crisp set dimension must equal the binding's target count");
    out.push_back(*b.crisp);
  }
  return out;
}

// Credibilistic expectation weights for an alpha grid: trapezoid over the
// nominal levels j/(L-1), split evenly across the endpoint combinations.
inline std::vector<double> fe_weights(Index n_levels, Index combos) {
  std::vector<double> w;
  const double step = 1.0 / static_cast<double>(n_levels - 1);
  for (Index j = 0; j < n_levels; ++j) {
    double tj = (j == 0 || j == n_levels - 1) ? 0.5 * step : step;
    for (Index c = 0; c < combos; ++c) w.push_back(tj / static_cast<double>(combos));
  }
  return w;
}

// Endpoint combinations of the cuts at one alpha level.
inline Mat cut_endpoints(const std::vector<FuzzySet>& sets, double alpha) {
  const Index k = static_cast<Index>(sets.size());
  const Index combos = Index{1} << k;
  Mat pts(combos, k);
  for (Index c = 0; c < combos; ++c)
    for (Index i = 0; i < k; ++i) {
      Interval cut = alpha_cut(sets[static_cast<std::size_t>(i)], alpha);
      pts(c, i) = ((c >> (k - 1 - i)) & 1) ? cut.hi : cut.lo;
    }
  return pts;
}

// ---------------------------------------------------------------------------
// Compilation
// ---------------------------------------------------------------------------

struct Compiled {
  CompiledNlp nlp;
  std::optional<WcrProgram> wcr;
  std::shared_ptr<const UccdProblem> problem;  // after any automatic transform
  ScenarioPlan plan;
  FormulationParams params;
  std::optional<ScenarioSet> samples;          // raw MCS draws when sampled

  bool bilevel() const { return wcr.has_value(); }
};

namespace detail {

// Attaches objective and treated constraints to a transcription.
class Assembler {
 public:
  Assembler(Transcription& tr, const FormulationParams& fp) : tr_(tr), fp_(fp) {
    double wsum = 0.0;
    for (Index s = 0; s < tr.scenarios(); ++s) {
      double w = tr.plan().weights[static_cast<std::size_t>(s)];
      if (w > 0.0) {
        stat_.push_back(s);
        wsum += w;
      }
    }
    require(!stat_.empty(), "scenario plan has no positive weights");
    for (Index s : stat_) w_.push_back(tr.plan().weights[static_cast<std::size_t>(s)] / wsum);
    y0_ = tr.nlp().elements(tr.nlp().initial_guess);
  }

  void objective_mean() {
    Reduction r;
    r.kind = Reduction::Kind::sum;
    for (std::size_t t = 0; t < stat_.size(); ++t) {
      r.terms.push_back(tr_.functional(stat_[t], 0));
      r.weights.push_back(w_[t]);
    }
    tr_.nlp().objective = std::move(r);
  }

  void objective_mean_std(double alpha) {
    Reduction r;
    r.kind = Reduction::Kind::mean_std;
    r.a = alpha;
    r.b = 1.0 - alpha;
    for (std::size_t t = 0; t < stat_.size(); ++t) {
      r.terms.push_back(tr_.functional(stat_[t], 0));
      r.weights.push_back(w_[t]);
    }
    tr_.nlp().objective = std::move(r);
  }

  void constraints(const risk::TreatmentSpec& fallback) {
    const auto& pb = tr_.problem();
    std::vector<std::tuple<LinearTerm, int, Index>> system_terms;  // term, group, source
    double system_pf = 0.0;
    for (std::size_t i = 0; i < pb.constraints.inequalities.size(); ++i) {
      const auto& g = pb.constraints.inequalities[i];
      auto it = fp_.overrides.find(g.name);
      const risk::TreatmentSpec& t = it == fp_.overrides.end() ? fallback : it->second;
      const std::size_t nodes = tr_.inequality_nodes(i);
      if (t.kind == risk::Treatment::system_chance) {
        system_pf = t.p_f;
        for (std::size_t si = 0; si < stat_.size(); ++si)
          for (std::size_t k = 0; k < nodes; ++k)
            system_terms.emplace_back(tr_.inequality(stat_[si], i, k), static_cast<int>(si), static_cast<Index>(i));
        continue;
      }
      if (t.kind == risk::Treatment::discounted && nodes > 1) {
        auto dw = risk::discount_weights(pb.grid.nodes(), t.discount);
        Reduction r;
        LinearTerm acc;
        for (std::size_t si = 0; si < stat_.size(); ++si)
          for (std::size_t k = 0; k < nodes; ++k) acc.add(tr_.inequality(stat_[si], i, k), w_[si] * dw[k]);
        r.terms.push_back(std::move(acc));
        r.weights.push_back(1.0);
        emit(std::move(r), g.name, static_cast<int>(i), -1);
        flag("finite-horizon-discounted-limsup");
        continue;
      }
      for (std::size_t k = 0; k < nodes; ++k) treat(i, k, nodes > 1 ? static_cast<int>(k) : -1, t);
    }
    if (!system_terms.empty()) {
      Reduction r;
      r.kind = Reduction::Kind::system_sigmoid;
      r.offset = -system_pf;
      r.weights = w_;
      std::vector<double> vals;
      for (auto& [term, group, _] : system_terms) {
        vals.push_back(term.value(y0_.data(), tr_.nlp().initial_guess.data()));
        r.terms.push_back(term);
        r.groups.push_back(group);
      }
      r.tau = temperature(vals);
      emit(std::move(r), "system", -1, -1);
      tr_.nlp().anneal_rounds = fp_.anneal_rounds;
      flag("sigmoid-smoothed-chance");
    }
  }

 private:
  void flag(const std::string& f) {
    auto& fl = tr_.nlp().flags;
    if (std::find(fl.begin(), fl.end(), f) == fl.end()) fl.push_back(f);
  }

  void emit(Reduction r, const std::string& label, int source, int node) {
    CompiledConstraint c;
    c.reduction = std::move(r);
    c.label = label;
    c.source = source;
    c.node = node;
    tr_.nlp().inequalities.push_back(std::move(c));
  }

  double temperature(const std::vector<double>& vals) const {
    double m = 0.0;
    for (double v : vals) m += v;
    m /= static_cast<double>(vals.size());
    double var = 0.0;
    for (double v : vals) var += (v - m) * (v - m);
    double sd = std::sqrt(var / static_cast<double>(vals.size()));
    return fp_.tau_scale * (sd > 1e-12 ? sd : 1e-3 * (1.0 + std::abs(m)));
  }

  Reduction weighted(Reduction::Kind kind, std::size_t i, std::size_t k) const {
    Reduction r;
    r.kind = kind;
    for (std::size_t si = 0; si < stat_.size(); ++si) {
      r.terms.push_back(tr_.inequality(stat_[si], i, k));
      r.weights.push_back(w_[si]);
    }
    return r;
  }

  std::vector<Index> select(const std::function<bool(const ScenarioInfo&)>& pred) const {
    std::vector<Index> out;
    for (Index s = 0; s < tr_.scenarios(); ++s)
      if (pred(tr_.plan().info[static_cast<std::size_t>(s)])) out.push_back(s);
    return out;
  }

  void singles(std::size_t i, std::size_t k, int node, const std::vector<Index>& scen, const std::string& name) {
    for (Index s : scen)
      emit(Reduction::single(tr_.inequality(s, i, k)),
           name + "[" + std::to_string(s) + "]" + (node >= 0 ? "@" + std::to_string(node) : ""), static_cast<int>(i),
           node);
  }

  void treat(std::size_t i, std::size_t k, int node, const risk::TreatmentSpec& t) {
    using risk::Treatment;
    const auto& name = tr_.problem().constraints.inequalities[i].name;
    const std::string label = name + (node >= 0 ? "@" + std::to_string(node) : "");
    switch (t.kind) {
      case Treatment::nominal: {
        auto nom = select([](const ScenarioInfo& s) { return s.nominal; });
        if (nom.empty()) nom.push_back(stat_.front());
        singles(i, k, node, {nom.front()}, name);
        break;
      }
      case Treatment::expectation:
      case Treatment::discounted: emit(weighted(Reduction::Kind::sum, i, k), label, static_cast<int>(i), node); break;
      case Treatment::mean_std: {
        Reduction r = weighted(Reduction::Kind::mean_std, i, k);
        r.a = 1.0;
        r.b = t.k_s;
        emit(r, label, static_cast<int>(i), node);
        if (std::isfinite(t.sigma_a)) {
          r.a = 0.0;
          r.b = 1.0;
          r.offset = -t.sigma_a;
          emit(std::move(r), label + ":std", static_cast<int>(i), node);
        }
        break;
      }
      case Treatment::cvar: {
        Reduction r = weighted(Reduction::Kind::cvar, i, k);
        r.level = t.gamma;
        emit(std::move(r), label, static_cast<int>(i), node);
        break;
      }
      case Treatment::utility: {
        Reduction r = weighted(Reduction::Kind::utility, i, k);
        r.rho = t.rho;
        r.shift = t.utility_shift;
        emit(std::move(r), label, static_cast<int>(i), node);
        break;
      }
      case Treatment::chance: {
        if (t.mode == risk::ChanceMode::gaussian) {
          Reduction r = weighted(Reduction::Kind::mean_std, i, k);
          r.a = 1.0;
          r.b = risk::normal_quantile(1.0 - t.p_f);
          emit(std::move(r), label, static_cast<int>(i), node);
        } else {
          Reduction r = weighted(Reduction::Kind::sigmoid, i, k);
          r.offset = -t.p_f;
          std::vector<double> vals;
          for (const auto& term : r.terms) vals.push_back(term.value(y0_.data(), tr_.nlp().initial_guess.data()));
          r.tau = temperature(vals);
          emit(std::move(r), label, static_cast<int>(i), node);
          tr_.nlp().anneal_rounds = fp_.anneal_rounds;
          flag("sigmoid-smoothed-chance");
          if (static_cast<double>(stat_.size()) < 1.0 / t.p_f) flag("saa-undersampled");
        }
        break;
      }
      case Treatment::worst_case: singles(i, k, node, stat_, name); break;
      case Treatment::possibilistic: {
        const double pf = t.pos_f;
        auto cut = select([pf](const ScenarioInfo& s) {
          return std::any_of(s.levels.begin(), s.levels.end(), [pf](double a) { return a >= pf - 1e-12; });
        });
        singles(i, k, node, cut, name);
        break;
      }
      case Treatment::evidence: {
        if (t.measure == risk::EvidenceMeasure::plausibility) {
          const double pf = std::max(t.level, kAlphaFloor);
          auto cut = select([pf](const ScenarioInfo& s) {
            return std::any_of(s.levels.begin(), s.levels.end(), [pf](double a) { return a >= pf - 1e-12; });
          });
          singles(i, k, node, cut, name);
        } else {
          const double a_b = std::max(1.0 - t.level, kAlphaFloor);
          auto cut = select([a_b](const ScenarioInfo& s) {
            return std::any_of(s.levels.begin(), s.levels.end(), [a_b](double a) { return std::abs(a - a_b) <= 1e-12; });
          });
          Reduction r;
          r.kind = Reduction::Kind::min;
          for (Index s : cut) {
            r.terms.push_back(tr_.inequality(s, i, k));
            r.weights.push_back(1.0);
          }
          emit(std::move(r), label + ":belief", static_cast<int>(i), node);
        }
        break;
      }
      case Treatment::system_chance: break;  // handled by the caller
    }
  }

  Transcription& tr_;
  const FormulationParams& fp_;
  std::vector<Index> stat_;
  std::vector<double> w_;
  std::vector<double> y0_;
};

inline risk::TreatmentSpec default_treatment(const FormulationParams& fp) {
  risk::TreatmentSpec t;
  using risk::Treatment;
  switch (fp.type) {
    case FormulationType::det: t.kind = Treatment::nominal; break;
    case FormulationType::se:
    case FormulationType::fe: t.kind = Treatment::expectation; break;
    case FormulationType::scc:
      t.kind = Treatment::chance;
      t.p_f = fp.p_f;
      t.mode = fp.chance_mode;
      break;
    case FormulationType::pr_w:
      t.kind = Treatment::mean_std;
      t.k_s = fp.k_s;
      break;
    case FormulationType::pr_c:
      t.kind = Treatment::mean_std;
      t.k_s = 0.0;
      t.sigma_a = fp.sigma_a;
      break;
    case FormulationType::wcr: t.kind = Treatment::worst_case; break;
    case FormulationType::pcc:
      t.kind = Treatment::possibilistic;
      t.pos_f = fp.pos_f;
      break;
  }
  return t;
}

// Extra zero-weight scenarios needed by per-constraint treatments.
inline void add_treatment_scenarios(const UccdProblem& pb, const FormulationParams& fp, ScenarioPlan& plan) {
  using risk::Treatment;
  auto wants = [&](Treatment k) {
    auto fallback = default_treatment(fp);
    if (fallback.kind == k) return true;
    return std::any_of(fp.overrides.begin(), fp.overrides.end(), [k](const auto& kv) { return kv.second.kind == k; });
  };
  if (wants(Treatment::nominal) && pb.uncertain_dim() > 0) {
    auto rep = required_representation(fp.type);
    plan.append(pb.nominal_point(rep), 0.0, {{}, true});
  }
  if (!(fp.type == FormulationType::fe || fp.type == FormulationType::pcc)) return;
  auto sets = fuzzy_sets(pb);
  auto add_cut = [&](double alpha) {
    Mat pts = cut_endpoints(sets, alpha);
    for (Index r = 0; r < pts.rows(); ++r) plan.append(pts.row(r).transpose(), 0.0, {{alpha}, false});
  };
  std::vector<const risk::TreatmentSpec*> specs;
  auto fallback = default_treatment(fp);
  specs.push_back(&fallback);
  for (const auto& [_, t] : fp.overrides) specs.push_back(&t);
  for (const auto* t : specs) {
    if (t->kind == Treatment::possibilistic) add_cut(t->pos_f);
    if (t->kind == Treatment::evidence)
      add_cut(t->measure == risk::EvidenceMeasure::plausibility ? std::max(t->level, kAlphaFloor)
                                                                 : std::max(1.0 - t->level, kAlphaFloor));
  }
}

inline CompiledNlp assemble(std::shared_ptr<const UccdProblem> pb, const ScenarioPlan& plan,
                            const FormulationParams& fp, ScenarioPlan* used = nullptr) {
  ScenarioPlan unique = dedup(plan);
  Transcription tr(pb, unique, fp.structure);
  Assembler as(tr, fp);
  if (fp.type == FormulationType::pr_w || fp.type == FormulationType::pr_c) {
    if (fp.alpha_w < 1.0) as.objective_mean_std(fp.alpha_w);
    else as.objective_mean();
  } else {
    as.objective_mean();
  }
  as.constraints(default_treatment(fp));
  CompiledNlp nlp = std::move(tr.nlp());
  nlp.formulation = to_string(fp.type);
  if (used) *used = std::move(unique);
  nlp.validate();
  return nlp;
}

// g_i(q) for the scenario-generation inner problem: states re-simulated from
// the outer controls and statics at realization q.
inline double simulated_constraint(const UccdProblem& pb, std::size_t i, const CompiledNlp& outer, const Vec& x,
                                   const Vec& q) {
  const Index ns = pb.n_states(), nu = pb.n_controls(), np = pb.n_statics();
  const std::size_t N = pb.grid.size();
  Realization R = pb.realize(q);
  Mat U(static_cast<Index>(N), nu);
  if (nu > 0) {
    const Slice* su = outer.slice("u");
    require(su != nullptr, "scenario generation requires an OLSC control slice");
    for (Index k = 0; k < static_cast<Index>(N); ++k)
      for (Index j = 0; j < nu; ++j) U(k, j) = x(su->offset + k * nu + j);
  }
  Vec p = np > 0 ? Vec(x.segment(outer.slice("p")->offset, np)) : Vec();
  Vec xi0 = Vec::Zero(ns);
  if (ns > 0) {
    const Slice* s0 = outer.slice("xi[0]");
    for (Index c = 0; c < ns; ++c) {
      if (R.xi0[static_cast<std::size_t>(c)]) xi0(c) = *R.xi0[static_cast<std::size_t>(c)];
      else if (pb.boundary.initial_fixed(c)) xi0(c) = pb.boundary.xi0(c);
      else xi0(c) = x(s0->offset + c);
    }
  }
  Mat X = simulate_trapezoid(pb, U, p, R, xi0);
  Trajectory ut{U, {}, TrajectoryKind::control}, xt{X, {}, TrajectoryKind::state};
  const auto& g = pb.constraints.inequalities[i];
  if (g.origin == Inequality::Origin::epigraph) {
    auto ps = realized_statics(pb, p, R);
    return eval_objective(pb, ut, xt, p, R, g.epigraph_cost.get()) - ps[g.epigraph_static];
  }
  auto vals = eval_constraints(pb, ut, xt, p, R);
  const auto& v = vals.g[i];
  return *std::max_element(v.begin(), v.end());
}

}  // namespace detail

// Full compile from formulation parameters.
inline Compiled compile(const UccdProblem& problem, const FormulationParams& fp) {
  fp.validate();
  check_compatibility(problem, fp);
  Compiled out;
  out.params = fp;
  auto pb = std::make_shared<const UccdProblem>(fp.type == FormulationType::wcr ? epigraph_transform(problem) : problem);
  out.problem = pb;
  const Index dim = pb->uncertain_dim();
  ScenarioPlan plan;
  switch (fp.type) {
    case FormulationType::det:
      plan.append(pb->nominal_point(), 1.0, {{}, true});
      break;
    case FormulationType::se:
    case FormulationType::scc:
    case FormulationType::pr_w:
    case FormulationType::pr_c: {
      if (dim == 0) {
        plan.append(Vec(), 1.0, {{}, true});
        break;
      }
      bool mm = fp.moment_match.value_or(fp.type == FormulationType::scc &&
                                         fp.chance_mode == risk::ChanceMode::gaussian);
      auto ss = sample_stochastic(stochastic_models(*pb), fp.samples, fp.seed, mm);
      ss.binding_order = pb->binding_order();
      out.samples = ss;
      plan.points = ss.points;
      plan.weights = ss.weights;
      plan.info.assign(static_cast<std::size_t>(ss.size()), {});
      break;
    }
    case FormulationType::wcr: {
      if (dim == 0) {
        plan.append(Vec(), 1.0, {{}, true});
        break;
      }
      auto sets = crisp_sets(*pb);
      if (fp.wcr_mode == WcrMode::vertex) {
        for (const auto& s : sets)
          if (!s.vertex_enumerable())
            throw CompatibilityError("wcr vertex mode needs box or polytope sets; use scenario-generation");
        Mat V = detail::product_vertices(sets);
        for (Index r = 0; r < V.rows(); ++r) plan.append(V.row(r).transpose(), 1.0 / static_cast<double>(V.rows()), {});
      } else {
        Mat pool;
        if (fp.initial_pool) {
          pool = *fp.initial_pool;
          require(pool.cols() == dim && pool.rows() >= 1, "initial pool shape does not match the bindings");
        } else {
          pool = pb->nominal_point(Representation::crisp).transpose();
        }
        plan.points = pool;
        plan.weights.assign(static_cast<std::size_t>(pool.rows()), 1.0 / static_cast<double>(pool.rows()));
        plan.info.assign(static_cast<std::size_t>(pool.rows()), {});
      }
      break;
    }
    case FormulationType::fe:
    case FormulationType::pcc: {
      if (dim == 0) {
        plan.append(Vec(), 1.0, {{1.0}, true});
        break;
      }
      auto sets = fuzzy_sets(*pb);
      auto ss = alpha_grid_scenarios(sets, fp.n_levels);
      ss.binding_order = pb->binding_order();
      const Index combos = ss.size() / fp.n_levels;
      plan.points = ss.points;
      plan.weights = fe_weights(fp.n_levels, combos);
      for (Index r = 0; r < ss.size(); ++r) plan.info.push_back({{ss.weights[static_cast<std::size_t>(r)]}, false});
      break;
    }
  }
  detail::add_treatment_scenarios(*pb, fp, plan);

  if (fp.type == FormulationType::wcr && fp.wcr_mode == WcrMode::scenario_generation && dim > 0) {
    if (fp.structure != ControlStructure::olsc)
      throw CompatibilityError("scenario generation is defined for the OLSC structure only");
    WcrProgram prog;
    prog.initial_pool = plan.points;
    FormulationParams fpc = fp;
    prog.build_outer = [pb, fpc](const Mat& pool) {
      ScenarioPlan p;
      p.points = pool;
      p.weights.assign(static_cast<std::size_t>(pool.rows()), 1.0 / static_cast<double>(pool.rows()));
      p.info.assign(static_cast<std::size_t>(pool.rows()), {});
      CompiledNlp nlp = detail::assemble(pb, p, fpc);
      nlp.exactness = "scenario-generation";
      return nlp;
    };
    prog.carry = [pb](const CompiledNlp& from, const Vec& x, const CompiledNlp& to) {
      Vec out = to.initial_guess;
      for (const auto& s : to.layout) {
        const Slice* f = from.slice(s.name);
        if (f && f->size() == s.size()) out.segment(s.offset, s.size()) = x.segment(f->offset, f->size());
      }
      // New scenarios start from a forward simulation of the carried controls.
      const Index ns = pb->n_states(), nu = pb->n_controls();
      if (ns > 0)
        for (const auto& s : to.layout) {
          if (s.scenario < 0 || s.name.rfind("xi[", 0) != 0 || from.slice(s.name)) continue;
          Mat U(s.rows, nu);
          const Slice* su = to.slice("u");
          for (Index k = 0; k < s.rows && su; ++k)
            for (Index j = 0; j < nu; ++j) U(k, j) = out(su->offset + k * nu + j);
          const Slice* sp = to.slice("p");
          Vec p = sp ? Vec(out.segment(sp->offset, sp->size())) : Vec();
          Vec q = to.scenarios.row(s.scenario).transpose();
          Realization R = pb->realize(q);
          Vec xi0(ns);
          for (Index c = 0; c < ns; ++c) xi0(c) = to.initial_guess(s.offset + c);
          try {
            Mat X = simulate_trapezoid(*pb, U, p, R, xi0);
            for (Index k = 0; k < s.rows; ++k)
              for (Index c = 0; c < ns; ++c) out(s.offset + k * ns + c) = X(k, c);
          } catch (const NumericalError&) {
          }
        }
      return out.cwiseMax(to.lower).cwiseMin(to.upper);
    };
    auto sets = crisp_sets(*pb);
    InnerMode mode = fp.inner_mode.value_or(
        std::all_of(sets.begin(), sets.end(), [](const CrispSet& s) { return s.vertex_enumerable(); })
            ? InnerMode::vertex
            : InnerMode::ascent);
    for (std::size_t i = 0; i < pb->constraints.inequalities.size(); ++i) {
      WcrSubproblem sub;
      sub.name = pb->constraints.inequalities[i].name;
      sub.constraint = static_cast<int>(i);
      sub.sets = sets;
      sub.mode = mode;
      // Outer layout: u, then xi[0], ..., statics last.  Only u, xi[0] and p
      // are read, and their offsets do not depend on the pool size.
      sub.g = [pb, i](const Vec& q, const Vec& x) {
        CompiledNlp shape;
        const Index ns = pb->n_states(), nu = pb->n_controls(), np = pb->n_statics();
        const Index N = static_cast<Index>(pb->grid.size());
        Index off = 0;
        if (nu > 0) {
          shape.layout.push_back({"u", off, N, nu, -1});
          off += N * nu;
        }
        if (ns > 0) shape.layout.push_back({"xi[0]", off, N, ns, 0});
        if (np > 0) shape.layout.push_back({"p", x.size() - np, 1, np, -1});
        return detail::simulated_constraint(*pb, i, shape, x, q);
      };
      prog.subs.push_back(std::move(sub));
    }
    out.nlp = prog.build_outer(plan.points);
    out.plan = plan;
    out.wcr = std::move(prog);
    return out;
  }

  out.nlp = detail::assemble(pb, plan, fp, &out.plan);
  if (fp.type == FormulationType::wcr) out.nlp.exactness = "affine-only";
  return out;
}

// ---------------------------------------------------------------------------
// Named entry points
// ---------------------------------------------------------------------------

inline CompiledNlp compile_deterministic(const UccdProblem& problem) {
  FormulationParams fp;
  fp.type = FormulationType::det;
  return compile(problem, fp).nlp;
}

namespace detail {

inline CompiledNlp compile_on(const UccdProblem& problem, const ScenarioSet& scenarios, FormulationParams fp) {
  fp.validate();
  check_compatibility(problem, fp);
  auto pb = std::make_shared<const UccdProblem>(problem);
  ScenarioPlan plan;
  plan.points = scenarios.points;
  plan.weights = scenarios.weights;
  plan.info.assign(static_cast<std::size_t>(scenarios.size()), {});
  add_treatment_scenarios(*pb, fp, plan);
  return assemble(pb, plan, fp);
}

}  // namespace detail

inline CompiledNlp compile_se(const UccdProblem& problem, const ScenarioSet& scenarios, ControlStructure structure) {
  FormulationParams fp;
  fp.type = FormulationType::se;
  fp.structure = structure;
  return detail::compile_on(problem, scenarios, fp);
}

inline CompiledNlp compile_scc(const UccdProblem& problem, const ScenarioSet& scenarios, ControlStructure structure,
                               double p_f, risk::ChanceMode mode) {
  FormulationParams fp;
  fp.type = FormulationType::scc;
  fp.structure = structure;
  fp.p_f = p_f;
  fp.chance_mode = mode;
  return detail::compile_on(problem, scenarios, fp);
}

inline CompiledNlp compile_pr_weighted(const UccdProblem& problem, const ScenarioSet& scenarios,
                                       ControlStructure structure, double alpha_w, double k_s) {
  FormulationParams fp;
  fp.type = FormulationType::pr_w;
  fp.structure = structure;
  fp.alpha_w = alpha_w;
  fp.k_s = k_s;
  return detail::compile_on(problem, scenarios, fp);
}

inline CompiledNlp compile_pr_constrained(const UccdProblem& problem, const ScenarioSet& scenarios,
                                          ControlStructure structure, double alpha_w, double sigma_a) {
  FormulationParams fp;
  fp.type = FormulationType::pr_c;
  fp.structure = structure;
  fp.alpha_w = alpha_w;
  fp.sigma_a = sigma_a;
  return detail::compile_on(problem, scenarios, fp);
}

inline Compiled compile_wcr(const UccdProblem& problem, WcrMode mode,
                            ControlStructure structure = ControlStructure::olsc) {
  FormulationParams fp;
  fp.type = FormulationType::wcr;
  fp.wcr_mode = mode;
  fp.structure = structure;
  return compile(problem, fp);
}

inline CompiledNlp compile_fe(const UccdProblem& problem, ControlStructure structure,
                              Index n_levels = kDefaultAlphaLevels) {
  FormulationParams fp;
  fp.type = FormulationType::fe;
  fp.structure = structure;
  fp.n_levels = n_levels;
  return compile(problem, fp).nlp;
}

inline CompiledNlp compile_pcc(const UccdProblem& problem, ControlStructure structure, double pos_f,
                               Index n_levels = kDefaultAlphaLevels) {
  FormulationParams fp;
  fp.type = FormulationType::pcc;
  fp.structure = structure;
  fp.pos_f = pos_f;
  fp.n_levels = n_levels;
  return compile(problem, fp).nlp;
}

// Solves whatever `compile` produced (plain, annealed or bi-level).
inline SolveReport solve_compiled(const Compiled& c, const SolverOptions& opts = {}) {
  if (c.wcr) return solve_wcr(*c.wcr, opts);
  return solve_annealed(c.nlp, c.nlp.initial_guess, opts);
}

}  // namespace uccd
