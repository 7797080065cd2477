#pragma once

// Continuous-time co-design problem definition and its trapezoidal direct
// transcription: time grid, trajectory storage, defect/path-constraint
// evaluation and the epigraph transform.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "uccd/common.hpp"
#include "uccd/usets.hpp"

namespace uccd {

// ---------------------------------------------------------------------------
// Time grid and trajectories
// ---------------------------------------------------------------------------

class TimeGrid {
 public:
  TimeGrid() = default;

  static TimeGrid uniform(double t0, double tf, std::size_t n_nodes) {
    require(std::isfinite(t0) && std::isfinite(tf) && tf > t0, "grid requires tf > t0");
    require(n_nodes >= 2, "grid requires at least 2 nodes");
    TimeGrid g;
    g.nodes_.resize(n_nodes);
    for (std::size_t k = 0; k < n_nodes; ++k)
      g.nodes_[k] = t0 + (tf - t0) * static_cast<double>(k) / static_cast<double>(n_nodes - 1);
    g.nodes_.back() = tf;
    g.uniform_ = true;
    return g;
  }

  static TimeGrid from_nodes(std::vector<double> nodes) {
    require(nodes.size() >= 2, "grid requires at least 2 nodes");
    for (std::size_t k = 0; k + 1 < nodes.size(); ++k)
      require(std::isfinite(nodes[k + 1]) && nodes[k + 1] > nodes[k], "grid nodes must be strictly increasing");
    TimeGrid g;
    g.nodes_ = std::move(nodes);
    g.uniform_ = false;
    return g;
  }

  double t0() const { return nodes_.front(); }
  double tf() const { return nodes_.back(); }
  std::size_t size() const { return nodes_.size(); }
  double operator[](std::size_t k) const { return nodes_[k]; }
  double step(std::size_t k) const { return nodes_[k + 1] - nodes_[k]; }
  bool is_uniform() const { return uniform_; }
  const std::vector<double>& nodes() const { return nodes_; }

  std::vector<double> trapezoid_weights() const {
    std::vector<double> w(size(), 0.0);
    for (std::size_t k = 0; k + 1 < size(); ++k) {
      w[k] += 0.5 * step(k);
      w[k + 1] += 0.5 * step(k);
    }
    return w;
  }

 private:
  std::vector<double> nodes_;
  bool uniform_ = false;
};

enum class TrajectoryKind { control, state };

struct Trajectory {
  Mat values;  // n_nodes x n_channels
  std::vector<std::string> channels;
  TrajectoryKind kind = TrajectoryKind::state;

  Index nodes() const { return values.rows(); }
  Index channel_count() const { return values.cols(); }

  void validate(const TimeGrid& grid) const {
    require(static_cast<std::size_t>(values.rows()) == grid.size(), "trajectory row count must equal grid size");
    require(values.allFinite(), "trajectory entries must be finite");
  }
};

// ---------------------------------------------------------------------------
// Parameters: literal numbers or references into problem data / statics
// ---------------------------------------------------------------------------

struct Param {
  enum class Source : std::uint8_t { literal, constant, static_var, signal };
  Source source = Source::literal;
  double value = 0.0;
  std::size_t index = 0;
  std::string name;

  static Param literal(double v) { return Param{Source::literal, v, 0, {}}; }
  bool is_literal() const { return source == Source::literal; }
  bool is_zero() const { return is_literal() && value == 0.0; }
};

struct ParamMatrix {
  Index rows = 0;
  Index cols = 0;
  std::vector<Param> entries;  // row-major

  bool empty() const { return rows == 0 || cols == 0; }
  const Param& operator()(Index r, Index c) const { return entries[static_cast<std::size_t>(r * cols + c)]; }

  static ParamMatrix from(const Mat& m) {
    ParamMatrix p;
    p.rows = m.rows();
    p.cols = m.cols();
    for (Index r = 0; r < m.rows(); ++r)
      for (Index c = 0; c < m.cols(); ++c) p.entries.push_back(Param::literal(m(r, c)));
    return p;
  }

  static ParamMatrix identity(Index n) { return from(Mat::Identity(n, n)); }

  bool all_zero() const {
    return std::all_of(entries.begin(), entries.end(), [](const Param& p) { return p.is_zero(); });
  }
};

using ParamVector = std::vector<Param>;

inline bool all_zero(const ParamVector& v) {
  return std::all_of(v.begin(), v.end(), [](const Param& p) { return p.is_zero(); });
}

// ---------------------------------------------------------------------------
// Problem components
// ---------------------------------------------------------------------------

enum class StaticTag { plant, control_gain, auxiliary };

struct StaticVar {
  std::string name;
  double lower = -std::numeric_limits<double>::infinity();
  double upper = std::numeric_limits<double>::infinity();
  StaticTag tag = StaticTag::plant;
  std::optional<double> initial;
};

struct StaticVars {
  std::vector<StaticVar> vars;

  std::size_t size() const { return vars.size(); }
  std::optional<std::size_t> index_of(const std::string& name) const {
    for (std::size_t i = 0; i < vars.size(); ++i)
      if (vars[i].name == name) return i;
    return std::nullopt;
  }
};

// Vector constants are flattened to `name[i]` entries.
struct ProblemData {
  std::vector<std::string> constant_names;
  std::vector<double> constants;
  std::vector<std::string> signal_names;
  std::vector<std::vector<double>> signals;

  std::optional<std::size_t> constant_index(const std::string& name) const {
    for (std::size_t i = 0; i < constant_names.size(); ++i)
      if (constant_names[i] == name) return i;
    return std::nullopt;
  }
  std::optional<std::size_t> signal_index(const std::string& name) const {
    for (std::size_t i = 0; i < signal_names.size(); ++i)
      if (signal_names[i] == name) return i;
    return std::nullopt;
  }
};

struct BoundaryConditions {
  Vec xi0;
  Vec xif;
  std::vector<bool> xi0_mask;
  std::vector<bool> xif_mask;

  bool initial_fixed(Index i) const { return static_cast<std::size_t>(i) < xi0_mask.size() && xi0_mask[i]; }
  bool terminal_fixed(Index i) const { return static_cast<std::size_t>(i) < xif_mask.size() && xif_mask[i]; }
};

enum class DynamicsKind { none, linear, registry };
enum class RegistryModel { double_integrator, scalar_linear, pendulum };

inline const char* to_string(RegistryModel m) {
  switch (m) {
    case RegistryModel::double_integrator: return "double_integrator";
    case RegistryModel::scalar_linear: return "scalar_linear";
    case RegistryModel::pendulum: return "pendulum";
  }
  return "?";
}

struct DynamicsSpec {
  DynamicsKind kind = DynamicsKind::none;
  Index n_states = 0;
  Index n_controls = 0;
  ParamMatrix A, B;                     // linear
  RegistryModel model = RegistryModel::double_integrator;
  std::map<std::string, Param> coefficients;  // registry
  ParamMatrix diffusion;                // optional b(.), n_states x n_w

  Index n_noise() const { return diffusion.cols; }
};

// Lagrange integrand (xi - ref)^T Q (xi - ref) + u^T R u + q.xi + r.u + c.
struct LagrangeForm {
  ParamMatrix Q, R;
  ParamVector q, r, reference;
  Param constant = Param::literal(0.0);

  bool is_zero() const {
    return (Q.empty() || Q.all_zero()) && (R.empty() || R.all_zero()) && all_zero(q) && all_zero(r) &&
           constant.is_zero();
  }
};

// p^T S p + s.p + (xf - target)^T Qf (xf - target) + qf.xf + q0.x0 + c.
struct MayerForm {
  ParamMatrix static_quadratic, terminal_quadratic;
  ParamVector static_linear, terminal_linear, initial_linear, terminal_target;
  Param constant = Param::literal(0.0);
};

struct CostSpec {
  LagrangeForm lagrange;
  MayerForm mayer;
};

enum class Applies { path, initial, terminal, statics };

inline const char* to_string(Applies a) {
  switch (a) {
    case Applies::path: return "path";
    case Applies::initial: return "initial";
    case Applies::terminal: return "terminal";
    case Applies::statics: return "static";
  }
  return "?";
}

// a.xi + b.u + c.p + constant + xi^T Qx xi + u^T Qu u + p^T Qp p
struct ConstraintForm {
  std::string name;
  Applies applies = Applies::path;
  ParamVector state, control, statics;
  Param constant = Param::literal(0.0);
  ParamMatrix state_quad, control_quad, static_quad;
};

// Inequality g <= 0.  Relaxed Type II equalities are stored as the pair
// (form - tol, -form - tol).  An epigraph entry evaluates objective(cost) - v.
struct Inequality {
  std::string name;
  ConstraintForm form;
  double sign = 1.0;
  double shift = 0.0;
  enum class Origin { inequality, relaxed_upper, relaxed_lower, epigraph } origin = Origin::inequality;
  std::size_t epigraph_static = 0;
  std::shared_ptr<const CostSpec> epigraph_cost;

  Applies applies() const { return origin == Origin::epigraph ? Applies::statics : form.applies; }
};

struct ConstraintSpec {
  std::vector<Inequality> inequalities;
  std::vector<ConstraintForm> equalities;  // Type I relations besides dynamics
  std::vector<std::pair<double, double>> control_bounds;
  std::vector<std::pair<double, double>> state_bounds;
};

// ---------------------------------------------------------------------------
// Uncertainty bindings
// ---------------------------------------------------------------------------

enum class TargetKind { static_var, constant, signal, initial_state, state_noise };

struct Target {
  TargetKind kind = TargetKind::constant;
  std::size_t index = 0;
  std::string name;
};

enum class Representation { stochastic, crisp, fuzzy };

inline const char* to_string(Representation r) {
  switch (r) {
    case Representation::stochastic: return "stochastic";
    case Representation::crisp: return "crisp";
    case Representation::fuzzy: return "fuzzy";
  }
  return "?";
}

// A binding may carry paired renderings of the same uncertainty so one
// document can be compiled under stochastic, crisp and fuzzy formulations.
struct Binding {
  std::vector<Target> targets;
  Representation primary = Representation::stochastic;
  std::optional<StochasticModel> stochastic;
  std::optional<CrispSet> crisp;
  std::optional<FuzzySet> fuzzy;

  bool has(Representation r) const {
    switch (r) {
      case Representation::stochastic: return stochastic.has_value();
      case Representation::crisp: return crisp.has_value();
      case Representation::fuzzy: return fuzzy.has_value();
    }
    return false;
  }

  Vec nominal(Representation r) const {
    switch (r) {
      case Representation::stochastic: return Vec::Constant(1, stochastic->nominal());
      case Representation::crisp: return crisp->nominal();
      case Representation::fuzzy: return Vec::Constant(1, fuzzy->nominal());
    }
    return {};
  }

  Index width() const { return static_cast<Index>(targets.size()); }
};

// Values of every uncertain quantity for one scenario.  Constants and initial
// states are replaced; statics and signals receive additive offsets; noise is a
// constant additive term on the state derivative.
struct Realization {
  std::vector<double> constants;
  std::vector<double> static_offsets;
  std::vector<double> signal_offsets;
  std::vector<std::optional<double>> xi0;
  Vec noise;
};

// ---------------------------------------------------------------------------
// Problem
// ---------------------------------------------------------------------------

struct UccdProblem {
  TimeGrid grid;
  DynamicsSpec dynamics;
  CostSpec cost;
  std::shared_ptr<const CostSpec> original_cost;  // set by epigraph_transform
  ConstraintSpec constraints;
  StaticVars statics;
  ProblemData data;
  BoundaryConditions boundary;
  std::vector<Binding> bindings;

  Index n_states() const { return dynamics.n_states; }
  Index n_controls() const { return dynamics.n_controls; }
  Index n_statics() const { return static_cast<Index>(statics.size()); }

  Realization base_realization() const {
    Realization r;
    r.constants = data.constants;
    r.static_offsets.assign(statics.size(), 0.0);
    r.signal_offsets.assign(data.signals.size(), 0.0);
    r.xi0.assign(static_cast<std::size_t>(n_states()), std::nullopt);
    r.noise = Vec::Zero(n_states());
    return r;
  }

  std::vector<std::string> binding_order() const {
    std::vector<std::string> names;
    for (const auto& b : bindings)
      for (const auto& t : b.targets) names.push_back(t.name);
    return names;
  }

  Index uncertain_dim() const {
    Index n = 0;
    for (const auto& b : bindings) n += b.width();
    return n;
  }

  // Applies one scenario point (columns in binding order) to the base values.
  Realization realize(const Vec& q) const {
    require(q.size() == uncertain_dim(), "scenario point dimension does not match bindings");
    Realization r = base_realization();
    Index col = 0;
    for (const auto& b : bindings)
      for (const auto& t : b.targets) {
        double v = q(col++);
        switch (t.kind) {
          case TargetKind::constant: r.constants[t.index] = v; break;
          case TargetKind::static_var: r.static_offsets[t.index] += v; break;
          case TargetKind::signal: r.signal_offsets[t.index] += v; break;
          case TargetKind::initial_state: r.xi0[t.index] = v; break;
          case TargetKind::state_noise: r.noise(static_cast<Index>(t.index)) += v; break;
        }
      }
    return r;
  }

  // Nominal point: each binding's `rep` rendering if present, else primary.
  Vec nominal_point(std::optional<Representation> rep = std::nullopt) const {
    Vec q(uncertain_dim());
    Index col = 0;
    for (const auto& b : bindings) {
      Representation use = rep && b.has(*rep) ? *rep : b.primary;
      Vec v = b.nominal(use);
      q.segment(col, v.size()) = v;
      col += v.size();
    }
    return q;
  }

  Realization nominal_realization() const { return realize(nominal_point()); }
};

// ---------------------------------------------------------------------------
// Evaluation context
// ---------------------------------------------------------------------------

// Resolves parameters for one scenario.  `statics` are realized values
// (decision plus offset).
struct EvalContext {
  const ProblemData* data = nullptr;
  const Realization* realization = nullptr;
  std::span<const double> statics;

  double operator()(const Param& p, std::size_t node) const {
    switch (p.source) {
      case Param::Source::literal: return p.value;
      case Param::Source::constant: return realization->constants[p.index];
      case Param::Source::static_var: return statics[p.index];
      case Param::Source::signal:
        return data->signals[p.index][node] + realization->signal_offsets[p.index];
    }
    return 0.0;
  }
};

namespace detail {

inline double dot(const ParamVector& a, const double* x, const EvalContext& ctx, std::size_t node) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!a[i].is_zero()) acc += ctx(a[i], node) * x[i];
  return acc;
}

inline double quad(const ParamMatrix& m, const double* x, const EvalContext& ctx, std::size_t node) {
  if (m.empty()) return 0.0;
  double acc = 0.0;
  for (Index r = 0; r < m.rows; ++r)
    for (Index c = 0; c < m.cols; ++c) {
      const Param& p = m(r, c);
      if (!p.is_zero()) acc += x[r] * ctx(p, node) * x[c];
    }
  return acc;
}

}  // namespace detail

// State derivative f(xi, u, p, d) plus the realization's additive noise.
inline void eval_dynamics(const DynamicsSpec& dyn, const double* xi, const double* u, const EvalContext& ctx,
                          std::size_t node, double* out) {
  const Index ns = dyn.n_states;
  switch (dyn.kind) {
    case DynamicsKind::none: break;
    case DynamicsKind::linear:
      for (Index i = 0; i < ns; ++i) {
        double acc = 0.0;
        for (Index j = 0; j < ns; ++j) {
          const Param& a = dyn.A(i, j);
          if (!a.is_zero()) acc += ctx(a, node) * xi[j];
        }
        for (Index j = 0; j < dyn.n_controls; ++j) {
          const Param& b = dyn.B(i, j);
          if (!b.is_zero()) acc += ctx(b, node) * u[j];
        }
        out[i] = acc;
      }
      break;
    case DynamicsKind::registry: {
      auto coef = [&](const char* key) { return ctx(dyn.coefficients.at(key), node); };
      switch (dyn.model) {
        case RegistryModel::double_integrator:
          out[0] = xi[1];
          out[1] = coef("b") * u[0];
          break;
        case RegistryModel::scalar_linear:
          out[0] = coef("a") * xi[0] + coef("b") * u[0];
          break;
        case RegistryModel::pendulum:
          out[0] = xi[1];
          out[1] = -coef("g_over_l") * std::sin(xi[0]) - coef("damping") * xi[1] + coef("b") * u[0];
          break;
      }
      break;
    }
  }
  const Vec& w = ctx.realization->noise;
  for (Index i = 0; i < ns; ++i) out[i] += w(i);
}

inline double eval_lagrange(const LagrangeForm& l, const double* xi, const double* u, Index ns, Index nu,
                            const EvalContext& ctx, std::size_t node) {
  double acc = ctx(l.constant, node);
  if (!l.Q.empty()) {
    if (l.reference.empty()) {
      acc += detail::quad(l.Q, xi, ctx, node);
    } else {
      double e[64];
      for (Index i = 0; i < ns; ++i) e[i] = xi[i] - ctx(l.reference[static_cast<std::size_t>(i)], node);
      acc += detail::quad(l.Q, e, ctx, node);
    }
  }
  acc += detail::quad(l.R, u, ctx, node);
  acc += detail::dot(l.q, xi, ctx, node);
  acc += detail::dot(l.r, u, ctx, node);
  (void)nu;
  return acc;
}

inline double eval_mayer(const MayerForm& m, const double* p, const double* xi0, const double* xif, Index ns,
                         const EvalContext& ctx, std::size_t last_node) {
  double acc = ctx(m.constant, last_node);
  acc += detail::quad(m.static_quadratic, p, ctx, last_node);
  acc += detail::dot(m.static_linear, p, ctx, last_node);
  if (!m.terminal_quadratic.empty()) {
    if (m.terminal_target.empty()) {
      acc += detail::quad(m.terminal_quadratic, xif, ctx, last_node);
    } else {
      double e[64];
      for (Index i = 0; i < ns; ++i) e[i] = xif[i] - ctx(m.terminal_target[static_cast<std::size_t>(i)], last_node);
      acc += detail::quad(m.terminal_quadratic, e, ctx, last_node);
    }
  }
  acc += detail::dot(m.terminal_linear, xif, ctx, last_node);
  acc += detail::dot(m.initial_linear, xi0, ctx, 0);
  return acc;
}

inline double eval_form(const ConstraintForm& f, const double* xi, const double* u, const double* p,
                        const EvalContext& ctx, std::size_t node) {
  double acc = ctx(f.constant, node);
  if (xi) {
    acc += detail::dot(f.state, xi, ctx, node);
    acc += detail::quad(f.state_quad, xi, ctx, node);
  }
  if (u) {
    acc += detail::dot(f.control, u, ctx, node);
    acc += detail::quad(f.control_quad, u, ctx, node);
  }
  acc += detail::dot(f.statics, p, ctx, node);
  acc += detail::quad(f.static_quad, p, ctx, node);
  return acc;
}

inline std::size_t node_of(Applies a, std::size_t n_nodes) {
  return a == Applies::terminal ? n_nodes - 1 : 0;
}

// ---------------------------------------------------------------------------
// Trajectory-level operations
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<double> realized_statics(const UccdProblem& pb, const Vec& p, const Realization& r) {
  require(p.size() == pb.n_statics(), "static vector dimension mismatch");
  std::vector<double> out(static_cast<std::size_t>(p.size()));
  for (Index i = 0; i < p.size(); ++i) out[static_cast<std::size_t>(i)] = p(i) + r.static_offsets[static_cast<std::size_t>(i)];
  return out;
}

inline void check_trajectories(const UccdProblem& pb, const Trajectory& u, const Trajectory& xi) {
  u.validate(pb.grid);
  xi.validate(pb.grid);
  require(u.channel_count() == pb.n_controls(), "control trajectory channel count mismatch");
  require(xi.channel_count() == pb.n_states(), "state trajectory channel count mismatch");
}

// Row-major copies so node k is contiguous.
inline std::vector<double> rows_of(const Mat& m) {
  std::vector<double> out(static_cast<std::size_t>(m.size()));
  for (Index r = 0; r < m.rows(); ++r)
    for (Index c = 0; c < m.cols(); ++c) out[static_cast<std::size_t>(r * m.cols() + c)] = m(r, c);
  return out;
}

}  // namespace detail

// Trapezoid-rule integral of the Lagrange term plus the Mayer term for the
// given cost (defaults to the problem's objective).
inline double eval_objective(const UccdProblem& pb, const Trajectory& u, const Trajectory& xi, const Vec& p,
                             const Realization& r, const CostSpec* cost = nullptr) {
  detail::check_trajectories(pb, u, xi);
  const CostSpec& c = cost ? *cost : pb.cost;
  auto ps = detail::realized_statics(pb, p, r);
  EvalContext ctx{&pb.data, &r, ps};
  auto U = detail::rows_of(u.values);
  auto X = detail::rows_of(xi.values);
  const Index ns = pb.n_states(), nu = pb.n_controls();
  const std::size_t n = pb.grid.size();
  auto w = pb.grid.trapezoid_weights();
  double acc = 0.0;
  if (!c.lagrange.is_zero())
    for (std::size_t k = 0; k < n; ++k)
      acc += w[k] * eval_lagrange(c.lagrange, X.data() + k * ns, U.data() + k * nu, ns, nu, ctx, k);
  acc += eval_mayer(c.mayer, ps.data(), X.data(), X.data() + (n - 1) * ns, ns, ctx, n - 1);
  if (!std::isfinite(acc)) throw NumericalError("eval_objective: non-finite value");
  return acc;
}

inline double eval_objective(const UccdProblem& pb, const Trajectory& u, const Trajectory& xi, const Vec& p) {
  return eval_objective(pb, u, xi, p, pb.nominal_realization());
}

// zeta_k = xi_{k+1} - xi_k - (h_k / 2) (f_k + f_{k+1}), one row per interval.
inline Mat eval_defects(const UccdProblem& pb, const Trajectory& u, const Trajectory& xi, const Vec& p,
                        const Realization& r) {
  detail::check_trajectories(pb, u, xi);
  auto ps = detail::realized_statics(pb, p, r);
  EvalContext ctx{&pb.data, &r, ps};
  auto U = detail::rows_of(u.values);
  auto X = detail::rows_of(xi.values);
  const Index ns = pb.n_states(), nu = pb.n_controls();
  const std::size_t n = pb.grid.size();
  std::vector<double> f(n * static_cast<std::size_t>(ns));
  for (std::size_t k = 0; k < n; ++k)
    eval_dynamics(pb.dynamics, X.data() + k * ns, U.data() + k * nu, ctx, k, f.data() + k * ns);
  Mat d(static_cast<Index>(n - 1), ns);
  for (std::size_t k = 0; k + 1 < n; ++k) {
    double h = pb.grid.step(k);
    for (Index i = 0; i < ns; ++i)
      d(static_cast<Index>(k), i) = X[(k + 1) * ns + i] - X[k * ns + i] - 0.5 * h * (f[k * ns + i] + f[(k + 1) * ns + i]);
  }
  if (!d.allFinite()) throw NumericalError("eval_defects: non-finite value");
  return d;
}

inline Mat eval_defects(const UccdProblem& pb, const Trajectory& u, const Trajectory& xi, const Vec& p) {
  return eval_defects(pb, u, xi, p, pb.nominal_realization());
}

struct ConstraintValues {
  // One entry per inequality: node values (path) or a single value.
  std::vector<std::vector<double>> g;
  std::vector<std::vector<double>> h;
  // Residuals xi0 - target (enabled components), then xif - target.
  std::vector<double> boundary;
};

inline ConstraintValues eval_constraints(const UccdProblem& pb, const Trajectory& u, const Trajectory& xi,
                                         const Vec& p, const Realization& r) {
  detail::check_trajectories(pb, u, xi);
  auto ps = detail::realized_statics(pb, p, r);
  EvalContext ctx{&pb.data, &r, ps};
  auto U = detail::rows_of(u.values);
  auto X = detail::rows_of(xi.values);
  const Index ns = pb.n_states(), nu = pb.n_controls();
  const std::size_t n = pb.grid.size();
  auto eval_at = [&](const ConstraintForm& f, Applies a) {
    std::vector<double> vals;
    if (a == Applies::path) {
      for (std::size_t k = 0; k < n; ++k)
        vals.push_back(eval_form(f, X.data() + k * ns, U.data() + k * nu, ps.data(), ctx, k));
    } else if (a == Applies::statics) {
      vals.push_back(eval_form(f, nullptr, nullptr, ps.data(), ctx, 0));
    } else {
      std::size_t k = node_of(a, n);
      vals.push_back(eval_form(f, X.data() + k * ns, U.data() + k * nu, ps.data(), ctx, k));
    }
    return vals;
  };
  ConstraintValues out;
  for (const auto& g : pb.constraints.inequalities) {
    if (g.origin == Inequality::Origin::epigraph) {
      double o = eval_objective(pb, u, xi, p, r, g.epigraph_cost.get());
      out.g.push_back({o - ps[g.epigraph_static]});
      continue;
    }
    auto vals = eval_at(g.form, g.form.applies);
    for (double& v : vals) v = g.sign * v - g.shift;
    out.g.push_back(std::move(vals));
  }
  for (const auto& h : pb.constraints.equalities) out.h.push_back(eval_at(h, h.applies));
  for (Index i = 0; i < ns; ++i) {
    auto override_v = r.xi0[static_cast<std::size_t>(i)];
    if (override_v) out.boundary.push_back(xi.values(0, i) - *override_v);
    else if (pb.boundary.initial_fixed(i)) out.boundary.push_back(xi.values(0, i) - pb.boundary.xi0(i));
  }
  for (Index i = 0; i < ns; ++i)
    if (pb.boundary.terminal_fixed(i))
      out.boundary.push_back(xi.values(static_cast<Index>(n) - 1, i) - pb.boundary.xif(i));
  return out;
}

inline ConstraintValues eval_constraints(const UccdProblem& pb, const Trajectory& u, const Trajectory& xi,
                                         const Vec& p) {
  return eval_constraints(pb, u, xi, p, pb.nominal_realization());
}

// ---------------------------------------------------------------------------
// Epigraph transform
// ---------------------------------------------------------------------------

// min o  ->  min v  s.t.  o - v <= 0, with v a new unbounded auxiliary static.
// The original objective is kept in `original_cost` (first application wins).
inline UccdProblem epigraph_transform(const UccdProblem& pb) {
  UccdProblem out = pb;
  auto cost = std::make_shared<const CostSpec>(pb.cost);
  if (!out.original_cost) out.original_cost = cost;
  std::size_t count = 0;
  for (const auto& s : pb.statics.vars)
    if (s.name.rfind("epigraph_v", 0) == 0) ++count;
  StaticVar v;
  v.name = "epigraph_v" + std::to_string(count);
  v.tag = StaticTag::auxiliary;
  const std::size_t vidx = out.statics.size();
  out.statics.vars.push_back(v);

  // Existing parameter rows and static coefficient vectors grow by one.
  auto widen = [&](ParamVector& vec) {
    if (!vec.empty()) vec.push_back(Param::literal(0.0));
  };
  auto widen_matrix = [&](ParamMatrix& m) {
    if (m.empty()) return;
    ParamMatrix w;
    w.rows = m.rows + 1;
    w.cols = m.cols + 1;
    w.entries.assign(static_cast<std::size_t>(w.rows * w.cols), Param::literal(0.0));
    for (Index r = 0; r < m.rows; ++r)
      for (Index c = 0; c < m.cols; ++c) w.entries[static_cast<std::size_t>(r * w.cols + c)] = m(r, c);
    m = std::move(w);
  };
  for (auto& g : out.constraints.inequalities) {
    widen(g.form.statics);
    widen_matrix(g.form.static_quad);
  }
  for (auto& h : out.constraints.equalities) {
    widen(h.statics);
    widen_matrix(h.static_quad);
  }
  // The epigraph constraint's cost sees the widened static vector as well.
  CostSpec inner = pb.cost;
  widen(inner.mayer.static_linear);
  widen_matrix(inner.mayer.static_quadratic);

  Inequality epi;
  epi.name = "epigraph" + std::to_string(count);
  epi.origin = Inequality::Origin::epigraph;
  epi.epigraph_static = vidx;
  epi.epigraph_cost = std::make_shared<const CostSpec>(std::move(inner));
  epi.form.name = epi.name;
  epi.form.applies = Applies::statics;
  out.constraints.inequalities.push_back(std::move(epi));
  for (auto& g : out.constraints.inequalities)
    if (g.origin == Inequality::Origin::epigraph && g.epigraph_cost) {
      // Earlier epigraph costs also need the extra static slot.
      if (g.epigraph_static != vidx) {
        CostSpec c = *g.epigraph_cost;
        widen(c.mayer.static_linear);
        widen_matrix(c.mayer.static_quadratic);
        g.epigraph_cost = std::make_shared<const CostSpec>(std::move(c));
      }
    }

  CostSpec objective;
  objective.mayer.static_linear.assign(out.statics.size(), Param::literal(0.0));
  objective.mayer.static_linear[vidx] = Param::literal(1.0);
  out.cost = std::move(objective);
  return out;
}

// ---------------------------------------------------------------------------
// Forward simulation
// ---------------------------------------------------------------------------

// Marches the trapezoidal collocation equations forward from xi0 (Newton on
// each interval), so the returned states have zero defects for the given
// controls up to the Newton tolerance.
inline Mat simulate_trapezoid(const UccdProblem& pb, const Mat& u, const Vec& p, const Realization& r,
                              const Vec& xi0) {
  const Index ns = pb.n_states(), nu = pb.n_controls();
  const std::size_t n = pb.grid.size();
  require(u.rows() == static_cast<Index>(n) && u.cols() == nu, "simulate: control matrix shape mismatch");
  require(xi0.size() == ns, "simulate: initial state dimension mismatch");
  auto ps = detail::realized_statics(pb, p, r);
  EvalContext ctx{&pb.data, &r, ps};
  Mat X(static_cast<Index>(n), ns);
  if (ns == 0) return X;
  X.row(0) = xi0.transpose();
  std::vector<double> uk(static_cast<std::size_t>(std::max<Index>(nu, 1))), uk1(uk.size());
  Vec f0(ns), f1(ns), xn(ns), xp(ns), fp(ns), res(ns);
  auto f = [&](const Vec& xi, const std::vector<double>& uu, std::size_t k, Vec& out) {
    eval_dynamics(pb.dynamics, xi.data(), uu.data(), ctx, k, out.data());
  };
  for (std::size_t k = 0; k + 1 < n; ++k) {
    for (Index j = 0; j < nu; ++j) {
      uk[static_cast<std::size_t>(j)] = u(static_cast<Index>(k), j);
      uk1[static_cast<std::size_t>(j)] = u(static_cast<Index>(k + 1), j);
    }
    const double h = pb.grid.step(k);
    Vec xk = X.row(static_cast<Index>(k)).transpose();
    f(xk, uk, k, f0);
    xn = xk + h * f0;
    for (int it = 0; it < 50; ++it) {
      f(xn, uk1, k + 1, f1);
      res = xn - xk - 0.5 * h * (f0 + f1);
      if (res.cwiseAbs().maxCoeff() <= 1e-14 * (1.0 + xn.cwiseAbs().maxCoeff())) break;
      Mat Jr = Mat::Identity(ns, ns);
      for (Index j = 0; j < ns; ++j) {
        double d = 1e-7 * std::max(1.0, std::abs(xn(j)));
        xp = xn;
        xp(j) += d;
        f(xp, uk1, k + 1, fp);
        Jr.col(j) -= 0.5 * h * (fp - f1) / d;
      }
      xn -= Jr.partialPivLu().solve(res);
    }
    if (!xn.allFinite()) throw NumericalError("simulate: non-finite state");
    X.row(static_cast<Index>(k + 1)) = xn.transpose();
  }
  return X;
}

}  // namespace uccd
