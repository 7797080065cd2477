#pragma once

// Problem documents (JSON, schema 1): strict parsing into UccdProblem plus
// formulation/solver settings, and the inverse serialization.

#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "uccd/common.hpp"
#include "uccd/formulations.hpp"
#include "uccd/model.hpp"
#include "uccd/risk.hpp"
#include "uccd/solve.hpp"
#include "uccd/usets.hpp"

namespace uccd {

using json = nlohmann::ordered_json;

inline constexpr int kSchemaVersion = 1;
inline constexpr Index kMaxStates = 64;

struct Document {
  UccdProblem problem;
  FormulationParams formulation;
  SolverOptions solver;
};

// A validation failure tied to a location in the document.  `pointer` is a
// JSON pointer; `line` is 1-based when it could be resolved, else 0.
class DocumentError : public ValidationError {
 public:
  DocumentError(std::string pointer, const std::string& what, int line = 0)
      : ValidationError(format(pointer, what, line)), pointer_(std::move(pointer)), line_(line) {}
  const std::string& pointer() const { return pointer_; }
  int line() const { return line_; }

 private:
  static std::string format(const std::string& p, const std::string& w, int line) {
    std::string loc = line > 0 ? "line " + std::to_string(line) + ": " : "";
    return loc + (p.empty() ? "/" : p) + ": " + w;
  }
  std::string pointer_;
  int line_;
};

namespace doc {

// Tracks which keys of an object were read so unknown fields can be rejected.
class Obj {
 public:
  Obj(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j.is_object()) fail("expected an object");
  }

  const std::string& path() const { return path_; }
  std::string at(const std::string& key) const { return path_ + "/" + key; }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key) && !j_.at(key).is_null();
  }

  const json& get(const std::string& key) {
    seen_.insert(key);
    if (!j_.contains(key)) throw DocumentError(at(key), "missing required key '" + key + "'");
    return j_.at(key);
  }

  const json* opt(const std::string& key) {
    seen_.insert(key);
    if (!j_.contains(key) || j_.at(key).is_null()) return nullptr;
    return &j_.at(key);
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw DocumentError(at(it.key()), "unknown field '" + it.key() + "'");
  }

  [[noreturn]] void fail(const std::string& what) const { throw DocumentError(path_, what); }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline double number(const json& j, const std::string& path) {
  if (!j.is_number()) throw DocumentError(path, "expected a number");
  double v = j.get<double>();
  if (!std::isfinite(v)) throw DocumentError(path, "number must be finite");
  return v;
}

// null stands for an infinite bound.
inline double bound(const json& j, const std::string& path, double if_null) {
  if (j.is_null()) return if_null;
  return number(j, path);
}

inline double number_or(Obj& o, const std::string& key, double dflt) {
  const json* j = o.opt(key);
  return j ? number(*j, o.at(key)) : dflt;
}

inline std::string string(const json& j, const std::string& path) {
  if (!j.is_string()) throw DocumentError(path, "expected a string");
  return j.get<std::string>();
}

inline std::vector<double> numbers(const json& j, const std::string& path) {
  if (j.is_number()) return {number(j, path)};
  if (!j.is_array()) throw DocumentError(path, "expected an array of numbers");
  std::vector<double> out;
  for (std::size_t i = 0; i < j.size(); ++i) out.push_back(number(j[i], path + "/" + std::to_string(i)));
  return out;
}

inline Vec vec(const json& j, const std::string& path) {
  auto v = numbers(j, path);
  return Eigen::Map<const Vec>(v.data(), static_cast<Index>(v.size()));
}

inline Mat mat(const json& j, const std::string& path) {
  if (!j.is_array() || j.empty()) throw DocumentError(path, "expected a nonempty array of rows");
  const std::size_t cols = j[0].is_array() ? j[0].size() : 0;
  Mat m(static_cast<Index>(j.size()), static_cast<Index>(cols));
  for (std::size_t r = 0; r < j.size(); ++r) {
    std::string rp = path + "/" + std::to_string(r);
    if (!j[r].is_array() || j[r].size() != cols) throw DocumentError(rp, "rows must be arrays of equal length");
    for (std::size_t c = 0; c < cols; ++c)
      m(static_cast<Index>(r), static_cast<Index>(c)) = number(j[r][c], rp + "/" + std::to_string(c));
  }
  return m;
}

// Resolves names used as parameters: statics, constants (flattened
// `name[i]`), signals.
class Names {
 public:
  Names(const StaticVars& statics, const ProblemData& data) : statics_(statics), data_(data) {}

  Param param(const json& j, const std::string& path) const {
    if (j.is_number()) return Param::literal(number(j, path));
    if (!j.is_string()) throw DocumentError(path, "expected a number or a name");
    std::string name = j.get<std::string>();
    if (auto i = statics_.index_of(name)) return {Param::Source::static_var, 0.0, *i, name};
    if (auto i = data_.constant_index(name)) return {Param::Source::constant, 0.0, *i, name};
    if (auto i = data_.signal_index(name)) return {Param::Source::signal, 0.0, *i, name};
    throw DocumentError(path, "unknown name '" + name + "'");
  }

  ParamVector vector(const json& j, const std::string& path, Index expected, const std::string& what) const {
    if (!j.is_array()) throw DocumentError(path, "expected an array");
    if (static_cast<Index>(j.size()) != expected)
      throw DocumentError(path, what + " needs " + std::to_string(expected) + " entries, got " +
                                    std::to_string(j.size()));
    ParamVector v;
    for (std::size_t i = 0; i < j.size(); ++i) v.push_back(param(j[i], path + "/" + std::to_string(i)));
    return v;
  }

  ParamMatrix matrix(const json& j, const std::string& path, Index rows, Index cols, const std::string& what) const {
    if (!j.is_array() || static_cast<Index>(j.size()) != rows)
      throw DocumentError(path, what + " must have " + std::to_string(rows) + " rows");
    ParamMatrix m;
    m.rows = rows;
    m.cols = cols;
    for (std::size_t r = 0; r < j.size(); ++r) {
      std::string rp = path + "/" + std::to_string(r);
      if (!j[r].is_array() || static_cast<Index>(j[r].size()) != cols)
        throw DocumentError(rp, what + " must have " + std::to_string(cols) + " columns");
      for (std::size_t c = 0; c < j[r].size(); ++c) m.entries.push_back(param(j[r][c], rp + "/" + std::to_string(c)));
    }
    return m;
  }

  ParamMatrix symmetric(const json& j, const std::string& path, Index n, const std::string& what) const {
    ParamMatrix m = matrix(j, path, n, n, what);
    for (Index r = 0; r < n; ++r)
      for (Index c = r + 1; c < n; ++c) {
        const Param &a = m(r, c), &b = m(c, r);
        bool same = a.source == b.source && (a.is_literal() ? a.value == b.value : a.index == b.index);
        if (!same) throw DocumentError(path, what + " must be symmetric");
      }
    return m;
  }

 private:
  const StaticVars& statics_;
  const ProblemData& data_;
};

inline std::size_t index_suffix(const std::string& name, const std::string& prefix, const std::string& path) {
  // prefix[i]
  std::string body = name.substr(prefix.size() + 1, name.size() - prefix.size() - 2);
  if (body.empty() || body.find_first_not_of("0123456789") != std::string::npos)
    throw DocumentError(path, "malformed index in '" + name + "'");
  return static_cast<std::size_t>(std::stoul(body));
}

inline bool has_prefix(const std::string& name, const std::string& prefix) {
  return name.size() > prefix.size() + 2 && name.compare(0, prefix.size() + 1, prefix + "[") == 0 &&
         name.back() == ']';
}

// ---------------------------------------------------------------------------
// Sections
// ---------------------------------------------------------------------------

inline TimeGrid parse_grid(const json& j) {
  Obj o(j, "/grid");
  if (const json* nodes = o.opt("nodes")) {
    auto v = numbers(*nodes, o.at("nodes"));
    o.finish();
    try {
      return TimeGrid::from_nodes(v);
    } catch (const ValidationError& e) {
      throw DocumentError(o.at("nodes"), e.what());
    }
  }
  double t0 = number_or(o, "t0", 0.0);
  double tf = number(o.get("tf"), o.at("tf"));
  const json& n = o.get("n_nodes");
  if (!n.is_number_integer() || n.get<long long>() < 2) throw DocumentError(o.at("n_nodes"), "n_nodes must be an integer >= 2");
  o.finish();
  if (!(tf > t0)) throw DocumentError(o.at("tf"), "tf must exceed t0");
  return TimeGrid::uniform(t0, tf, static_cast<std::size_t>(n.get<long long>()));
}

inline StaticVars parse_statics(const json& j) {
  StaticVars out;
  if (!j.is_array()) throw DocumentError("/statics", "expected an array");
  for (std::size_t i = 0; i < j.size(); ++i) {
    Obj o(j[i], "/statics/" + std::to_string(i));
    StaticVar v;
    v.name = string(o.get("name"), o.at("name"));
    if (const json* lo = o.opt("lower")) v.lower = number(*lo, o.at("lower"));
    if (const json* hi = o.opt("upper")) v.upper = number(*hi, o.at("upper"));
    if (const json* t = o.opt("tag")) {
      std::string tag = string(*t, o.at("tag"));
      if (tag == "plant") v.tag = StaticTag::plant;
      else if (tag == "control_gain") v.tag = StaticTag::control_gain;
      else if (tag == "auxiliary") v.tag = StaticTag::auxiliary;
      else throw DocumentError(o.at("tag"), "unknown tag '" + tag + "'");
    }
    if (const json* x = o.opt("initial")) v.initial = number(*x, o.at("initial"));
    o.finish();
    if (v.lower > v.upper) throw DocumentError(o.path(), "lower bound exceeds upper bound");
    if (out.index_of(v.name)) throw DocumentError(o.at("name"), "duplicate static name '" + v.name + "'");
    out.vars.push_back(std::move(v));
  }
  return out;
}

inline ProblemData parse_data(const json& j, std::size_t n_nodes) {
  ProblemData d;
  Obj o(j, "/data");
  if (const json* c = o.opt("constants")) {
    if (!c->is_object()) throw DocumentError(o.at("constants"), "expected an object");
    for (auto it = c->begin(); it != c->end(); ++it) {
      std::string p = o.at("constants") + "/" + it.key();
      if (it.value().is_array()) {
        auto v = numbers(it.value(), p);
        for (std::size_t i = 0; i < v.size(); ++i) {
          d.constant_names.push_back(it.key() + "[" + std::to_string(i) + "]");
          d.constants.push_back(v[i]);
        }
      } else {
        d.constant_names.push_back(it.key());
        d.constants.push_back(number(it.value(), p));
      }
    }
  }
  if (const json* s = o.opt("signals")) {
    if (!s->is_object()) throw DocumentError(o.at("signals"), "expected an object");
    for (auto it = s->begin(); it != s->end(); ++it) {
      std::string p = o.at("signals") + "/" + it.key();
      auto v = numbers(it.value(), p);
      if (v.size() != n_nodes) throw DocumentError(p, "signal needs one value per grid node");
      d.signal_names.push_back(it.key());
      d.signals.push_back(std::move(v));
    }
  }
  o.finish();
  return d;
}

inline RegistryModel registry_model(const std::string& id, const std::string& path) {
  for (auto m : {RegistryModel::double_integrator, RegistryModel::scalar_linear, RegistryModel::pendulum})
    if (id == to_string(m)) return m;
  throw DocumentError(path, "unknown dynamics registry id '" + id + "'");
}

inline std::map<std::string, double> registry_defaults(RegistryModel m) {
  switch (m) {
    case RegistryModel::double_integrator: return {{"b", 1.0}};
    case RegistryModel::scalar_linear: return {{"a", 0.0}, {"b", 1.0}};
    case RegistryModel::pendulum: return {{"g_over_l", 9.81}, {"damping", 0.0}, {"b", 1.0}};
  }
  return {};
}

inline std::pair<Index, Index> registry_dims(RegistryModel m) {
  switch (m) {
    case RegistryModel::double_integrator: return {2, 1};
    case RegistryModel::scalar_linear: return {1, 1};
    case RegistryModel::pendulum: return {2, 1};
  }
  return {0, 0};
}

inline DynamicsSpec parse_dynamics(const json& j, const Names& names) {
  Obj o(j, "/dynamics");
  DynamicsSpec d;
  std::string kind = string(o.get("kind"), o.at("kind"));
  std::optional<Index> ns, nu;
  auto dim = [&](const char* key) -> std::optional<Index> {
    const json* v = o.opt(key);
    if (!v) return std::nullopt;
    if (!v->is_number_integer() || v->get<long long>() < 0) throw DocumentError(o.at(key), "expected a count >= 0");
    return static_cast<Index>(v->get<long long>());
  };
  ns = dim("n_states");
  nu = dim("n_controls");
  if (kind == "linear") {
    d.kind = DynamicsKind::linear;
    const json& A = o.get("A");
    const json& B = o.get("B");
    Index n = ns.value_or(A.is_array() ? static_cast<Index>(A.size()) : 0);
    if (n < 1) throw DocumentError(o.at("A"), "A must be a nonempty square matrix");
    Index m = nu.value_or(B.is_array() && !B.empty() && B[0].is_array() ? static_cast<Index>(B[0].size()) : 0);
    d.n_states = n;
    d.n_controls = m;
    d.A = names.matrix(A, o.at("A"), n, n, "A");
    d.B = names.matrix(B, o.at("B"), n, m, "B");
  } else if (kind == "registry") {
    d.kind = DynamicsKind::registry;
    d.model = registry_model(string(o.get("id"), o.at("id")), o.at("id"));
    auto [n, m] = registry_dims(d.model);
    if (ns && *ns != n) throw DocumentError(o.at("n_states"), "registry model has " + std::to_string(n) + " states");
    if (nu && *nu != m) throw DocumentError(o.at("n_controls"), "registry model has " + std::to_string(m) + " controls");
    d.n_states = n;
    d.n_controls = m;
    auto defaults = registry_defaults(d.model);
    for (auto& [k, v] : defaults) d.coefficients[k] = Param::literal(v);
    if (const json* c = o.opt("coefficients")) {
      if (!c->is_object()) throw DocumentError(o.at("coefficients"), "expected an object");
      for (auto it = c->begin(); it != c->end(); ++it) {
        std::string p = o.at("coefficients") + "/" + it.key();
        if (!defaults.count(it.key()))
          throw DocumentError(p, "unknown coefficient '" + it.key() + "' for " + to_string(d.model));
        d.coefficients[it.key()] = names.param(it.value(), p);
      }
    }
  } else {
    throw DocumentError(o.at("kind"), "dynamics kind must be 'linear' or 'registry'");
  }
  if (d.n_states > kMaxStates)
    throw DocumentError(o.path(), "at most " + std::to_string(kMaxStates) + " states are supported");
  if (const json* b = o.opt("diffusion")) {
    Index nw = b->is_array() && !b->empty() && (*b)[0].is_array() ? static_cast<Index>((*b)[0].size()) : 0;
    if (nw < 1) throw DocumentError(o.at("diffusion"), "diffusion must be an n_states x n_w matrix");
    d.diffusion = names.matrix(*b, o.at("diffusion"), d.n_states, nw, "diffusion");
  }
  o.finish();
  return d;
}

inline CostSpec parse_cost(const json& j, const Names& names, Index ns, Index nu, Index np) {
  CostSpec c;
  Obj o(j, "/cost");
  if (const json* l = o.opt("lagrange")) {
    Obj lo(*l, o.at("lagrange"));
    if (const json* id = lo.opt("id")) {
      std::string s = string(*id, lo.at("id"));
      if (s != "min_energy") throw DocumentError(lo.at("id"), "unknown Lagrange registry id '" + s + "'");
      c.lagrange.R = ParamMatrix::identity(nu);
    }
    if (const json* v = lo.opt("Q")) c.lagrange.Q = names.symmetric(*v, lo.at("Q"), ns, "Q");
    if (const json* v = lo.opt("R")) c.lagrange.R = names.symmetric(*v, lo.at("R"), nu, "R");
    if (const json* v = lo.opt("q")) c.lagrange.q = names.vector(*v, lo.at("q"), ns, "q");
    if (const json* v = lo.opt("r")) c.lagrange.r = names.vector(*v, lo.at("r"), nu, "r");
    if (const json* v = lo.opt("reference")) c.lagrange.reference = names.vector(*v, lo.at("reference"), ns, "reference");
    if (const json* v = lo.opt("constant")) c.lagrange.constant = names.param(*v, lo.at("constant"));
    lo.finish();
  }
  if (const json* m = o.opt("mayer")) {
    Obj mo(*m, o.at("mayer"));
    auto& M = c.mayer;
    if (const json* v = mo.opt("static_quadratic")) M.static_quadratic = names.symmetric(*v, mo.at("static_quadratic"), np, "static_quadratic");
    if (const json* v = mo.opt("terminal_quadratic")) M.terminal_quadratic = names.symmetric(*v, mo.at("terminal_quadratic"), ns, "terminal_quadratic");
    if (const json* v = mo.opt("static_linear")) M.static_linear = names.vector(*v, mo.at("static_linear"), np, "static_linear");
    if (const json* v = mo.opt("terminal_linear")) M.terminal_linear = names.vector(*v, mo.at("terminal_linear"), ns, "terminal_linear");
    if (const json* v = mo.opt("initial_linear")) M.initial_linear = names.vector(*v, mo.at("initial_linear"), ns, "initial_linear");
    if (const json* v = mo.opt("terminal_target")) M.terminal_target = names.vector(*v, mo.at("terminal_target"), ns, "terminal_target");
    if (const json* v = mo.opt("constant")) M.constant = names.param(*v, mo.at("constant"));
    mo.finish();
  }
  o.finish();
  return c;
}

inline Applies parse_applies(const std::string& s, const std::string& path) {
  for (auto a : {Applies::path, Applies::initial, Applies::terminal, Applies::statics})
    if (s == to_string(a)) return a;
  throw DocumentError(path, "applies must be one of path, initial, terminal, static");
}

inline ConstraintForm parse_form(Obj& o, const Names& names, Index ns, Index nu, Index np) {
  ConstraintForm f;
  f.name = string(o.get("name"), o.at("name"));
  f.applies = o.has("applies") ? parse_applies(string(o.get("applies"), o.at("applies")), o.at("applies")) : Applies::path;
  bool trajectory = f.applies != Applies::statics;
  auto no_traj = [&](const char* key) {
    if (!trajectory) throw DocumentError(o.at(key), "static constraints cannot reference states or controls");
  };
  if (const json* v = o.opt("state")) { no_traj("state"); f.state = names.vector(*v, o.at("state"), ns, "state"); }
  if (const json* v = o.opt("control")) { no_traj("control"); f.control = names.vector(*v, o.at("control"), nu, "control"); }
  if (const json* v = o.opt("statics")) f.statics = names.vector(*v, o.at("statics"), np, "statics");
  if (const json* v = o.opt("constant")) f.constant = names.param(*v, o.at("constant"));
  if (const json* v = o.opt("state_quad")) { no_traj("state_quad"); f.state_quad = names.symmetric(*v, o.at("state_quad"), ns, "state_quad"); }
  if (const json* v = o.opt("control_quad")) { no_traj("control_quad"); f.control_quad = names.symmetric(*v, o.at("control_quad"), nu, "control_quad"); }
  if (const json* v = o.opt("static_quad")) f.static_quad = names.symmetric(*v, o.at("static_quad"), np, "static_quad");
  return f;
}

inline std::vector<std::pair<double, double>> parse_bounds(const json& j, const std::string& path, Index n) {
  const double inf = std::numeric_limits<double>::infinity();
  if (!j.is_array() || static_cast<Index>(j.size()) != n)
    throw DocumentError(path, "needs " + std::to_string(n) + " [lower, upper] pairs");
  std::vector<std::pair<double, double>> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    std::string p = path + "/" + std::to_string(i);
    if (!j[i].is_array() || j[i].size() != 2) throw DocumentError(p, "expected [lower, upper]");
    double lo = bound(j[i][0], p + "/0", -inf), hi = bound(j[i][1], p + "/1", inf);
    if (lo > hi) throw DocumentError(p, "lower bound exceeds upper bound");
    out.emplace_back(lo, hi);
  }
  return out;
}

inline ConstraintSpec parse_constraints(const json& j, const Names& names, Index ns, Index nu, Index np) {
  ConstraintSpec c;
  Obj o(j, "/constraints");
  std::set<std::string> used;
  auto unique = [&](const std::string& name, const std::string& path) {
    if (!used.insert(name).second) throw DocumentError(path, "duplicate constraint name '" + name + "'");
  };
  if (const json* v = o.opt("inequalities")) {
    if (!v->is_array()) throw DocumentError(o.at("inequalities"), "expected an array");
    for (std::size_t i = 0; i < v->size(); ++i) {
      Obj fo((*v)[i], o.at("inequalities") + "/" + std::to_string(i));
      Inequality g;
      g.form = parse_form(fo, names, ns, nu, np);
      g.name = g.form.name;
      fo.finish();
      unique(g.name, fo.at("name"));
      c.inequalities.push_back(std::move(g));
    }
  }
  if (const json* v = o.opt("relaxed_equalities")) {
    if (!v->is_array()) throw DocumentError(o.at("relaxed_equalities"), "expected an array");
    for (std::size_t i = 0; i < v->size(); ++i) {
      Obj fo((*v)[i], o.at("relaxed_equalities") + "/" + std::to_string(i));
      ConstraintForm f = parse_form(fo, names, ns, nu, np);
      const json& t = fo.get("tolerance");
      double tol = number(t, fo.at("tolerance"));
      if (!(tol > 0.0)) throw DocumentError(fo.at("tolerance"), "tolerance must be > 0");
      fo.finish();
      unique(f.name, fo.at("name"));
      Inequality up, lo;
      up.name = f.name + ":upper";
      up.form = f;
      up.sign = 1.0;
      up.shift = tol;
      up.origin = Inequality::Origin::relaxed_upper;
      lo.name = f.name + ":lower";
      lo.form = f;
      lo.sign = -1.0;
      lo.shift = tol;
      lo.origin = Inequality::Origin::relaxed_lower;
      c.inequalities.push_back(std::move(up));
      c.inequalities.push_back(std::move(lo));
    }
  }
  if (const json* v = o.opt("equalities")) {
    if (!v->is_array()) throw DocumentError(o.at("equalities"), "expected an array");
    for (std::size_t i = 0; i < v->size(); ++i) {
      Obj fo((*v)[i], o.at("equalities") + "/" + std::to_string(i));
      ConstraintForm f = parse_form(fo, names, ns, nu, np);
      fo.finish();
      unique(f.name, fo.at("name"));
      c.equalities.push_back(std::move(f));
    }
  }
  if (const json* v = o.opt("control_bounds")) c.control_bounds = parse_bounds(*v, o.at("control_bounds"), nu);
  if (const json* v = o.opt("state_bounds")) c.state_bounds = parse_bounds(*v, o.at("state_bounds"), ns);
  o.finish();
  return c;
}

inline BoundaryConditions parse_boundary(const json& j, Index ns) {
  BoundaryConditions b;
  b.xi0 = Vec::Zero(ns);
  b.xif = Vec::Zero(ns);
  b.xi0_mask.assign(static_cast<std::size_t>(ns), false);
  b.xif_mask.assign(static_cast<std::size_t>(ns), false);
  Obj o(j, "/boundary");
  // Entries may be null to leave a component free.
  auto read = [&](const char* key, Vec& v, std::vector<bool>& mask) {
    const json* a = o.opt(key);
    if (!a) return;
    if (!a->is_array() || static_cast<Index>(a->size()) != ns)
      throw DocumentError(o.at(key), std::string(key) + " needs " + std::to_string(ns) + " entries");
    for (std::size_t i = 0; i < a->size(); ++i) {
      if ((*a)[i].is_null()) continue;
      v(static_cast<Index>(i)) = number((*a)[i], o.at(key) + "/" + std::to_string(i));
      mask[i] = true;
    }
  };
  read("xi0", b.xi0, b.xi0_mask);
  read("xif", b.xif, b.xif_mask);
  o.finish();
  return b;
}

inline Representation representation_of(const std::string& kind, const std::string& path) {
  if (kind == "gaussian" || kind == "uniform" || kind == "discrete") return Representation::stochastic;
  if (kind == "box" || kind == "ellipsoid" || kind == "polytope") return Representation::crisp;
  if (kind == "triangular" || kind == "trapezoidal" || kind == "fuzzy_gaussian") return Representation::fuzzy;
  throw DocumentError(path, "unknown uncertainty kind '" + kind + "'");
}

inline Norm parse_norm(const std::string& s, const std::string& path) {
  if (s == "linf") return Norm::linf;
  if (s == "l1") return Norm::l1;
  if (s == "l2") return Norm::l2;
  throw DocumentError(path, "norm must be l1, l2 or linf");
}

inline void parse_rendering(const std::string& kind, const json& params, const std::string& path, Binding& b) {
  Obj p(params, path);
  auto num = [&](const char* key) { return number(p.get(key), p.at(key)); };
  try {
    if (kind == "gaussian") {
      double mu = num("mu"), sigma = num("sigma");
      b.stochastic = StochasticModel::gaussian(mu, sigma);
    } else if (kind == "uniform") {
      double lo = num("lo"), hi = num("hi");
      b.stochastic = StochasticModel::uniform(lo, hi);
    } else if (kind == "discrete") {
      auto v = numbers(p.get("values"), p.at("values"));
      auto pr = numbers(p.get("probabilities"), p.at("probabilities"));
      b.stochastic = StochasticModel::discrete(v, pr);
    } else if (kind == "box") {
      Vec c = vec(p.get("center"), p.at("center")), h = vec(p.get("halfwidth"), p.at("halfwidth"));
      Norm n = p.has("norm") ? parse_norm(string(p.get("norm"), p.at("norm")), p.at("norm")) : Norm::linf;
      b.crisp = CrispSet::box(c, h, n);
    } else if (kind == "ellipsoid") {
      Vec c = vec(p.get("center"), p.at("center"));
      Mat s = mat(p.get("shape"), p.at("shape"));
      double r = num("radius");
      b.crisp = CrispSet::ellipsoid(c, s, r);
    } else if (kind == "polytope") {
      b.crisp = CrispSet::polytope(mat(p.get("vertices"), p.at("vertices")));
    } else if (kind == "triangular") {
      double a = num("a"), m = num("b"), c = num("c");
      b.fuzzy = FuzzySet::triangular(a, m, c);
    } else if (kind == "trapezoidal") {
      double a = num("a"), m = num("b"), c = num("c"), d = num("d");
      b.fuzzy = FuzzySet::trapezoidal(a, m, c, d);
    } else if (kind == "fuzzy_gaussian") {
      double c = num("center"), w = num("width");
      b.fuzzy = FuzzySet::gaussian(c, w);
    }
  } catch (const DocumentError&) {
    throw;
  } catch (const ValidationError& e) {
    throw DocumentError(path, e.what());
  }
  p.finish();
}

inline Target resolve_target(const std::string& name, const std::string& path, const StaticVars& statics,
                             const ProblemData& data, Index ns) {
  if (auto i = statics.index_of(name)) return {TargetKind::static_var, *i, name};
  if (auto i = data.constant_index(name)) return {TargetKind::constant, *i, name};
  if (auto i = data.signal_index(name)) return {TargetKind::signal, *i, name};
  for (auto [prefix, kind] : {std::pair{"xi0", TargetKind::initial_state}, std::pair{"noise", TargetKind::state_noise}})
    if (has_prefix(name, prefix)) {
      std::size_t i = index_suffix(name, prefix, path);
      if (static_cast<Index>(i) >= ns) throw DocumentError(path, "state index out of range in '" + name + "'");
      return {kind, i, name};
    }
  throw DocumentError(path, "unknown binding target '" + name + "'");
}

inline std::vector<Binding> parse_uncertainty(const json& j, const StaticVars& statics, const ProblemData& data,
                                              Index ns) {
  if (!j.is_array()) throw DocumentError("/uncertainty", "expected an array");
  std::vector<Binding> out;
  std::set<std::pair<int, std::size_t>> bound_targets;
  for (std::size_t i = 0; i < j.size(); ++i) {
    Obj o(j[i], "/uncertainty/" + std::to_string(i));
    Binding b;
    const json& t = o.get("target");
    std::vector<std::string> names;
    if (t.is_string()) names.push_back(t.get<std::string>());
    else if (t.is_array() && !t.empty())
      for (std::size_t k = 0; k < t.size(); ++k) names.push_back(string(t[k], o.at("target") + "/" + std::to_string(k)));
    else throw DocumentError(o.at("target"), "target must be a name or a nonempty array of names");
    for (const auto& n : names) {
      Target tg = resolve_target(n, o.at("target"), statics, data, ns);
      if (!bound_targets.insert({static_cast<int>(tg.kind), tg.index}).second)
        throw DocumentError(o.at("target"), "target '" + n + "' is bound twice");
      b.targets.push_back(tg);
    }
    std::string kind = string(o.get("kind"), o.at("kind"));
    b.primary = representation_of(kind, o.at("kind"));
    parse_rendering(kind, o.get("params"), o.at("params"), b);
    if (const json* paired = o.opt("paired")) {
      if (!paired->is_array()) throw DocumentError(o.at("paired"), "expected an array");
      for (std::size_t k = 0; k < paired->size(); ++k) {
        Obj po((*paired)[k], o.at("paired") + "/" + std::to_string(k));
        std::string pk = string(po.get("kind"), po.at("kind"));
        Representation r = representation_of(pk, po.at("kind"));
        if (b.has(r)) throw DocumentError(po.at("kind"), std::string("binding already has a ") + to_string(r) + " rendering");
        parse_rendering(pk, po.get("params"), po.at("params"), b);
        po.finish();
      }
    }
    o.finish();
    if ((b.stochastic || b.fuzzy) && b.width() != 1)
      throw DocumentError(o.path(), "stochastic and fuzzy renderings bind exactly one target");
    if (b.crisp && b.crisp->dim() != b.width())
      throw DocumentError(o.path(), "crisp set dimension must equal the number of targets");
    out.push_back(std::move(b));
  }
  return out;
}

inline risk::Treatment parse_treatment(const std::string& s, const std::string& path) {
  using risk::Treatment;
  for (auto t : {Treatment::nominal, Treatment::expectation, Treatment::discounted, Treatment::mean_std,
                 Treatment::cvar, Treatment::utility, Treatment::chance, Treatment::system_chance,
                 Treatment::worst_case, Treatment::possibilistic, Treatment::evidence})
    if (s == risk::to_string(t)) return t;
  throw DocumentError(path, "unknown treatment '" + s + "'");
}

inline risk::ChanceMode parse_chance_mode(const std::string& s, const std::string& path) {
  if (s == "gaussian") return risk::ChanceMode::gaussian;
  if (s == "saa") return risk::ChanceMode::saa;
  throw DocumentError(path, "chance mode must be 'gaussian' or 'saa'");
}

inline risk::TreatmentSpec parse_override(const json& j, const std::string& path) {
  Obj o(j, path);
  risk::TreatmentSpec t;
  t.kind = parse_treatment(string(o.get("treatment"), o.at("treatment")), o.at("treatment"));
  t.k_s = number_or(o, "k_s", t.k_s);
  t.sigma_a = number_or(o, "sigma_a", t.sigma_a);
  t.gamma = number_or(o, "gamma", t.gamma);
  t.rho = number_or(o, "rho", t.rho);
  t.utility_shift = number_or(o, "utility_shift", t.utility_shift);
  t.p_f = number_or(o, "p_f", t.p_f);
  if (o.has("mode")) t.mode = parse_chance_mode(string(o.get("mode"), o.at("mode")), o.at("mode"));
  t.pos_f = number_or(o, "pos_f", t.pos_f);
  if (o.has("measure")) {
    std::string m = string(o.get("measure"), o.at("measure"));
    if (m == "belief") t.measure = risk::EvidenceMeasure::belief;
    else if (m == "plausibility") t.measure = risk::EvidenceMeasure::plausibility;
    else throw DocumentError(o.at("measure"), "measure must be 'belief' or 'plausibility'");
  }
  t.level = number_or(o, "level", t.level);
  t.discount = number_or(o, "discount", t.discount);
  o.finish();
  try {
    t.validate();
  } catch (const ValidationError& e) {
    throw DocumentError(path, e.what());
  }
  return t;
}

inline SolverOptions parse_solver(const json& j, const std::string& path) {
  Obj o(j, path);
  SolverOptions s;
  auto integer = [&](const char* key, int& dst) {
    if (const json* v = o.opt(key)) {
      if (!v->is_number_integer()) throw DocumentError(o.at(key), "expected an integer");
      dst = v->get<int>();
    }
  };
  integer("max_outer_iters", s.max_outer_iters);
  integer("max_inner_iters", s.max_inner_iters);
  integer("max_line_search", s.max_line_search);
  integer("max_generation_rounds", s.max_generation_rounds);
  integer("multistart", s.multistart);
  s.penalty_init = number_or(o, "penalty_init", s.penalty_init);
  s.penalty_growth = number_or(o, "penalty_growth", s.penalty_growth);
  s.penalty_max = number_or(o, "penalty_max", s.penalty_max);
  s.constraint_tol = number_or(o, "constraint_tol", s.constraint_tol);
  s.gradient_tol = number_or(o, "gradient_tol", s.gradient_tol);
  s.fd_step = number_or(o, "fd_step", s.fd_step);
  s.hessian_step = number_or(o, "hessian_step", s.hessian_step);
  s.certify_tol = number_or(o, "certify_tol", s.certify_tol);
  o.finish();
  try {
    s.validate();
  } catch (const ValidationError& e) {
    throw DocumentError(path, e.what());
  }
  return s;
}

inline void parse_formulation(const json& j, FormulationParams& fp, SolverOptions& solver) {
  Obj o(j, "/formulation");
  fp.type = FormulationType::det;
  if (o.has("type")) {
    try {
      fp.type = uccd::parse_formulation(string(o.get("type"), o.at("type")));
    } catch (const ValidationError& e) {
      throw DocumentError(o.at("type"), e.what());
    }
  }
  if (o.has("structure")) {
    std::string s = string(o.get("structure"), o.at("structure"));
    if (s == "olsc") fp.structure = ControlStructure::olsc;
    else if (s == "olmc") fp.structure = ControlStructure::olmc;
    else throw DocumentError(o.at("structure"), "structure must be 'olsc' or 'olmc'");
  }
  if (const json* pj = o.opt("params")) {
    Obj p(*pj, o.at("params"));
    if (const json* v = p.opt("samples")) {
      if (!v->is_number_integer() || v->get<long long>() < 1) throw DocumentError(p.at("samples"), "samples must be an integer >= 1");
      fp.samples = static_cast<Index>(v->get<long long>());
    }
    if (const json* v = p.opt("seed")) {
      if (!v->is_number_unsigned()) throw DocumentError(p.at("seed"), "seed must be a nonnegative integer");
      fp.seed = v->get<std::uint64_t>();
    }
    if (const json* v = p.opt("moment_match")) {
      if (!v->is_boolean()) throw DocumentError(p.at("moment_match"), "expected a boolean");
      fp.moment_match = v->get<bool>();
    }
    fp.alpha_w = number_or(p, "alpha_w", fp.alpha_w);
    fp.k_s = number_or(p, "k_s", fp.k_s);
    fp.sigma_a = number_or(p, "sigma_a", fp.sigma_a);
    fp.p_f = number_or(p, "p_f", fp.p_f);
    if (p.has("chance_mode"))
      fp.chance_mode = parse_chance_mode(string(p.get("chance_mode"), p.at("chance_mode")), p.at("chance_mode"));
    fp.tau_scale = number_or(p, "tau_scale", fp.tau_scale);
    if (const json* v = p.opt("anneal_rounds")) {
      if (!v->is_number_integer()) throw DocumentError(p.at("anneal_rounds"), "expected an integer");
      fp.anneal_rounds = v->get<int>();
    }
    fp.pos_f = number_or(p, "pos_f", fp.pos_f);
    if (const json* v = p.opt("n_levels")) {
      if (!v->is_number_integer()) throw DocumentError(p.at("n_levels"), "expected an integer");
      fp.n_levels = static_cast<Index>(v->get<long long>());
    }
    if (p.has("wcr_mode")) {
      std::string m = string(p.get("wcr_mode"), p.at("wcr_mode"));
      if (m == "vertex") fp.wcr_mode = WcrMode::vertex;
      else if (m == "scenario-generation") fp.wcr_mode = WcrMode::scenario_generation;
      else throw DocumentError(p.at("wcr_mode"), "wcr_mode must be 'vertex' or 'scenario-generation'");
    }
    if (p.has("inner_mode")) {
      std::string m = string(p.get("inner_mode"), p.at("inner_mode"));
      if (m == "vertex") fp.inner_mode = InnerMode::vertex;
      else if (m == "ascent") fp.inner_mode = InnerMode::ascent;
      else throw DocumentError(p.at("inner_mode"), "inner_mode must be 'vertex' or 'ascent'");
    }
    if (const json* v = p.opt("initial_pool")) fp.initial_pool = mat(*v, p.at("initial_pool"));
    if (const json* v = p.opt("overrides")) {
      if (!v->is_object()) throw DocumentError(p.at("overrides"), "expected an object");
      for (auto it = v->begin(); it != v->end(); ++it)
        fp.overrides[it.key()] = parse_override(it.value(), p.at("overrides") + "/" + it.key());
    }
    if (const json* v = p.opt("solver")) solver = parse_solver(*v, p.at("solver"));
    p.finish();
  }
  o.finish();
  try {
    fp.validate();
  } catch (const ValidationError& e) {
    throw DocumentError(o.at("params"), e.what());
  }
}

// Best-effort line of a JSON pointer in the source text: follows the path's
// object keys in order of appearance.
inline int locate(const std::string& text, const std::string& pointer) {
  if (text.empty() || pointer.empty()) return 0;
  std::size_t pos = 0;
  std::size_t start = 1;
  bool found = false;
  while (start <= pointer.size()) {
    std::size_t end = pointer.find('/', start);
    std::string tok = pointer.substr(start, end == std::string::npos ? std::string::npos : end - start);
    start = end == std::string::npos ? pointer.size() + 1 : end + 1;
    if (tok.empty() || tok.find_first_not_of("0123456789") == std::string::npos) continue;
    std::size_t at = text.find("\"" + tok + "\"", pos);
    if (at == std::string::npos) break;
    pos = at;
    found = true;
  }
  if (!found) return 0;
  return 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(pos), '\n'));
}

}  // namespace doc

// Parses and validates a document tree.  Errors are DocumentErrors naming the
// offending JSON pointer.
inline Document build_document(const json& j) {
  doc::Obj top(j, "");
  const json& schema = top.get("schema");
  if (!schema.is_number_integer() || schema.get<int>() != kSchemaVersion)
    throw DocumentError("/schema", "unsupported schema version (expected " + std::to_string(kSchemaVersion) + ")");
  Document d;
  UccdProblem& pb = d.problem;
  pb.grid = doc::parse_grid(top.get("grid"));
  pb.statics = top.has("statics") ? doc::parse_statics(top.get("statics")) : StaticVars{};
  pb.data = top.has("data") ? doc::parse_data(top.get("data"), pb.grid.size()) : ProblemData{};
  {
    std::set<std::string> names;
    auto add = [&](const std::string& n, const std::string& where) {
      if (!names.insert(n).second) throw DocumentError(where, "name '" + n + "' is defined more than once");
    };
    for (const auto& v : pb.statics.vars) add(v.name, "/statics");
    for (const auto& n : pb.data.constant_names) add(n, "/data/constants");
    for (const auto& n : pb.data.signal_names) add(n, "/data/signals");
  }
  doc::Names names(pb.statics, pb.data);
  pb.dynamics = doc::parse_dynamics(top.get("dynamics"), names);
  const Index ns = pb.n_states(), nu = pb.n_controls(), np = pb.n_statics();
  pb.cost = doc::parse_cost(top.get("cost"), names, ns, nu, np);
  pb.constraints = top.has("constraints") ? doc::parse_constraints(top.get("constraints"), names, ns, nu, np)
                                          : ConstraintSpec{};
  pb.boundary = top.has("boundary") ? doc::parse_boundary(top.get("boundary"), ns) : doc::parse_boundary(json::object(), ns);
  pb.bindings = top.has("uncertainty") ? doc::parse_uncertainty(top.get("uncertainty"), pb.statics, pb.data, ns)
                                       : std::vector<Binding>{};
  if (top.has("formulation")) doc::parse_formulation(top.get("formulation"), d.formulation, d.solver);
  top.finish();
  return d;
}

inline Document parse_document(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    // Byte offset to line/column.
    std::size_t off = std::min<std::size_t>(e.byte == 0 ? 0 : e.byte - 1, text.size());
    int line = 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(off), '\n'));
    std::size_t nl = text.rfind('\n', off == 0 ? 0 : off - 1);
    std::size_t col = nl == std::string::npos ? off + 1 : off - nl;
    throw DocumentError("", "parse error at column " + std::to_string(col) + ": " + e.what(), line);
  }
  try {
    return build_document(j);
  } catch (const DocumentError& e) {
    if (e.line() > 0) throw;
    std::string msg = e.what();
    std::string prefix = (e.pointer().empty() ? "/" : e.pointer()) + ": ";
    if (msg.rfind(prefix, 0) == 0) msg = msg.substr(prefix.size());
    throw DocumentError(e.pointer(), msg, doc::locate(text, e.pointer()));
  }
}

inline UccdProblem build_problem(const json& j) { return build_document(j).problem; }

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

namespace doc {

inline json number_out(double v) {
  if (std::isfinite(v)) return v;
  return nullptr;
}

inline json param_out(const Param& p) {
  if (p.is_literal()) return p.value;
  return p.name;
}

inline json vector_out(const ParamVector& v) {
  json a = json::array();
  for (const auto& p : v) a.push_back(param_out(p));
  return a;
}

inline json matrix_out(const ParamMatrix& m) {
  json a = json::array();
  for (Index r = 0; r < m.rows; ++r) {
    json row = json::array();
    for (Index c = 0; c < m.cols; ++c) row.push_back(param_out(m(r, c)));
    a.push_back(row);
  }
  return a;
}

inline json vec_out(const Vec& v) {
  json a = json::array();
  for (Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

inline json mat_out(const Mat& m) {
  json a = json::array();
  for (Index r = 0; r < m.rows(); ++r) a.push_back(vec_out(m.row(r).transpose()));
  return a;
}

inline json form_out(const ConstraintForm& f) {
  json o;
  o["name"] = f.name;
  o["applies"] = to_string(f.applies);
  if (!f.state.empty()) o["state"] = vector_out(f.state);
  if (!f.control.empty()) o["control"] = vector_out(f.control);
  if (!f.statics.empty()) o["statics"] = vector_out(f.statics);
  if (!f.constant.is_zero()) o["constant"] = param_out(f.constant);
  if (!f.state_quad.empty()) o["state_quad"] = matrix_out(f.state_quad);
  if (!f.control_quad.empty()) o["control_quad"] = matrix_out(f.control_quad);
  if (!f.static_quad.empty()) o["static_quad"] = matrix_out(f.static_quad);
  return o;
}

inline json rendering_out(const Binding& b, Representation r) {
  json o;
  json p;
  switch (r) {
    case Representation::stochastic: {
      const auto& m = *b.stochastic;
      switch (m.kind) {
        case StochasticModel::Kind::gaussian: o["kind"] = "gaussian"; p["mu"] = m.mu; p["sigma"] = m.sigma; break;
        case StochasticModel::Kind::uniform: o["kind"] = "uniform"; p["lo"] = m.lo; p["hi"] = m.hi; break;
        case StochasticModel::Kind::discrete:
          o["kind"] = "discrete";
          p["values"] = m.values;
          p["probabilities"] = m.probabilities;
          break;
      }
      break;
    }
    case Representation::crisp: {
      const auto& s = *b.crisp;
      switch (s.kind) {
        case CrispSet::Kind::box:
          o["kind"] = "box";
          p["center"] = vec_out(s.center);
          p["halfwidth"] = vec_out(s.halfwidth);
          p["norm"] = s.norm == Norm::l1 ? "l1" : s.norm == Norm::l2 ? "l2" : "linf";
          break;
        case CrispSet::Kind::ellipsoid:
          o["kind"] = "ellipsoid";
          p["center"] = vec_out(s.center);
          p["shape"] = mat_out(s.shape);
          p["radius"] = s.radius;
          break;
        case CrispSet::Kind::polytope: o["kind"] = "polytope"; p["vertices"] = mat_out(s.vertices); break;
      }
      break;
    }
    case Representation::fuzzy: {
      const auto& f = *b.fuzzy;
      switch (f.kind) {
        case FuzzySet::Kind::triangular: o["kind"] = "triangular"; p["a"] = f.a; p["b"] = f.b; p["c"] = f.c; break;
        case FuzzySet::Kind::trapezoidal:
          o["kind"] = "trapezoidal";
          p["a"] = f.a, p["b"] = f.b, p["c"] = f.c, p["d"] = f.d;
          break;
        case FuzzySet::Kind::gaussian: o["kind"] = "fuzzy_gaussian"; p["center"] = f.center; p["width"] = f.width; break;
      }
      break;
    }
  }
  o["params"] = p;
  return o;
}


}  // namespace doc

// Canonical document for a problem plus formulation settings.  Problems that
// went through epigraph_transform are not representable.
inline json to_json(const Document& d) {
  using namespace doc;
  const UccdProblem& pb = d.problem;
  if (pb.original_cost) throw ValidationError("epigraph-transformed problems have no document form");
  json j;
  j["schema"] = kSchemaVersion;
  json grid;
  if (pb.grid.is_uniform()) {
    grid["t0"] = pb.grid.t0();
    grid["tf"] = pb.grid.tf();
    grid["n_nodes"] = pb.grid.size();
  } else {
    grid["nodes"] = pb.grid.nodes();
  }
  j["grid"] = grid;

  json dyn;
  const auto& D = pb.dynamics;
  if (D.kind == DynamicsKind::registry) {
    dyn["kind"] = "registry";
    dyn["id"] = to_string(D.model);
    json c = json::object();
    for (const auto& [k, v] : D.coefficients) c[k] = param_out(v);
    dyn["coefficients"] = c;
  } else {
    dyn["kind"] = "linear";
    dyn["n_states"] = D.n_states;
    dyn["n_controls"] = D.n_controls;
    dyn["A"] = matrix_out(D.A);
    dyn["B"] = D.n_controls > 0 ? matrix_out(D.B) : json::array();
    if (D.n_controls == 0)
      for (Index r = 0; r < D.n_states; ++r) dyn["B"].push_back(json::array());
  }
  if (!D.diffusion.empty()) dyn["diffusion"] = matrix_out(D.diffusion);
  j["dynamics"] = dyn;

  json statics = json::array();
  for (const auto& v : pb.statics.vars) {
    json o;
    o["name"] = v.name;
    o["lower"] = number_out(v.lower);
    o["upper"] = number_out(v.upper);
    o["tag"] = v.tag == StaticTag::plant ? "plant" : v.tag == StaticTag::control_gain ? "control_gain" : "auxiliary";
    if (v.initial) o["initial"] = *v.initial;
    statics.push_back(o);
  }
  j["statics"] = statics;

  json data;
  json consts = json::object();
  // Flattened vector constants are written back as arrays.
  for (std::size_t i = 0; i < pb.data.constants.size();) {
    const std::string& n = pb.data.constant_names[i];
    auto br = n.find('[');
    if (br != std::string::npos && n.back() == ']') {
      std::string base = n.substr(0, br);
      json arr = json::array();
      while (i < pb.data.constants.size() && pb.data.constant_names[i].rfind(base + "[", 0) == 0)
        arr.push_back(pb.data.constants[i++]);
      consts[base] = arr;
    } else {
      consts[n] = pb.data.constants[i++];
    }
  }
  data["constants"] = consts;
  json sig = json::object();
  for (std::size_t i = 0; i < pb.data.signals.size(); ++i) sig[pb.data.signal_names[i]] = pb.data.signals[i];
  data["signals"] = sig;
  j["data"] = data;

  json cost, lag, may;
  const auto& L = pb.cost.lagrange;
  if (!L.Q.empty()) lag["Q"] = matrix_out(L.Q);
  if (!L.R.empty()) lag["R"] = matrix_out(L.R);
  if (!L.q.empty()) lag["q"] = vector_out(L.q);
  if (!L.r.empty()) lag["r"] = vector_out(L.r);
  if (!L.reference.empty()) lag["reference"] = vector_out(L.reference);
  if (!L.constant.is_zero()) lag["constant"] = param_out(L.constant);
  const auto& M = pb.cost.mayer;
  if (!M.static_quadratic.empty()) may["static_quadratic"] = matrix_out(M.static_quadratic);
  if (!M.terminal_quadratic.empty()) may["terminal_quadratic"] = matrix_out(M.terminal_quadratic);
  if (!M.static_linear.empty()) may["static_linear"] = vector_out(M.static_linear);
  if (!M.terminal_linear.empty()) may["terminal_linear"] = vector_out(M.terminal_linear);
  if (!M.initial_linear.empty()) may["initial_linear"] = vector_out(M.initial_linear);
  if (!M.terminal_target.empty()) may["terminal_target"] = vector_out(M.terminal_target);
  if (!M.constant.is_zero()) may["constant"] = param_out(M.constant);
  cost["lagrange"] = lag.is_null() ? json::object() : lag;
  cost["mayer"] = may.is_null() ? json::object() : may;
  j["cost"] = cost;

  json cons, ineq = json::array(), relaxed = json::array(), eq = json::array();
  for (const auto& g : pb.constraints.inequalities) {
    if (g.origin == Inequality::Origin::inequality) ineq.push_back(form_out(g.form));
    else if (g.origin == Inequality::Origin::relaxed_upper) {
      json o = form_out(g.form);
      o["tolerance"] = g.shift;
      relaxed.push_back(o);
    }
  }
  for (const auto& h : pb.constraints.equalities) eq.push_back(form_out(h));
  cons["inequalities"] = ineq;
  cons["relaxed_equalities"] = relaxed;
  cons["equalities"] = eq;
  auto bounds = [](const std::vector<std::pair<double, double>>& b) {
    json a = json::array();
    for (const auto& [lo, hi] : b) a.push_back(json::array({number_out(lo), number_out(hi)}));
    return a;
  };
  if (!pb.constraints.control_bounds.empty()) cons["control_bounds"] = bounds(pb.constraints.control_bounds);
  if (!pb.constraints.state_bounds.empty()) cons["state_bounds"] = bounds(pb.constraints.state_bounds);
  j["constraints"] = cons;

  json bnd;
  auto masked = [&](const Vec& v, const std::vector<bool>& mask) {
    json a = json::array();
    for (Index i = 0; i < pb.n_states(); ++i)
      a.push_back(static_cast<std::size_t>(i) < mask.size() && mask[static_cast<std::size_t>(i)] ? json(v(i)) : json());
    return a;
  };
  bnd["xi0"] = masked(pb.boundary.xi0, pb.boundary.xi0_mask);
  bnd["xif"] = masked(pb.boundary.xif, pb.boundary.xif_mask);
  j["boundary"] = bnd;

  json unc = json::array();
  for (const auto& b : pb.bindings) {
    json o;
    if (b.targets.size() == 1) o["target"] = b.targets.front().name;
    else {
      json t = json::array();
      for (const auto& tg : b.targets) t.push_back(tg.name);
      o["target"] = t;
    }
    json prim = rendering_out(b, b.primary);
    o["kind"] = prim["kind"];
    o["params"] = prim["params"];
    json paired = json::array();
    for (auto r : {Representation::stochastic, Representation::crisp, Representation::fuzzy})
      if (r != b.primary && b.has(r)) paired.push_back(rendering_out(b, r));
    if (!paired.empty()) o["paired"] = paired;
    unc.push_back(o);
  }
  j["uncertainty"] = unc;

  const auto& F = d.formulation;
  json f, p;
  f["type"] = to_string(F.type);
  f["structure"] = to_string(F.structure);
  p["samples"] = F.samples;
  p["seed"] = F.seed;
  if (F.moment_match) p["moment_match"] = *F.moment_match;
  p["alpha_w"] = F.alpha_w;
  p["k_s"] = F.k_s;
  p["sigma_a"] = number_out(F.sigma_a);
  p["p_f"] = F.p_f;
  p["chance_mode"] = F.chance_mode == risk::ChanceMode::gaussian ? "gaussian" : "saa";
  p["tau_scale"] = F.tau_scale;
  p["anneal_rounds"] = F.anneal_rounds;
  p["pos_f"] = F.pos_f;
  p["n_levels"] = F.n_levels;
  p["wcr_mode"] = F.wcr_mode == WcrMode::vertex ? "vertex" : "scenario-generation";
  if (F.inner_mode) p["inner_mode"] = *F.inner_mode == InnerMode::vertex ? "vertex" : "ascent";
  if (F.initial_pool) p["initial_pool"] = mat_out(*F.initial_pool);
  json ov = json::object();
  for (const auto& [name, t] : F.overrides) {
    json o;
    o["treatment"] = risk::to_string(t.kind);
    o["k_s"] = t.k_s;
    o["sigma_a"] = number_out(t.sigma_a);
    o["gamma"] = t.gamma;
    o["rho"] = t.rho;
    o["utility_shift"] = t.utility_shift;
    o["p_f"] = t.p_f;
    o["mode"] = t.mode == risk::ChanceMode::gaussian ? "gaussian" : "saa";
    o["pos_f"] = t.pos_f;
    o["measure"] = t.measure == risk::EvidenceMeasure::belief ? "belief" : "plausibility";
    o["level"] = t.level;
    o["discount"] = t.discount;
    ov[name] = o;
  }
  p["overrides"] = ov;
  const auto& S = d.solver;
  json s;
  s["max_outer_iters"] = S.max_outer_iters;
  s["max_inner_iters"] = S.max_inner_iters;
  s["penalty_init"] = S.penalty_init;
  s["penalty_growth"] = S.penalty_growth;
  s["penalty_max"] = S.penalty_max;
  s["constraint_tol"] = S.constraint_tol;
  s["gradient_tol"] = S.gradient_tol;
  s["fd_step"] = S.fd_step;
  s["hessian_step"] = S.hessian_step;
  s["max_line_search"] = S.max_line_search;
  s["max_generation_rounds"] = S.max_generation_rounds;
  s["certify_tol"] = S.certify_tol;
  s["multistart"] = S.multistart;
  p["solver"] = s;
  f["params"] = p;
  j["formulation"] = f;
  return j;
}

}  // namespace uccd
