#pragma once

// Flat deterministic NLP produced by the formulation compilers.
//
// Decision functions are split in two layers.  Element rows y(x) are cheap,
// structurally sparse functions (defect rows, integrand samples, constraint
// samples) whose derivatives are taken by colored finite differences.
// Reductions then combine element rows into scalar objective/constraint values
// (sums, moments, smoothed indicators, tail averages) with analytic
// derivatives.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "uccd/common.hpp"
#include "uccd/parallel.hpp"
#include "uccd/risk.hpp"
#include "uccd/usets.hpp"

namespace uccd {

struct Slice {
  std::string name;
  Index offset = 0;
  Index rows = 0;  // nodes (1 for statics)
  Index cols = 0;  // channels
  int scenario = -1;

  Index size() const { return rows * cols; }
};

// Contiguous run of element rows evaluated together.
struct ElementBlock {
  std::string label;
  Index first = 0;
  Index rows = 0;
  std::vector<std::vector<Index>> deps;  // per row: decision indices it may read
  std::function<void(const double* x, double* y)> eval;  // writes y[0..rows)
};

// z = sum_i a_i y_i + sum_j b_j x_j + c
struct LinearTerm {
  std::vector<std::pair<Index, double>> y;
  std::vector<std::pair<Index, double>> x;
  double c = 0.0;

  static LinearTerm element(Index i, double coef = 1.0) {
    LinearTerm t;
    t.y.emplace_back(i, coef);
    return t;
  }
  static LinearTerm decision(Index j, double coef = 1.0) {
    LinearTerm t;
    t.x.emplace_back(j, coef);
    return t;
  }

  double value(const double* yv, const double* xv) const {
    double acc = c;
    for (const auto& [i, a] : y) acc += a * yv[i];
    for (const auto& [j, b] : x) acc += b * xv[j];
    return acc;
  }

  LinearTerm& add(const LinearTerm& o, double scale = 1.0) {
    for (const auto& [i, a] : o.y) y.emplace_back(i, scale * a);
    for (const auto& [j, b] : o.x) x.emplace_back(j, scale * b);
    c += scale * o.c;
    return *this;
  }
};

// Second derivative of a reduction with respect to its term values z:
// diag(d) + sum_k s_k v_k v_k^T.
struct ZHessian {
  std::vector<double> diag;
  std::vector<std::pair<double, std::vector<double>>> lowrank;
};

struct Reduction {
  enum class Kind { sum, mean_std, sigmoid, cvar, utility, system_sigmoid, min };

  Kind kind = Kind::sum;
  std::vector<LinearTerm> terms;
  std::vector<double> weights;  // per term (sum, mean_std, sigmoid, cvar, utility, system: per group)
  double offset = 0.0;
  double a = 1.0;               // mean_std: coefficient on the mean
  double b = 0.0;               // mean_std: coefficient on the std
  double tau = 1.0;             // sigmoid temperature
  double level = 0.9;           // cvar
  double rho = 0.0;             // utility
  double shift = 1.0;           // utility
  std::vector<int> groups;      // system_sigmoid: group (scenario) per term

  static Reduction single(LinearTerm t) {
    Reduction r;
    r.terms.push_back(std::move(t));
    r.weights.push_back(1.0);
    return r;
  }

  // Value plus dr/dz (and optionally the z-Hessian).
  double eval(const std::vector<double>& z, std::vector<double>* grad, ZHessian* hess) const;
};

namespace detail {

inline double logistic(double s) {
  if (s >= 0.0) return 1.0 / (1.0 + std::exp(-s));
  double e = std::exp(s);
  return e / (1.0 + e);
}

// CRRA utility extended linearly below o_min so expected utility stays finite
// when a sample crosses the declared shift.
struct ExtendedCrra {
  double rho, o_min;
  double u(double o) const {
    if (o >= o_min) return risk::crra_utility(o, rho);
    return risk::crra_utility(o_min, rho) + risk::crra_marginal(o_min, rho) * (o - o_min);
  }
  double du(double o) const { return risk::crra_marginal(std::max(o, o_min), rho); }
  double d2u(double o) const { return o >= o_min ? -rho * std::pow(o, -rho - 1.0) : 0.0; }
};

}  // namespace detail

inline double Reduction::eval(const std::vector<double>& z, std::vector<double>* grad, ZHessian* hess) const {
  const std::size_t m = z.size();
  if (grad) grad->assign(m, 0.0);
  if (hess) {
    hess->diag.clear();
    hess->lowrank.clear();
  }
  switch (kind) {
    case Kind::sum: {
      double acc = offset;
      for (std::size_t t = 0; t < m; ++t) acc += weights[t] * z[t];
      if (grad) *grad = weights;
      return acc;
    }
    case Kind::mean_std: {
      double mu = 0.0, wsum = 0.0;
      for (std::size_t t = 0; t < m; ++t) {
        mu += weights[t] * z[t];
        wsum += weights[t];
      }
      mu /= wsum;
      double var = 0.0;
      if (b != 0.0)
        for (std::size_t t = 0; t < m; ++t) var += weights[t] / wsum * (z[t] - mu) * (z[t] - mu);
      double sd = std::sqrt(std::max(var, 0.0));
      if (grad)
        for (std::size_t t = 0; t < m; ++t) (*grad)[t] = a * weights[t] / wsum;
      const bool smooth = b != 0.0 && sd > 1e-12 * (1.0 + std::abs(mu));
      if (smooth) {
        std::vector<double> gs(m), wn(m);
        for (std::size_t t = 0; t < m; ++t) {
          wn[t] = weights[t] / wsum;
          gs[t] = wn[t] * (z[t] - mu) / sd;
        }
        if (grad)
          for (std::size_t t = 0; t < m; ++t) (*grad)[t] += b * gs[t];
        if (hess) {
          hess->diag.resize(m);
          for (std::size_t t = 0; t < m; ++t) hess->diag[t] = b * wn[t] / sd;
          hess->lowrank.emplace_back(-b / sd, wn);
          hess->lowrank.emplace_back(-b / sd, gs);
        }
      }
      return a * mu + b * sd + offset;
    }
    case Kind::sigmoid: {
      double acc = offset;
      if (hess) hess->diag.resize(m);
      for (std::size_t t = 0; t < m; ++t) {
        double s = detail::logistic(z[t] / tau);
        acc += weights[t] * s;
        double d1 = s * (1.0 - s);
        if (grad) (*grad)[t] = weights[t] * d1 / tau;
        if (hess) hess->diag[t] = weights[t] * d1 * (1.0 - 2.0 * s) / (tau * tau);
      }
      return acc;
    }
    case Kind::cvar: {
      auto split = risk::tail_split(z, weights, level);
      if (grad) *grad = split.tail_mass;
      return split.cvar + offset;
    }
    case Kind::utility: {
      detail::ExtendedCrra U{rho, 1e-3 * shift};
      double acc = U.u(shift) + offset;
      if (hess) hess->diag.resize(m);
      for (std::size_t t = 0; t < m; ++t) {
        double o = shift - z[t];
        acc -= weights[t] * U.u(o);
        if (grad) (*grad)[t] = weights[t] * U.du(o);
        if (hess) hess->diag[t] = -weights[t] * U.d2u(o);
      }
      return acc;
    }
    case Kind::system_sigmoid: {
      // 1 - prod(1 - S) per group; the z-Hessian keeps only its diagonal.
      int n_groups = groups.empty() ? 0 : *std::max_element(groups.begin(), groups.end()) + 1;
      std::vector<double> keep(static_cast<std::size_t>(n_groups), 1.0);
      std::vector<double> S(m);
      for (std::size_t t = 0; t < m; ++t) {
        S[t] = detail::logistic(z[t] / tau);
        keep[static_cast<std::size_t>(groups[t])] *= (1.0 - S[t]);
      }
      double acc = offset;
      for (int g = 0; g < n_groups; ++g) acc += weights[static_cast<std::size_t>(g)] * (1.0 - keep[static_cast<std::size_t>(g)]);
      if (grad || hess) {
        if (hess) hess->diag.resize(m);
        for (std::size_t t = 0; t < m; ++t) {
          auto g = static_cast<std::size_t>(groups[t]);
          // product over the other members of the group
          double others = 1.0;
          for (std::size_t t2 = 0; t2 < m; ++t2)
            if (t2 != t && groups[t2] == groups[t]) others *= (1.0 - S[t2]);
          double d1 = S[t] * (1.0 - S[t]);
          if (grad) (*grad)[t] = weights[g] * others * d1 / tau;
          if (hess) hess->diag[t] = weights[g] * others * d1 * (1.0 - 2.0 * S[t]) / (tau * tau);
        }
      }
      return acc;
    }
    case Kind::min: {
      std::size_t best = 0;
      for (std::size_t t = 1; t < m; ++t)
        if (z[t] < z[best]) best = t;
      if (grad) (*grad)[best] = 1.0;
      return z[best] + offset;
    }
  }
  return 0.0;
}

struct CompiledConstraint {
  Reduction reduction;
  std::string label;
  int source = -1;  // index into the problem's inequality list (-1: structural)
  int node = -1;
};

enum class ControlStructure { olsc, olmc };

inline const char* to_string(ControlStructure s) { return s == ControlStructure::olsc ? "olsc" : "olmc"; }

struct CompiledNlp {
  Index n = 0;
  Vec lower, upper;
  std::vector<Slice> layout;
  std::vector<ElementBlock> blocks;
  Index n_elements = 0;
  Reduction objective;
  std::vector<CompiledConstraint> equalities;
  std::vector<CompiledConstraint> inequalities;

  // Provenance
  std::string formulation = "det";
  ControlStructure structure = ControlStructure::olsc;
  Mat scenarios;
  std::vector<double> scenario_weights;
  std::vector<std::string> flags;
  std::string exactness;
  Vec initial_guess;
  // Sigmoid temperature halvings applied after the first solve.
  int anneal_rounds = 0;

  const Slice* slice(const std::string& name) const {
    for (const auto& s : layout)
      if (s.name == name) return &s;
    return nullptr;
  }

  const Slice& slice_of(Index i) const {
    for (const auto& s : layout)
      if (i >= s.offset && i < s.offset + s.size()) return s;
    throw ValidationError("decision index outside layout");
  }

  void add_block(ElementBlock b) {
    b.first = n_elements;
    n_elements += b.rows;
    blocks.push_back(std::move(b));
  }

  void eval_elements(const double* x, double* y, bool parallel = true) const {
    auto run = [&](std::size_t b) { blocks[b].eval(x, y + blocks[b].first); };
    if (parallel && n_elements >= 4096) parallel_for(blocks.size(), run);
    else
      for (std::size_t b = 0; b < blocks.size(); ++b) run(b);
  }

  std::vector<double> elements(const Vec& x) const {
    std::vector<double> y(static_cast<std::size_t>(n_elements));
    eval_elements(x.data(), y.data());
    return y;
  }

  static double reduce(const Reduction& r, const std::vector<double>& y, const Vec& x) {
    std::vector<double> z(r.terms.size());
    for (std::size_t t = 0; t < z.size(); ++t) z[t] = r.terms[t].value(y.data(), x.data());
    return r.eval(z, nullptr, nullptr);
  }

  double objective_value(const Vec& x) const { return reduce(objective, elements(x), x); }

  Vec equality_values(const Vec& x, const std::vector<double>& y) const {
    Vec v(static_cast<Index>(equalities.size()));
    for (std::size_t i = 0; i < equalities.size(); ++i) v(static_cast<Index>(i)) = reduce(equalities[i].reduction, y, x);
    return v;
  }
  Vec inequality_values(const Vec& x, const std::vector<double>& y) const {
    Vec v(static_cast<Index>(inequalities.size()));
    for (std::size_t i = 0; i < inequalities.size(); ++i)
      v(static_cast<Index>(i)) = reduce(inequalities[i].reduction, y, x);
    return v;
  }

  // max(|h|, g+, bound violation)
  double violation(const Vec& x) const {
    auto y = elements(x);
    double v = 0.0;
    Vec h = equality_values(x, y), g = inequality_values(x, y);
    if (h.size()) v = std::max(v, h.cwiseAbs().maxCoeff());
    if (g.size()) v = std::max(v, g.maxCoeff());
    for (Index i = 0; i < n; ++i) v = std::max({v, lower(i) - x(i), x(i) - upper(i)});
    return v;
  }

  void validate() const {
    require(lower.size() == n && upper.size() == n, "nlp bounds dimension mismatch");
    for (Index i = 0; i < n; ++i) require(lower(i) <= upper(i), "nlp bounds require lower <= upper");
    Index covered = 0;
    for (const auto& s : layout) {
      require(s.offset == covered, "nlp layout slices must be contiguous");
      covered += s.size();
    }
    require(covered == n, "nlp layout must cover the decision vector");
  }
};

// ---------------------------------------------------------------------------
// Worst-case (bi-level) programs
// ---------------------------------------------------------------------------

enum class InnerMode { vertex, ascent };

// Adversarial subproblem for one constraint: maximize g(q; outer point) over
// the product of crisp sets (q concatenated in binding order).
struct WcrSubproblem {
  std::string name;
  int constraint = -1;
  std::vector<CrispSet> sets;
  InnerMode mode = InnerMode::ascent;
  std::function<double(const Vec& q, const Vec& x)> g;

  Index dim() const {
    Index d = 0;
    for (const auto& s : sets) d += s.dim();
    return d;
  }
  Vec center() const {
    Vec c(dim());
    Index off = 0;
    for (const auto& s : sets) {
      c.segment(off, s.dim()) = s.nominal();
      off += s.dim();
    }
    return c;
  }
};

// Outer program rebuilt from a scenario pool (rows in binding order).
struct WcrProgram {
  std::vector<WcrSubproblem> subs;
  Mat initial_pool;
  std::function<CompiledNlp(const Mat& pool)> build_outer;
  // Maps a solution of one outer program onto a freshly built one.
  std::function<Vec(const CompiledNlp& from, const Vec& x, const CompiledNlp& to)> carry;
};

}  // namespace uccd
