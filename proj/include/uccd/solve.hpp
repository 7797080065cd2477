#pragma once

// Augmented-Lagrangian NLP solver with a projected Newton inner minimizer,
// adversarial inner maximization for worst-case constraints, the
// scenario-generation coordinator and a brute-force grid oracle.

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "uccd/common.hpp"
#include "uccd/nlp.hpp"
#include "uccd/parallel.hpp"
#include "uccd/rng.hpp"
#include "uccd/usets.hpp"

namespace uccd {

struct SolverOptions {
  int max_outer_iters = 60;
  int max_inner_iters = 200;
  double penalty_init = 10.0;
  double penalty_growth = 10.0;
  double penalty_max = 1e12;
  double constraint_tol = 1e-6;
  double gradient_tol = 1e-6;
  double fd_step = 1e-6;        // relative, Jacobian
  double hessian_step = 1e-4;   // relative, element second differences
  std::uint64_t seed = 0;
  int max_line_search = 40;
  int max_generation_rounds = 10;
  double certify_tol = 1e-5;    // worst-case certification slack
  int multistart = 9;           // inner ascent: center + 8 seeded points

  void validate() const {
    require(max_outer_iters >= 1 && max_inner_iters >= 1, "iteration limits must be >= 1");
    require(penalty_init > 0.0 && penalty_growth > 1.0 && penalty_max > penalty_init, "invalid penalty schedule");
    require(constraint_tol > 0.0 && gradient_tol > 0.0 && fd_step > 0.0 && hessian_step > 0.0,
            "tolerances and steps must be > 0");
    require(max_line_search >= 1, "max_line_search must be >= 1");
    require(certify_tol > 0.0, "certify_tol must be > 0");
    require(multistart >= 1, "multistart must be >= 1");
  }
};

enum class SolveStatus { optimal, infeasible, iteration_limit };

inline const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::optimal: return "optimal";
    case SolveStatus::infeasible: return "infeasible";
    case SolveStatus::iteration_limit: return "iteration-limit";
  }
  return "?";
}

struct TraceEntry {
  int outer = 0;
  int inner_iters = 0;
  double objective = 0.0;
  double violation = 0.0;
  double penalty = 0.0;
  double stationarity = 0.0;
};

struct WorstCase {
  std::string name;
  double value = 0.0;
  Vec q;
};

struct SolveReport {
  SolveStatus status = SolveStatus::iteration_limit;
  double objective = 0.0;
  Vec x;
  double max_violation = 0.0;
  double stationarity = 0.0;
  Vec equalities, inequalities;
  Vec lambda, mu;
  std::vector<TraceEntry> trace;
  double wall_time = 0.0;
  std::vector<std::string> flags;
  std::string message;
  // worst-case programs
  int generation_rounds = 0;
  std::vector<WorstCase> worst_case;
  Mat pool;

  bool optimal() const { return status == SolveStatus::optimal; }
};

namespace detail {

// Column coloring and per-row derivative bookkeeping for colored finite
// differences of the element rows.
struct Structure {
  std::vector<std::vector<Index>> deps;       // free dependencies per row
  std::vector<std::vector<int>> dep_color;
  std::vector<std::size_t> jac_offset;        // into flat Jacobian storage
  std::vector<std::size_t> hess_offset;       // into flat element-Hessian storage
  std::size_t jac_size = 0, hess_size = 0;
  std::vector<std::vector<Index>> colors;
  std::vector<std::vector<std::pair<Index, int>>> color_entries;  // (row, pos)
  struct PairEntries {
    int a = 0, b = 0;
    std::vector<std::tuple<Index, int, int>> entries;  // (row, pos in a, pos in b)
  };
  std::vector<PairEntries> pairs;
};

inline Structure analyze(const CompiledNlp& nlp, const std::vector<char>& fixed) {
  Structure s;
  const Index m = nlp.n_elements;
  s.deps.resize(static_cast<std::size_t>(m));
  for (const auto& b : nlp.blocks)
    for (Index r = 0; r < b.rows; ++r) {
      auto& d = s.deps[static_cast<std::size_t>(b.first + r)];
      for (Index j : b.deps[static_cast<std::size_t>(r)])
        if (!fixed[static_cast<std::size_t>(j)]) d.push_back(j);
      std::sort(d.begin(), d.end());
      d.erase(std::unique(d.begin(), d.end()), d.end());
    }
  std::vector<std::vector<Index>> col_rows(static_cast<std::size_t>(nlp.n));
  for (Index i = 0; i < m; ++i)
    for (Index j : s.deps[static_cast<std::size_t>(i)]) col_rows[static_cast<std::size_t>(j)].push_back(i);

  std::vector<int> color(static_cast<std::size_t>(nlp.n), -1);
  std::vector<Index> stamp;
  for (Index j = 0; j < nlp.n; ++j) {
    if (col_rows[static_cast<std::size_t>(j)].empty()) continue;
    for (Index r : col_rows[static_cast<std::size_t>(j)])
      for (Index k : s.deps[static_cast<std::size_t>(r)]) {
        int c = color[static_cast<std::size_t>(k)];
        if (c >= 0) stamp[static_cast<std::size_t>(c)] = j;
      }
    int c = 0;
    while (c < static_cast<int>(stamp.size()) && stamp[static_cast<std::size_t>(c)] == j) ++c;
    if (c == static_cast<int>(stamp.size())) stamp.push_back(-1);
    color[static_cast<std::size_t>(j)] = c;
  }
  int n_colors = static_cast<int>(stamp.size());
  s.colors.resize(static_cast<std::size_t>(n_colors));
  for (Index j = 0; j < nlp.n; ++j)
    if (color[static_cast<std::size_t>(j)] >= 0) s.colors[static_cast<std::size_t>(color[static_cast<std::size_t>(j)])].push_back(j);

  s.dep_color.resize(static_cast<std::size_t>(m));
  s.jac_offset.resize(static_cast<std::size_t>(m));
  s.hess_offset.resize(static_cast<std::size_t>(m));
  s.color_entries.resize(static_cast<std::size_t>(n_colors));
  std::vector<int> pair_index(static_cast<std::size_t>(n_colors) * static_cast<std::size_t>(n_colors), -1);
  for (Index i = 0; i < m; ++i) {
    const auto& d = s.deps[static_cast<std::size_t>(i)];
    auto& dc = s.dep_color[static_cast<std::size_t>(i)];
    s.jac_offset[static_cast<std::size_t>(i)] = s.jac_size;
    s.hess_offset[static_cast<std::size_t>(i)] = s.hess_size;
    s.jac_size += d.size();
    s.hess_size += d.size() * d.size();
    for (std::size_t p = 0; p < d.size(); ++p) {
      dc.push_back(color[static_cast<std::size_t>(d[p])]);
      s.color_entries[static_cast<std::size_t>(dc.back())].emplace_back(i, static_cast<int>(p));
    }
    for (std::size_t p = 0; p < d.size(); ++p)
      for (std::size_t q = p + 1; q < d.size(); ++q) {
        int a = std::min(dc[p], dc[q]), b = std::max(dc[p], dc[q]);
        auto key = static_cast<std::size_t>(a) * static_cast<std::size_t>(n_colors) + static_cast<std::size_t>(b);
        if (pair_index[key] < 0) {
          pair_index[key] = static_cast<int>(s.pairs.size());
          s.pairs.push_back({a, b, {}});
        }
        int pa = dc[p] == a ? static_cast<int>(p) : static_cast<int>(q);
        int pb = dc[p] == a ? static_cast<int>(q) : static_cast<int>(p);
        s.pairs[static_cast<std::size_t>(pair_index[key])].entries.emplace_back(i, pa, pb);
      }
  }
  return s;
}

inline double fd_h(double rel, double xj) { return rel * std::max(1.0, std::abs(xj)); }

// Central-difference Jacobian of the element rows.
inline void jacobian(const CompiledNlp& nlp, const Structure& st, const Vec& x, double rel,
                     std::vector<double>& J) {
  J.assign(st.jac_size, 0.0);
  const std::size_t m = static_cast<std::size_t>(nlp.n_elements);
  const std::size_t nc = st.colors.size();
  // Colors are independent passes; run them concurrently into private buffers.
  std::vector<std::vector<double>> yp(nc), ym(nc);
  std::vector<Vec> hstep(nc);
  parallel_for(nc, [&](std::size_t c) {
    Vec xp = x, xm = x;
    Vec h = Vec::Zero(nlp.n);
    for (Index j : st.colors[c]) {
      double hj = fd_h(rel, x(j));
      xp(j) = x(j) + hj;
      xm(j) = x(j) - hj;
      h(j) = xp(j) - xm(j);
    }
    yp[c].resize(m);
    ym[c].resize(m);
    nlp.eval_elements(xp.data(), yp[c].data(), false);
    nlp.eval_elements(xm.data(), ym[c].data(), false);
    hstep[c] = std::move(h);
  });
  for (std::size_t c = 0; c < nc; ++c)
    for (const auto& [i, p] : st.color_entries[c]) {
      Index j = st.deps[static_cast<std::size_t>(i)][static_cast<std::size_t>(p)];
      J[st.jac_offset[static_cast<std::size_t>(i)] + static_cast<std::size_t>(p)] =
          (yp[c][static_cast<std::size_t>(i)] - ym[c][static_cast<std::size_t>(i)]) / hstep[c](j);
    }
}

// Second differences of each element row over its own dependencies.
inline void element_hessians(const CompiledNlp& nlp, const Structure& st, const Vec& x,
                             const std::vector<double>& y0, double rel, std::vector<double>& H) {
  H.assign(st.hess_size, 0.0);
  const std::size_t m = static_cast<std::size_t>(nlp.n_elements);
  const std::size_t nc = st.colors.size();
  std::vector<std::vector<double>> yp(nc), ym(nc);
  std::vector<Vec> step(nc);
  parallel_for(nc, [&](std::size_t c) {
    Vec xp = x, xm = x, h = Vec::Zero(nlp.n);
    for (Index j : st.colors[c]) {
      double hj = fd_h(rel, x(j));
      xp(j) = x(j) + hj;
      xm(j) = x(j) - hj;
      h(j) = xp(j) - x(j);
    }
    yp[c].resize(m);
    ym[c].resize(m);
    nlp.eval_elements(xp.data(), yp[c].data(), false);
    nlp.eval_elements(xm.data(), ym[c].data(), false);
    step[c] = std::move(h);
  });
  for (std::size_t c = 0; c < nc; ++c)
    for (const auto& [i, p] : st.color_entries[c]) {
      auto ii = static_cast<std::size_t>(i);
      Index j = st.deps[ii][static_cast<std::size_t>(p)];
      std::size_t md = st.deps[ii].size();
      double h = step[c](j);
      H[st.hess_offset[ii] + static_cast<std::size_t>(p) * md + static_cast<std::size_t>(p)] =
          (yp[c][ii] - 2.0 * y0[ii] + ym[c][ii]) / (h * h);
    }
  parallel_for(st.pairs.size(), [&](std::size_t k) {
    const auto& pe = st.pairs[k];
    Vec xab = x;
    for (Index j : st.colors[static_cast<std::size_t>(pe.a)]) xab(j) = x(j) + step[static_cast<std::size_t>(pe.a)](j);
    for (Index j : st.colors[static_cast<std::size_t>(pe.b)]) xab(j) = x(j) + step[static_cast<std::size_t>(pe.b)](j);
    std::vector<double> yab(m);
    nlp.eval_elements(xab.data(), yab.data(), false);
    for (const auto& [i, pa, pb] : pe.entries) {
      auto ii = static_cast<std::size_t>(i);
      std::size_t md = st.deps[ii].size();
      Index ja = st.deps[ii][static_cast<std::size_t>(pa)], jb = st.deps[ii][static_cast<std::size_t>(pb)];
      double v = (yab[ii] - yp[static_cast<std::size_t>(pe.a)][ii] - yp[static_cast<std::size_t>(pe.b)][ii] + y0[ii]) /
                 (step[static_cast<std::size_t>(pe.a)](ja) * step[static_cast<std::size_t>(pe.b)](jb));
      H[st.hess_offset[ii] + static_cast<std::size_t>(pa) * md + static_cast<std::size_t>(pb)] = v;
      H[st.hess_offset[ii] + static_cast<std::size_t>(pb) * md + static_cast<std::size_t>(pa)] = v;
    }
  });
}

class SparseAccum {
 public:
  explicit SparseAccum(Index n) : buf_(static_cast<std::size_t>(n), 0.0), mark_(static_cast<std::size_t>(n), 0) {}
  void add(Index j, double v) {
    auto jj = static_cast<std::size_t>(j);
    if (!mark_[jj]) {
      mark_[jj] = 1;
      touched_.push_back(j);
    }
    buf_[jj] += v;
  }
  void take(std::vector<Index>& idx, std::vector<double>& val) {
    std::sort(touched_.begin(), touched_.end());
    idx = touched_;
    val.resize(idx.size());
    for (std::size_t k = 0; k < idx.size(); ++k) {
      auto jj = static_cast<std::size_t>(idx[k]);
      val[k] = buf_[jj];
      buf_[jj] = 0.0;
      mark_[jj] = 0;
    }
    touched_.clear();
  }

 private:
  std::vector<double> buf_;
  std::vector<char> mark_;
  std::vector<Index> touched_;
};

struct Multipliers {
  Vec lambda, mu;
  double rho = 10.0;
};

// Augmented Lagrangian (PHR form).
inline double al_value(const CompiledNlp& nlp, const Vec& x, const std::vector<double>& y, const Multipliers& m,
                       double* objective = nullptr) {
  double f = CompiledNlp::reduce(nlp.objective, y, x);
  if (objective) *objective = f;
  double acc = f;
  for (std::size_t i = 0; i < nlp.equalities.size(); ++i) {
    double e = CompiledNlp::reduce(nlp.equalities[i].reduction, y, x);
    acc += m.lambda(static_cast<Index>(i)) * e + 0.5 * m.rho * e * e;
  }
  for (std::size_t i = 0; i < nlp.inequalities.size(); ++i) {
    double g = CompiledNlp::reduce(nlp.inequalities[i].reduction, y, x);
    double mu = m.mu(static_cast<Index>(i));
    double t = std::max(0.0, mu + m.rho * g);
    acc += (t * t - mu * mu) / (2.0 * m.rho);
  }
  return acc;
}

using Triplets = std::vector<Eigen::Triplet<double>>;

// Newton matrix: sparse triplets plus rank-one terms s v v^T that are kept
// apart when v touches many free variables.
struct NewtonSystem {
  Index nf = 0;
  Triplets T;
  std::vector<double> s;
  std::vector<Vec> v;
};

inline constexpr std::size_t kRankOneWidth = 48;

inline void add_outer(NewtonSystem& N, const std::vector<Index>& idx, const std::vector<double>& val, double s,
                      const std::vector<Index>& free_index) {
  if (s == 0.0) return;
  std::size_t width = 0;
  for (std::size_t a = 0; a < idx.size(); ++a)
    width += free_index[static_cast<std::size_t>(idx[a])] >= 0 && val[a] != 0.0;
  if (width > kRankOneWidth) {
    Vec v = Vec::Zero(N.nf);
    for (std::size_t a = 0; a < idx.size(); ++a) {
      Index fa = free_index[static_cast<std::size_t>(idx[a])];
      if (fa >= 0) v(fa) += val[a];
    }
    N.s.push_back(s);
    N.v.push_back(std::move(v));
    return;
  }
  for (std::size_t a = 0; a < idx.size(); ++a) {
    Index fa = free_index[static_cast<std::size_t>(idx[a])];
    if (fa < 0 || val[a] == 0.0) continue;
    for (std::size_t b = 0; b < idx.size(); ++b) {
      Index fb = free_index[static_cast<std::size_t>(idx[b])];
      if (fb < 0 || val[b] == 0.0) continue;
      N.T.emplace_back(fa, fb, s * val[a] * val[b]);
    }
  }
}

// Gradient of the augmented Lagrangian and, when `T` is given, Hessian
// triplets restricted to the free index set.
inline void al_derivatives(const CompiledNlp& nlp, const Structure& st, const Vec& x, const std::vector<double>& y,
                           const std::vector<double>& J, const Multipliers& m, Vec& grad, std::vector<double>* dLdy,
                           NewtonSystem* T, const std::vector<Index>* free_index) {
  std::vector<double> dy(static_cast<std::size_t>(nlp.n_elements), 0.0);
  grad = Vec::Zero(nlp.n);
  SparseAccum acc(nlp.n);
  std::vector<Index> idx;
  std::vector<double> val;

  auto gz = [&](const LinearTerm& t, double scale) {
    for (const auto& [i, a] : t.y) {
      auto ii = static_cast<std::size_t>(i);
      const auto& d = st.deps[ii];
      for (std::size_t p = 0; p < d.size(); ++p) acc.add(d[p], scale * a * J[st.jac_offset[ii] + p]);
    }
    for (const auto& [j, b] : t.x) acc.add(j, scale * b);
  };

  auto handle = [&](const Reduction& r, double coef, double kappa) {
    if (coef == 0.0 && kappa == 0.0) return;
    std::vector<double> z(r.terms.size()), gr;
    for (std::size_t t = 0; t < z.size(); ++t) z[t] = r.terms[t].value(y.data(), x.data());
    ZHessian hz;
    r.eval(z, &gr, T ? &hz : nullptr);
    for (std::size_t t = 0; t < z.size(); ++t) {
      double w = coef * gr[t];
      if (w == 0.0) continue;
      for (const auto& [i, a] : r.terms[t].y) dy[static_cast<std::size_t>(i)] += w * a;
      for (const auto& [j, b] : r.terms[t].x) grad(j) += w * b;
    }
    if (!T) return;
    if (coef != 0.0) {
      if (!hz.diag.empty())
        for (std::size_t t = 0; t < z.size(); ++t) {
          if (hz.diag[t] == 0.0) continue;
          gz(r.terms[t], 1.0);
          acc.take(idx, val);
          add_outer(*T, idx, val, coef * hz.diag[t], *free_index);
        }
      for (const auto& [s, v] : hz.lowrank) {
        for (std::size_t t = 0; t < z.size(); ++t)
          if (v[t] != 0.0) gz(r.terms[t], v[t]);
        acc.take(idx, val);
        add_outer(*T, idx, val, coef * s, *free_index);
      }
    }
    if (kappa != 0.0) {
      for (std::size_t t = 0; t < z.size(); ++t)
        if (gr[t] != 0.0) gz(r.terms[t], gr[t]);
      acc.take(idx, val);
      add_outer(*T, idx, val, kappa, *free_index);
    }
  };

  handle(nlp.objective, 1.0, 0.0);
  for (std::size_t i = 0; i < nlp.equalities.size(); ++i) {
    double e = CompiledNlp::reduce(nlp.equalities[i].reduction, y, x);
    handle(nlp.equalities[i].reduction, m.lambda(static_cast<Index>(i)) + m.rho * e, m.rho);
  }
  for (std::size_t i = 0; i < nlp.inequalities.size(); ++i) {
    double g = CompiledNlp::reduce(nlp.inequalities[i].reduction, y, x);
    double t = m.mu(static_cast<Index>(i)) + m.rho * g;
    if (t > 0.0) handle(nlp.inequalities[i].reduction, t, m.rho);
  }
  for (Index i = 0; i < nlp.n_elements; ++i) {
    double w = dy[static_cast<std::size_t>(i)];
    if (w == 0.0) continue;
    const auto& d = st.deps[static_cast<std::size_t>(i)];
    for (std::size_t p = 0; p < d.size(); ++p) grad(d[p]) += w * J[st.jac_offset[static_cast<std::size_t>(i)] + p];
  }
  if (dLdy) *dLdy = std::move(dy);
}

inline void add_element_hessians(const Structure& st, const std::vector<double>& dLdy, const std::vector<double>& H,
                                 const std::vector<Index>& free_index, Triplets& T) {
  for (std::size_t i = 0; i < st.deps.size(); ++i) {
    double w = dLdy[i];
    if (w == 0.0) continue;
    const auto& d = st.deps[i];
    const std::size_t md = d.size();
    for (std::size_t a = 0; a < md; ++a) {
      Index fa = free_index[static_cast<std::size_t>(d[a])];
      if (fa < 0) continue;
      for (std::size_t b = 0; b < md; ++b) {
        Index fb = free_index[static_cast<std::size_t>(d[b])];
        double h = H[st.hess_offset[i] + a * md + b];
        if (fb < 0 || h == 0.0) continue;
        T.emplace_back(fa, fb, w * h);
      }
    }
  }
}

// Solves (H + delta I + sum s_k v_k v_k^T) d = -g, raising delta until the
// matrix is positive definite.  Rank-one terms go through the Woodbury
// identity with A = H + delta I and capacitance C = S^{-1} + W^T A^{-1} W;
// the full matrix is positive definite iff neg(A) + neg(C) - neg(S) = 0.
// Returns false if no shift works.
inline bool newton_direction(const NewtonSystem& N, const Vec& g, Vec& d) {
  const Index nf = N.nf;
  Eigen::SparseMatrix<double> H(nf, nf);
  H.setFromTriplets(N.T.begin(), N.T.end());
  double scale = 1.0;
  for (Index i = 0; i < nf; ++i) scale = std::max(scale, std::abs(H.coeff(i, i)));
  const Index k = static_cast<Index>(N.v.size());
  Mat W(nf, k);
  Vec S(k);
  Index negative = 0;
  for (Index j = 0; j < k; ++j) {
    W.col(j) = N.v[static_cast<std::size_t>(j)];
    S(j) = N.s[static_cast<std::size_t>(j)];
    negative += S(j) < 0.0;
    scale = std::max(scale, std::abs(S(j)) * W.col(j).cwiseAbs2().maxCoeff());
  }
  const bool dense = nf <= 400 || static_cast<double>(H.nonZeros()) > 0.05 * static_cast<double>(nf) * static_cast<double>(nf);

  auto attempt = [&](auto& factor) {
    if (factor.info() != Eigen::Success) return false;
    const Vec D = factor.vectorD();
    if (!(D.cwiseAbs().minCoeff() > 1e-13 * scale)) return false;
    Index neg = (D.array() < 0.0).count();
    if (k == 0 && neg > 0) return false;
    Vec r = factor.solve(-g);
    if (k > 0) {
      Mat Z = factor.solve(W);
      Mat C = W.transpose() * Z;
      C.diagonal() += S.cwiseInverse();
      Eigen::SelfAdjointEigenSolver<Mat> es(C, Eigen::EigenvaluesOnly);
      const Vec ev = es.eigenvalues();
      for (Index j = 0; j < k; ++j) {
        if (std::abs(ev(j)) <= 1e-12 * ev.cwiseAbs().maxCoeff()) return false;
        neg += ev(j) < 0.0;
      }
      if (neg != negative) return false;
      r -= Z * C.fullPivLu().solve(W.transpose() * r);
    }
    if (!r.allFinite()) return false;
    d = std::move(r);
    return true;
  };

  double delta = 0.0;
  for (int tries = 0; tries < 24; ++tries) {
    if (dense) {
      Mat Hd = Mat(H);
      Hd.diagonal().array() += delta;
      Eigen::LDLT<Mat> f(Hd);
      if (attempt(f)) return true;
    } else {
      Eigen::SparseMatrix<double> Hs = H;
      if (delta > 0.0) {
        Eigen::SparseMatrix<double> I(nf, nf);
        I.setIdentity();
        Hs += delta * I;
      }
      Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> f(Hs);
      if (attempt(f)) return true;
    }
    delta = delta == 0.0 ? 1e-12 * scale : delta * 10.0;
  }
  return false;
}

inline Vec clamp(const Vec& x, const Vec& lo, const Vec& hi) { return x.cwiseMax(lo).cwiseMin(hi); }

inline double projected_gradient_norm(const Vec& x, const Vec& g, const Vec& lo, const Vec& hi) {
  if (x.size() == 0) return 0.0;
  return (clamp(x - g, lo, hi) - x).cwiseAbs().maxCoeff();
}

inline std::string nonfinite_location(const CompiledNlp& nlp, const Vec& x, const std::vector<double>& y) {
  for (Index i = 0; i < x.size(); ++i)
    if (!std::isfinite(x(i))) return "decision slice '" + nlp.slice_of(i).name + "'";
  for (const auto& b : nlp.blocks)
    for (Index r = 0; r < b.rows; ++r)
      if (!std::isfinite(y[static_cast<std::size_t>(b.first + r)])) return "element block '" + b.label + "'";
  return "reduction";
}

struct InnerResult {
  int iters = 0;
  double stationarity = 0.0;
  bool converged = false;
};

// Projected Newton minimization of the augmented Lagrangian over the box.
inline InnerResult minimize_al(const CompiledNlp& nlp, const Structure& st, const std::vector<char>& fixed, Vec& x,
                               const Multipliers& m, double omega, const SolverOptions& opts) {
  InnerResult res;
  const Index n = nlp.n;
  std::vector<double> y = nlp.elements(x), J, H, dLdy;
  double f = al_value(nlp, x, y, m);
  if (!std::isfinite(f)) throw NumericalError("non-finite augmented Lagrangian at " + nonfinite_location(nlp, x, y));
  Vec g;
  for (int it = 0; it < opts.max_inner_iters; ++it) {
    jacobian(nlp, st, x, opts.fd_step, J);
    al_derivatives(nlp, st, x, y, J, m, g, nullptr, nullptr, nullptr);
    for (Index i = 0; i < n; ++i)
      if (fixed[static_cast<std::size_t>(i)]) g(i) = 0.0;
    res.stationarity = projected_gradient_norm(x, g, nlp.lower, nlp.upper);
    res.iters = it;
    if (res.stationarity <= omega) {
      res.converged = true;
      return res;
    }
    // Active set: fixed variables and bounds the gradient pushes against.
    const double eps = std::min(1e-3, res.stationarity);
    std::vector<Index> free_index(static_cast<std::size_t>(n), -1), free_list;
    for (Index i = 0; i < n; ++i) {
      if (fixed[static_cast<std::size_t>(i)]) continue;
      bool at_lo = x(i) <= nlp.lower(i) + eps && g(i) > 0.0;
      bool at_hi = x(i) >= nlp.upper(i) - eps && g(i) < 0.0;
      if (at_lo || at_hi) continue;
      free_index[static_cast<std::size_t>(i)] = static_cast<Index>(free_list.size());
      free_list.push_back(i);
    }
    const Index nf = static_cast<Index>(free_list.size());
    Vec d = Vec::Zero(n);
    bool newton = false;
    if (nf > 0) {
      NewtonSystem T;
      T.nf = nf;
      Vec gtmp;
      al_derivatives(nlp, st, x, y, J, m, gtmp, &dLdy, &T, &free_index);
      element_hessians(nlp, st, x, y, opts.hessian_step, H);
      add_element_hessians(st, dLdy, H, free_index, T.T);
      Vec gf(nf), df;
      for (Index k = 0; k < nf; ++k) gf(k) = g(free_list[static_cast<std::size_t>(k)]);
      if (newton_direction(T, gf, df) && gf.dot(df) < 0.0) {
        for (Index k = 0; k < nf; ++k) d(free_list[static_cast<std::size_t>(k)]) = df(k);
        newton = true;
      }
    }
    if (!newton) {
      for (Index i = 0; i < n; ++i)
        if (!fixed[static_cast<std::size_t>(i)]) d(i) = -g(i);
    }
    // Projected backtracking (Armijo along the projection arc).
    double alpha = 1.0;
    bool accepted = false;
    for (int ls = 0; ls < opts.max_line_search; ++ls) {
      Vec xt = clamp(x + alpha * d, nlp.lower, nlp.upper);
      for (Index i = 0; i < n; ++i)
        if (fixed[static_cast<std::size_t>(i)]) xt(i) = x(i);
      std::vector<double> yt = nlp.elements(xt);
      double ft = al_value(nlp, xt, yt, m);
      double decrease = g.dot(xt - x);
      if (std::isfinite(ft) && ft <= f + 1e-4 * decrease) {
        bool tiny = (xt - x).cwiseAbs().maxCoeff() <= 1e-15 * (1.0 + x.cwiseAbs().maxCoeff());
        x = std::move(xt);
        y = std::move(yt);
        double prev = f;
        f = ft;
        accepted = true;
        if (tiny && std::abs(prev - f) <= 1e-16 * (1.0 + std::abs(f))) return res;
        break;
      }
      alpha *= 0.5;
    }
    if (!accepted) return res;  // stalled: caller decides from stationarity
  }
  jacobian(nlp, st, x, opts.fd_step, J);
  al_derivatives(nlp, st, x, y, J, m, g, nullptr, nullptr, nullptr);
  for (Index i = 0; i < n; ++i)
    if (fixed[static_cast<std::size_t>(i)]) g(i) = 0.0;
  res.stationarity = projected_gradient_norm(x, g, nlp.lower, nlp.upper);
  res.converged = res.stationarity <= omega;
  return res;
}

}  // namespace detail

// Augmented-Lagrangian solve of a compiled NLP from x0.  `warm` carries
// multipliers and penalty over from an earlier solve of the same layout.
inline SolveReport solve_nlp(const CompiledNlp& nlp, const Vec& x0, const SolverOptions& opts = {},
                             const SolveReport* warm = nullptr) {
  opts.validate();
  nlp.validate();
  require(x0.size() == nlp.n, "solve_nlp: x0 dimension does not match the decision layout");
  auto t_start = std::chrono::steady_clock::now();
  SolveReport rep;
  rep.flags = nlp.flags;

  std::vector<char> fixed(static_cast<std::size_t>(nlp.n), 0);
  for (Index i = 0; i < nlp.n; ++i) fixed[static_cast<std::size_t>(i)] = nlp.lower(i) == nlp.upper(i);
  Vec x = detail::clamp(x0, nlp.lower, nlp.upper);
  {
    auto y = nlp.elements(x);
    for (double v : y)
      if (!std::isfinite(v)) throw NumericalError("non-finite evaluation at x0 in " + detail::nonfinite_location(nlp, x, y));
  }
  auto st = detail::analyze(nlp, fixed);

  detail::Multipliers m;
  m.lambda = Vec::Zero(static_cast<Index>(nlp.equalities.size()));
  m.mu = Vec::Zero(static_cast<Index>(nlp.inequalities.size()));
  m.rho = opts.penalty_init;
  if (warm && warm->lambda.size() == m.lambda.size() && warm->mu.size() == m.mu.size() && !warm->trace.empty()) {
    m.lambda = warm->lambda;
    m.mu = warm->mu;
    m.rho = std::max(m.rho, warm->trace.back().penalty);
  }

  auto measure = [&](const Vec& xv, Vec& h, Vec& g) {
    auto y = nlp.elements(xv);
    h = nlp.equality_values(xv, y);
    g = nlp.inequality_values(xv, y);
    double v = 0.0;
    if (h.size()) v = std::max(v, h.cwiseAbs().maxCoeff());
    if (g.size()) v = std::max(v, g.maxCoeff());
    return v;
  };

  Vec h, g;
  double prev_violation = measure(x, h, g);
  rep.status = SolveStatus::iteration_limit;
  for (int k = 0; k < opts.max_outer_iters; ++k) {
    double omega = std::max(opts.gradient_tol, std::pow(10.0, -(k + 1)));
    const Vec x_start = x;
    auto inner = detail::minimize_al(nlp, st, fixed, x, m, omega, opts);
    double violation = measure(x, h, g);
    // Starting infeasible and ending worse means the penalty is too weak to
    // hold the constraint (bounded constraint functions can flatten out far
    // from feasibility).  Discard the step and retry with a larger penalty.
    if (prev_violation > opts.constraint_tol && violation > prev_violation * (1.0 + 1e-9)) {
      TraceEntry te;
      te.outer = k;
      te.inner_iters = inner.iters;
      te.objective = nlp.objective_value(x);
      te.violation = violation;
      te.penalty = m.rho;
      te.stationarity = inner.stationarity;
      rep.trace.push_back(te);
      x = x_start;
      violation = measure(x, h, g);
      m.rho *= opts.penalty_growth;
      if (m.rho > opts.penalty_max) {
        rep.status = SolveStatus::infeasible;
        rep.message = "penalty exceeded its cap with constraint violation " + std::to_string(violation);
        break;
      }
      continue;
    }
    for (Index i = 0; i < h.size(); ++i) m.lambda(i) += m.rho * h(i);
    for (Index i = 0; i < g.size(); ++i) m.mu(i) = std::max(0.0, m.mu(i) + m.rho * g(i));
    TraceEntry te;
    te.outer = k;
    te.inner_iters = inner.iters;
    te.objective = nlp.objective_value(x);
    te.violation = violation;
    te.penalty = m.rho;
    te.stationarity = inner.stationarity;
    rep.trace.push_back(te);
    rep.stationarity = inner.stationarity;
    if (violation <= opts.constraint_tol && inner.converged && omega <= opts.gradient_tol) {
      rep.status = SolveStatus::optimal;
      break;
    }
    if (violation > opts.constraint_tol && violation > 0.25 * prev_violation) {
      m.rho *= opts.penalty_growth;
      if (m.rho > opts.penalty_max) {
        rep.status = SolveStatus::infeasible;
        rep.message = "penalty exceeded its cap with constraint violation " + std::to_string(violation);
        break;
      }
    }
    prev_violation = violation;
  }
  if (rep.status == SolveStatus::iteration_limit && rep.message.empty())
    rep.message = "outer iteration limit reached";
  rep.x = x;
  rep.objective = nlp.objective_value(x);
  rep.max_violation = measure(x, h, g);
  rep.equalities = h;
  rep.inequalities = g;
  rep.lambda = m.lambda;
  rep.mu = m.mu;
  rep.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return rep;
}

// Smoothed chance constraints: solve, then halve every sigmoid temperature and
// warm-start again (point, multipliers and penalty), `nlp.anneal_rounds` times.
inline SolveReport solve_annealed(const CompiledNlp& nlp, const Vec& x0, const SolverOptions& opts = {}) {
  SolveReport rep = solve_nlp(nlp, x0, opts);
  if (nlp.anneal_rounds <= 0) return rep;
  CompiledNlp work = nlp;
  double total = rep.wall_time;
  auto trace = rep.trace;
  for (int r = 0; r < nlp.anneal_rounds; ++r) {
    auto cool = [](Reduction& red) {
      if (red.kind == Reduction::Kind::sigmoid || red.kind == Reduction::Kind::system_sigmoid) red.tau *= 0.5;
    };
    for (auto& c : work.inequalities) cool(c.reduction);
    cool(work.objective);
    SolveReport prev = rep;
    rep = solve_nlp(work, prev.x, opts, &prev);
    total += rep.wall_time;
    trace.insert(trace.end(), rep.trace.begin(), rep.trace.end());
  }
  rep.trace = std::move(trace);
  rep.wall_time = total;
  return rep;
}

// ---------------------------------------------------------------------------
// Inner maximization
// ---------------------------------------------------------------------------

struct InnerMax {
  Vec q;
  double value = -std::numeric_limits<double>::infinity();
};

namespace detail {

inline bool lex_less(const Vec& a, const Vec& b) {
  for (Index i = 0; i < a.size(); ++i) {
    if (a(i) < b(i)) return true;
    if (a(i) > b(i)) return false;
  }
  return false;
}

// Cartesian product of per-set vertex lists, first set varying slowest.
inline Mat product_vertices(const std::vector<CrispSet>& sets) {
  std::vector<Mat> lists;
  Index total = 1, dim = 0;
  for (const auto& s : sets) {
    if (!s.vertex_enumerable()) throw ValidationError("vertex mode requires box or polytope sets");
    lists.push_back(enumerate_vertices(s).points);
    total *= lists.back().rows();
    dim += s.dim();
  }
  Mat out(total, dim);
  for (Index r = 0; r < total; ++r) {
    Index rem = r, col = dim;
    for (std::size_t k = lists.size(); k-- > 0;) {
      const Mat& L = lists[k];
      Index pick = rem % L.rows();
      rem /= L.rows();
      col -= L.cols();
      out.row(r).segment(col, L.cols()) = L.row(pick);
    }
  }
  return out;
}

// Ascent parameterization: boxes and ellipsoids use q directly, polytopes use
// barycentric weights on their vertices.
struct AscentSpace {
  const std::vector<CrispSet>* sets;
  Index wdim = 0;
  std::vector<Index> woff, qoff;

  explicit AscentSpace(const std::vector<CrispSet>& s) : sets(&s) {
    Index q = 0;
    for (const auto& set : s) {
      woff.push_back(wdim);
      qoff.push_back(q);
      wdim += set.kind == CrispSet::Kind::polytope ? set.vertices.rows() : set.dim();
      q += set.dim();
    }
  }
  Vec to_q(const Vec& w) const {
    Index qd = 0;
    for (const auto& s : *sets) qd += s.dim();
    Vec q(qd);
    for (std::size_t k = 0; k < sets->size(); ++k) {
      const auto& s = (*sets)[k];
      if (s.kind == CrispSet::Kind::polytope)
        q.segment(qoff[k], s.dim()) = polytope_point(s, w.segment(woff[k], s.vertices.rows()));
      else
        q.segment(qoff[k], s.dim()) = w.segment(woff[k], s.dim());
    }
    return q;
  }
  Vec project_w(const Vec& w) const {
    Vec out = w;
    for (std::size_t k = 0; k < sets->size(); ++k) {
      const auto& s = (*sets)[k];
      if (s.kind == CrispSet::Kind::polytope)
        out.segment(woff[k], s.vertices.rows()) = project_simplex(w.segment(woff[k], s.vertices.rows()));
      else
        out.segment(woff[k], s.dim()) = project(s, w.segment(woff[k], s.dim()));
    }
    return out;
  }
  Vec from_start(std::size_t start, std::uint64_t seed) const {
    Vec w(wdim);
    for (std::size_t k = 0; k < sets->size(); ++k) {
      const auto& s = (*sets)[k];
      if (s.kind == CrispSet::Kind::polytope) {
        Index nv = s.vertices.rows();
        Vec lam = Vec::Constant(nv, 1.0 / static_cast<double>(nv));
        if (start > 0) {
          for (Index i = 0; i < nv; ++i) lam(i) = -std::log(rng::uniform(seed, 1000 + k, start * 64 + static_cast<std::size_t>(i)));
          lam /= lam.sum();
        }
        w.segment(woff[k], nv) = lam;
      } else {
        w.segment(woff[k], s.dim()) = start == 0 ? s.nominal() : random_point(s, seed + 7919 * k, start);
      }
    }
    return w;
  }
};

}  // namespace detail

inline InnerMax inner_maximize(const WcrSubproblem& sub, const Vec& outer, const SolverOptions& opts = {}) {
  require(static_cast<bool>(sub.g), "inner_maximize: subproblem has no evaluator");
  for (const auto& s : sub.sets) {
    s.validate();
    if (s.kind == CrispSet::Kind::box)
      require(s.halfwidth.allFinite(), "inner_maximize: unbounded set");
  }
  InnerMax best;
  if (sub.mode == InnerMode::vertex) {
    Mat V = detail::product_vertices(sub.sets);
    for (Index r = 0; r < V.rows(); ++r) {
      Vec q = V.row(r).transpose();
      double v = sub.g(q, outer);
      if (best.q.size() == 0) {
        best = {q, v};
        continue;
      }
      double tie = 1e-12 * std::max(1.0, std::abs(best.value));
      if (v > best.value + tie || (v >= best.value - tie && detail::lex_less(q, best.q))) best = {q, v};
    }
    return best;
  }
  detail::AscentSpace space(sub.sets);
  auto value_w = [&](const Vec& w) { return sub.g(space.to_q(w), outer); };
  for (int start = 0; start < opts.multistart; ++start) {
    Vec w = space.project_w(space.from_start(static_cast<std::size_t>(start), opts.seed));
    double fw = value_w(w);
    double step = 1.0;
    for (int it = 0; it < 200; ++it) {
      Vec grad(w.size());
      for (Index i = 0; i < w.size(); ++i) {
        double h = opts.fd_step * std::max(1.0, std::abs(w(i)));
        Vec wp = w, wm = w;
        wp(i) += h;
        wm(i) -= h;
        grad(i) = (sub.g(space.to_q(wp), outer) - sub.g(space.to_q(wm), outer)) / (wp(i) - wm(i));
      }
      if (!grad.allFinite() || grad.norm() == 0.0) break;
      bool moved = false;
      double t = std::min(1.0, 4.0 * step);
      for (int ls = 0; ls < opts.max_line_search; ++ls) {
        Vec wt = space.project_w(w + t * grad);
        double ft = value_w(wt);
        if (std::isfinite(ft) && ft >= fw + 1e-4 * grad.dot(wt - w) && (wt - w).norm() > 0.0) {
          double gain = ft - fw;
          moved = (wt - w).norm() > 1e-12 * (1.0 + w.norm()) && gain > 1e-15 * (1.0 + std::abs(fw));
          w = wt;
          fw = ft;
          step = t;
          break;
        }
        t *= 0.5;
      }
      if (!moved) break;
    }
    Vec q = space.to_q(w);
    if (fw > best.value || best.q.size() == 0) {
      best.value = fw;
      best.q = q;
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Scenario generation
// ---------------------------------------------------------------------------

inline SolveReport solve_wcr(const WcrProgram& prog, const SolverOptions& opts = {}) {
  require(static_cast<bool>(prog.build_outer), "solve_wcr: program has no outer builder");
  auto t_start = std::chrono::steady_clock::now();
  Mat pool = prog.initial_pool;
  CompiledNlp nlp = prog.build_outer(pool);
  Vec x = nlp.initial_guess;
  SolveReport rep;
  std::vector<TraceEntry> trace;
  for (int round = 0;; ++round) {
    rep = solve_nlp(nlp, x, opts);
    trace.insert(trace.end(), rep.trace.begin(), rep.trace.end());
    rep.generation_rounds = round;
    if (!rep.optimal()) break;
    // Adversarial pass doubles as the mandatory certification.
    rep.worst_case.clear();
    std::vector<Vec> additions;
    for (const auto& sub : prog.subs) {
      InnerMax im = inner_maximize(sub, rep.x, opts);
      rep.worst_case.push_back({sub.name, im.value, im.q});
      if (im.value <= opts.certify_tol) continue;
      bool known = false;
      for (Index r = 0; r < pool.rows() && !known; ++r)
        known = (pool.row(r).transpose() - im.q).cwiseAbs().maxCoeff() <= 1e-12 * (1.0 + im.q.cwiseAbs().maxCoeff());
      for (const auto& a : additions)
        known = known || (a - im.q).cwiseAbs().maxCoeff() <= 1e-12 * (1.0 + im.q.cwiseAbs().maxCoeff());
      if (!known) additions.push_back(im.q);
    }
    bool violated = std::any_of(rep.worst_case.begin(), rep.worst_case.end(),
                                [&](const WorstCase& w) { return w.value > opts.certify_tol; });
    if (!violated) break;
    if (additions.empty() || round >= opts.max_generation_rounds) {
      rep.status = SolveStatus::iteration_limit;
      auto worst = std::max_element(rep.worst_case.begin(), rep.worst_case.end(),
                                    [](const WorstCase& a, const WorstCase& b) { return a.value < b.value; });
      rep.message = "scenario generation stopped with violation: " + worst->name + " = " + std::to_string(worst->value);
      break;
    }
    Mat grown(pool.rows() + static_cast<Index>(additions.size()), pool.cols());
    grown.topRows(pool.rows()) = pool;
    for (std::size_t a = 0; a < additions.size(); ++a) grown.row(pool.rows() + static_cast<Index>(a)) = additions[a].transpose();
    pool = std::move(grown);
    CompiledNlp next = prog.build_outer(pool);
    x = prog.carry ? prog.carry(nlp, rep.x, next) : next.initial_guess;
    nlp = std::move(next);
  }
  rep.trace = std::move(trace);
  rep.pool = pool;
  rep.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return rep;
}

// ---------------------------------------------------------------------------
// Grid oracle
// ---------------------------------------------------------------------------

struct OracleResult {
  bool feasible = false;
  Vec x;
  double value = std::numeric_limits<double>::infinity();
  Vec cell;            // grid spacing per dimension (0 for collapsed dimensions)
  std::size_t evaluated = 0;
};

// Exhaustive tensor-grid scan.  Points whose max violation is <= tol are
// admitted; ties keep the lexicographically smallest point.
inline OracleResult grid_oracle(const CompiledNlp& nlp, const Vec& lower, const Vec& upper, int resolution,
                                double tol = 1e-9) {
  require(nlp.n <= 6, "grid_oracle: decision dimension must be <= 6");
  require(resolution >= 3, "grid_oracle: resolution must be >= 3");
  require(lower.size() == nlp.n && upper.size() == nlp.n, "grid_oracle: bounds dimension mismatch");
  require(lower.allFinite() && upper.allFinite(), "grid_oracle: bounds must be finite");
  const Index n = nlp.n;
  std::vector<std::vector<double>> axes(static_cast<std::size_t>(n));
  OracleResult out;
  out.cell = Vec::Zero(n);
  std::size_t total = 1;
  for (Index i = 0; i < n; ++i) {
    require(lower(i) <= upper(i), "grid_oracle: lower must not exceed upper");
    auto& ax = axes[static_cast<std::size_t>(i)];
    if (lower(i) == upper(i)) {
      ax.push_back(lower(i));
    } else {
      out.cell(i) = (upper(i) - lower(i)) / (resolution - 1);
      for (int k = 0; k < resolution; ++k) ax.push_back(lower(i) + (upper(i) - lower(i)) * k / (resolution - 1));
      ax.back() = upper(i);
    }
    total *= ax.size();
  }
  // Split on the slowest axis; each chunk keeps its own best, merged in order.
  const std::size_t outer = axes.empty() ? 1 : axes[0].size();
  const std::size_t inner = total / outer;
  struct Best {
    bool ok = false;
    double value = std::numeric_limits<double>::infinity();
    Vec x;
  };
  std::vector<Best> bests(outer);
  parallel_for(outer, [&](std::size_t o) {
    Vec x(n);
    std::vector<double> y(static_cast<std::size_t>(nlp.n_elements));
    Best b;
    for (std::size_t r = 0; r < inner; ++r) {
      std::size_t rem = r;
      for (Index i = n; i-- > 1;) {
        const auto& ax = axes[static_cast<std::size_t>(i)];
        x(i) = ax[rem % ax.size()];
        rem /= ax.size();
      }
      if (n > 0) x(0) = axes[0][o];
      nlp.eval_elements(x.data(), y.data(), false);
      double viol = 0.0;
      for (const auto& c : nlp.equalities) viol = std::max(viol, std::abs(CompiledNlp::reduce(c.reduction, y, x)));
      if (viol > tol) continue;
      for (const auto& c : nlp.inequalities) viol = std::max(viol, CompiledNlp::reduce(c.reduction, y, x));
      if (viol > tol) continue;
      double f = CompiledNlp::reduce(nlp.objective, y, x);
      if (std::isfinite(f) && f < b.value) {
        b.ok = true;
        b.value = f;
        b.x = x;
      }
    }
    bests[o] = std::move(b);
  });
  out.evaluated = total;
  for (auto& b : bests)
    if (b.ok && b.value < out.value) {
      out.feasible = true;
      out.value = b.value;
      out.x = b.x;
    }
  return out;
}

inline OracleResult grid_oracle(const CompiledNlp& nlp, int resolution, double tol = 1e-9) {
  return grid_oracle(nlp, nlp.lower, nlp.upper, resolution, tol);
}

}  // namespace uccd
