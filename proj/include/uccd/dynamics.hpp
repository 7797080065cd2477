#pragma once

// Euler-Maruyama path ensembles for dxi = f dt + b dw and the continuous
// algebraic Riccati equation behind infinite-horizon LQR feedback.

#include <Eigen/Eigenvalues>

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "uccd/common.hpp"
#include "uccd/model.hpp"
#include "uccd/parallel.hpp"
#include "uccd/rng.hpp"
#include "uccd/usets.hpp"

namespace uccd {

// ---------------------------------------------------------------------------
// SDE ensembles
// ---------------------------------------------------------------------------

struct SdeModel {
  Index n_states = 0;
  Index n_noise = 0;
  std::function<void(double t, const Vec& x, Vec& f)> drift;
  // n_states x n_noise; left empty for zero diffusion.
  std::function<void(double t, const Vec& x, Mat& b)> diffusion;

  void validate() const {
    require(n_states >= 1, "SDE needs at least one state");
    require(n_noise >= 0, "noise dimension must be >= 0");
    require(static_cast<bool>(drift), "SDE drift is missing");
    require(n_noise == 0 || static_cast<bool>(diffusion), "SDE diffusion is missing");
  }

  static SdeModel linear(Mat A, Mat Bw = Mat()) {
    require(A.rows() == A.cols() && A.rows() >= 1, "drift matrix must be square");
    require(Bw.size() == 0 || Bw.rows() == A.rows(), "diffusion rows must match the state count");
    SdeModel m;
    m.n_states = A.rows();
    m.n_noise = Bw.cols();
    m.drift = [A](double, const Vec& x, Vec& f) { f.noalias() = A * x; };
    if (Bw.size() > 0) m.diffusion = [Bw](double, const Vec&, Mat& b) { b = Bw; };
    return m;
  }

  // Drift from a problem's dynamics at nominal data with zero-order-held
  // controls u (n_nodes x n_u on the problem grid) and statics p; diffusion
  // from the problem's diffusion spec.
  static SdeModel from_problem(std::shared_ptr<const UccdProblem> pb, Mat u, Vec p) {
    require(u.rows() == static_cast<Index>(pb->grid.size()) && u.cols() == pb->n_controls(),
            "control matrix shape mismatch");
    SdeModel m;
    m.n_states = pb->n_states();
    m.n_noise = pb->dynamics.n_noise();
    auto real = std::make_shared<Realization>(pb->nominal_realization());
    auto ps = std::make_shared<std::vector<double>>(detail::realized_statics(*pb, p, *real));
    auto node_at = [pb](double t) {
      const auto& nodes = pb->grid.nodes();
      auto it = std::upper_bound(nodes.begin(), nodes.end(), t);
      std::size_t k = it == nodes.begin() ? 0 : static_cast<std::size_t>(it - nodes.begin()) - 1;
      return std::min(k, nodes.size() - 1);
    };
    m.drift = [pb, u, real, ps, node_at](double t, const Vec& x, Vec& f) {
      std::size_t k = node_at(t);
      EvalContext ctx{&pb->data, real.get(), *ps};
      Vec uk = u.row(static_cast<Index>(k)).transpose();
      double zero = 0.0;
      f.resize(pb->n_states());
      eval_dynamics(pb->dynamics, x.data(), uk.size() > 0 ? uk.data() : &zero, ctx, k, f.data());
    };
    if (m.n_noise > 0)
      m.diffusion = [pb, real, ps, node_at](double t, const Vec&, Mat& b) {
        std::size_t k = node_at(t);
        EvalContext ctx{&pb->data, real.get(), *ps};
        const auto& D = pb->dynamics.diffusion;
        b.resize(D.rows, D.cols);
        for (Index r = 0; r < D.rows; ++r)
          for (Index c = 0; c < D.cols; ++c) b(r, c) = ctx(D(r, c), k);
      };
    return m;
  }
};

struct PathEnsemble {
  std::vector<double> times;
  std::vector<Mat> paths;      // one n_nodes x n_states matrix per path
  std::vector<char> diverged;  // non-finite state encountered
  Mat mean;                    // n_nodes x n_states over non-diverged paths
  Mat std;                     // population std over non-diverged paths

  Index n_paths() const { return static_cast<Index>(paths.size()); }
  Index n_diverged() const { return static_cast<Index>(std::count(diverged.begin(), diverged.end(), 1)); }
};

namespace detail {

inline void ensemble_stats(PathEnsemble& e, Index ns) {
  const Index n = static_cast<Index>(e.times.size());
  e.mean = Mat::Zero(n, ns);
  e.std = Mat::Zero(n, ns);
  Index used = 0;
  for (std::size_t i = 0; i < e.paths.size(); ++i)
    if (!e.diverged[i]) {
      e.mean += e.paths[i];
      ++used;
    }
  if (used == 0) {
    e.mean.setConstant(std::numeric_limits<double>::quiet_NaN());
    e.std.setConstant(std::numeric_limits<double>::quiet_NaN());
    return;
  }
  e.mean /= static_cast<double>(used);
  for (std::size_t i = 0; i < e.paths.size(); ++i)
    if (!e.diverged[i]) e.std += (e.paths[i] - e.mean).cwiseAbs2();
  e.std = (e.std / static_cast<double>(used)).cwiseSqrt();
}

}  // namespace detail

// x_{k+1} = x_k + f(t_k, x_k) h + b(t_k, x_k) sqrt(h) z_k.  Initial states come
// from `x0`, one model per state (a one-point discrete model fixes a state).
// Path i draws from stream i, so results do not depend on thread count.
inline PathEnsemble euler_maruyama(const SdeModel& model, const std::vector<StochasticModel>& x0,
                                   const std::vector<double>& grid, Index n_paths, std::uint64_t seed) {
  model.validate();
  require(n_paths >= 1, "n_paths must be >= 1");
  require(grid.size() >= 2, "grid needs at least 2 nodes");
  for (std::size_t k = 0; k + 1 < grid.size(); ++k) require(grid[k + 1] > grid[k], "grid must be increasing");
  require(static_cast<Index>(x0.size()) == model.n_states, "one initial-state model per state is required");
  const Index ns = model.n_states, nw = model.n_noise;
  const std::size_t N = grid.size();
  PathEnsemble e;
  e.times = grid;
  e.paths.assign(static_cast<std::size_t>(n_paths), Mat());
  e.diverged.assign(static_cast<std::size_t>(n_paths), 0);
  // Initial states and increments use disjoint counter ranges per stream.
  const std::uint64_t x0_base = 0, dw_base = static_cast<std::uint64_t>(ns);
  parallel_for(
      static_cast<std::size_t>(n_paths),
      [&](std::size_t i) {
        Mat X(static_cast<Index>(N), ns);
        Vec x(ns), f(ns);
        Mat b;
        for (Index c = 0; c < ns; ++c)
          x(c) = x0[static_cast<std::size_t>(c)].draw(seed, i, x0_base + static_cast<std::uint64_t>(c));
        X.row(0) = x.transpose();
        bool bad = false;
        for (std::size_t k = 0; k + 1 < N; ++k) {
          const double t = grid[k], h = grid[k + 1] - grid[k];
          model.drift(t, x, f);
          Vec next = x + h * f;
          if (nw > 0) {
            model.diffusion(t, x, b);
            Vec z(nw);
            for (Index j = 0; j < nw; ++j)
              z(j) = rng::normal(seed, i, dw_base + static_cast<std::uint64_t>(k) * nw + j);
            next.noalias() += std::sqrt(h) * (b * z);
          }
          if (!next.allFinite()) bad = true;
          x = next;
          X.row(static_cast<Index>(k + 1)) = x.transpose();
        }
        e.paths[i] = std::move(X);
        e.diverged[i] = bad ? 1 : 0;
      },
      64);
  detail::ensemble_stats(e, ns);
  return e;
}

// ---------------------------------------------------------------------------
// LQR
// ---------------------------------------------------------------------------

struct LqrSpec {
  Mat A, B, Q, R;
  Vec reference;

  Index n() const { return A.rows(); }
  Index m() const { return B.cols(); }

  void validate() const {
    const Index n = A.rows();
    require(n >= 1 && A.cols() == n, "A must be square");
    require(B.rows() == n && B.cols() >= 1, "B must be n x m");
    require(Q.rows() == n && Q.cols() == n, "Q must be n x n");
    require(R.rows() == B.cols() && R.cols() == B.cols(), "R must be m x m");
    require(reference.size() == 0 || reference.size() == n, "reference must have n entries");
    require(A.allFinite() && B.allFinite() && Q.allFinite() && R.allFinite(), "LQR matrices must be finite");
    require((Q - Q.transpose()).norm() <= 1e-12 * (1.0 + Q.norm()), "Q must be symmetric");
    require((R - R.transpose()).norm() <= 1e-12 * (1.0 + R.norm()), "R must be symmetric");
    Eigen::SelfAdjointEigenSolver<Mat> eq(Q), er(R);
    require(eq.eigenvalues().minCoeff() >= -1e-12 * (1.0 + Q.norm()), "Q must be positive semidefinite");
    require(er.eigenvalues().minCoeff() > 0.0, "R must be positive definite");
  }

  static LqrSpec scalar(double a, double b, double q, double r) {
    LqrSpec s;
    s.A = Mat::Constant(1, 1, a);
    s.B = Mat::Constant(1, 1, b);
    s.Q = Mat::Constant(1, 1, q);
    s.R = Mat::Constant(1, 1, r);
    s.reference = Vec::Zero(1);
    return s;
  }
};

struct CareSolution {
  Mat P;
  Mat K;          // R^-1 B^T P
  double residual = 0.0;
  int iterations = 0;
  Vec closed_loop_real;  // real parts of eig(A - B K)
};

namespace detail {

// Solves M^T X + X M + C = 0 by the Kronecker form (small dense systems).
inline Mat lyapunov(const Mat& M, const Mat& C) {
  const Index n = M.rows();
  require(n <= 30, "Lyapunov solver is limited to 30 states");
  const Mat I = Mat::Identity(n, n);
  Mat K = Mat::Zero(n * n, n * n);
  // vec(M^T X) = (I kron M^T) vec(X); vec(X M) = (M^T kron I) vec(X)
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) {
      K.block(i * n, j * n, n, n) += I(i, j) * M.transpose();
      K.block(i * n, j * n, n, n) += M(j, i) * I;
    }
  Vec c = Eigen::Map<const Vec>(C.data(), n * n);
  Eigen::FullPivLU<Mat> lu(K);
  if (!lu.isInvertible()) throw NumericalError("Lyapunov equation is singular");
  Vec x = lu.solve(Vec(-c));
  Mat X = Eigen::Map<const Mat>(x.data(), n, n);
  return 0.5 * (X + X.transpose());
}

inline double max_real_eig(const Mat& M) {
  Eigen::EigenSolver<Mat> es(M, false);
  return es.eigenvalues().real().maxCoeff();
}

inline Mat care_residual(const LqrSpec& s, const Mat& P) {
  Mat Rinv_BtP = s.R.ldlt().solve(s.B.transpose() * P);
  return s.A.transpose() * P + P * s.A - P * s.B * Rinv_BtP + s.Q;
}

}  // namespace detail

// Newton-Kleinman iteration.  The seed gain is zero when A is already
// Hurwitz, otherwise the Bass construction on the shifted matrix A + beta I.
inline CareSolution solve_care(const LqrSpec& spec, int max_iter = 100) {
  spec.validate();
  const Index n = spec.n();
  Mat K = Mat::Zero(spec.m(), n);
  if (detail::max_real_eig(spec.A) >= 0.0) {
    double beta = spec.A.norm() + 1.0;
    Mat As = spec.A + beta * Mat::Identity(n, n);
    // -As Z - Z As^T + 2 B B^T = 0  ->  K = B^T Z^-1
    Mat Z = detail::lyapunov(Mat(-As.transpose()), Mat(2.0 * spec.B * spec.B.transpose()));
    Eigen::FullPivLU<Mat> lu(Z);
    if (!lu.isInvertible()) throw NumericalError("no stabilizing seed gain: (A, B) is not stabilizable");
    K = spec.B.transpose() * lu.inverse();
    if (detail::max_real_eig(spec.A - spec.B * K) >= 0.0)
      throw NumericalError("no stabilizing seed gain: (A, B) is not stabilizable");
  }
  CareSolution out;
  Mat P = Mat::Zero(n, n);
  for (int it = 1; it <= max_iter; ++it) {
    Mat Acl = spec.A - spec.B * K;
    if (detail::max_real_eig(Acl) >= 0.0) throw NumericalError("Newton-Kleinman lost closed-loop stability");
    Mat Pn = detail::lyapunov(Acl, Mat(spec.Q + K.transpose() * spec.R * K));
    K = spec.R.ldlt().solve(spec.B.transpose() * Pn);
    double change = (Pn - P).norm();
    P = Pn;
    out.iterations = it;
    if (change <= 1e-14 * (1.0 + P.norm())) break;
  }
  out.P = P;
  out.K = K;
  out.residual = detail::care_residual(spec, P).norm();
  if (!(out.residual <= 1e-8 * (1.0 + P.norm())))
    throw NumericalError("Riccati iteration did not converge (residual " + std::to_string(out.residual) + ")");
  Eigen::EigenSolver<Mat> es(spec.A - spec.B * K, false);
  out.closed_loop_real = es.eigenvalues().real();
  if (out.closed_loop_real.maxCoeff() >= 0.0) throw NumericalError("Riccati solution is not stabilizing");
  return out;
}

// Ensemble of dx = (A x + B u) dt + Bw dw under u = -K (x - ref).  K = 0 gives
// the open-loop response.
inline PathEnsemble feedback_ensemble(const LqrSpec& spec, const Mat& K, const Mat& Bw,
                                      const std::vector<StochasticModel>& x0, const std::vector<double>& grid,
                                      Index n_paths, std::uint64_t seed) {
  spec.validate();
  require(K.rows() == spec.m() && K.cols() == spec.n(), "gain shape mismatch");
  Vec ref = spec.reference.size() ? spec.reference : Vec::Zero(spec.n());
  Mat Acl = spec.A - spec.B * K;
  Vec offset = spec.B * (K * ref);
  SdeModel m = SdeModel::linear(Acl, Bw);
  m.drift = [Acl, offset](double, const Vec& x, Vec& f) { f.noalias() = Acl * x + offset; };
  return euler_maruyama(m, x0, grid, n_paths, seed);
}

inline PathEnsemble lqr_rollout_ensemble(const LqrSpec& spec, const Mat& Bw, const std::vector<StochasticModel>& x0,
                                         const std::vector<double>& grid, Index n_paths, std::uint64_t seed) {
  CareSolution care = solve_care(spec);
  return feedback_ensemble(spec, care.K, Bw, x0, grid, n_paths, seed);
}

// Uniform grid covering `time_constants` multiples of the slowest closed-loop
// time constant.
inline std::vector<double> settling_grid(const CareSolution& care, double time_constants, std::size_t n_nodes) {
  double slowest = -care.closed_loop_real.maxCoeff();
  require(slowest > 0.0, "closed loop must be stable");
  double tf = time_constants / slowest;
  std::vector<double> g(n_nodes);
  for (std::size_t k = 0; k < n_nodes; ++k) g[k] = tf * static_cast<double>(k) / static_cast<double>(n_nodes - 1);
  return g;
}

}  // namespace uccd
