#pragma once

// Uncertainty representations: stochastic distributions, crisp (norm-induced or
// polytopic) sets, and fuzzy membership functions, together with the finite
// scenario parameterizations the formulation compilers consume.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "uccd/common.hpp"
#include "uccd/rng.hpp"

namespace uccd {

// ---------------------------------------------------------------------------
// Stochastic models
// ---------------------------------------------------------------------------

struct StochasticModel {
  enum class Kind { gaussian, uniform, discrete };

  Kind kind = Kind::gaussian;
  double mu = 0.0;
  double sigma = 1.0;
  double lo = 0.0;
  double hi = 1.0;
  std::vector<double> values;
  std::vector<double> probabilities;

  static StochasticModel gaussian(double mu, double sigma) {
    StochasticModel m;
    m.kind = Kind::gaussian;
    m.mu = mu;
    m.sigma = sigma;
    m.validate();
    return m;
  }

  static StochasticModel uniform(double lo, double hi) {
    StochasticModel m;
    m.kind = Kind::uniform;
    m.lo = lo;
    m.hi = hi;
    m.validate();
    return m;
  }

  static StochasticModel discrete(std::vector<double> values, std::vector<double> probs) {
    StochasticModel m;
    m.kind = Kind::discrete;
    m.values = std::move(values);
    m.probabilities = std::move(probs);
    m.validate();
    return m;
  }

  void validate() const {
    switch (kind) {
      case Kind::gaussian:
        require(std::isfinite(mu), "gaussian mu must be finite");
        require(std::isfinite(sigma) && sigma > 0.0, "gaussian sigma must be > 0");
        break;
      case Kind::uniform:
        require(std::isfinite(lo) && std::isfinite(hi) && lo < hi, "uniform requires lo < hi");
        break;
      case Kind::discrete: {
        require(!values.empty(), "discrete distribution needs at least one value");
        require(values.size() == probabilities.size(), "discrete values/probabilities size mismatch");
        double total = 0.0;
        for (double p : probabilities) {
          require(p >= 0.0, "discrete probabilities must be nonnegative");
          total += p;
        }
        require(std::abs(total - 1.0) <= 1e-12, "discrete probabilities must sum to 1");
        break;
      }
    }
  }

  double mean() const {
    switch (kind) {
      case Kind::gaussian: return mu;
      case Kind::uniform: return 0.5 * (lo + hi);
      case Kind::discrete: {
        double m = 0.0;
        for (std::size_t i = 0; i < values.size(); ++i) m += values[i] * probabilities[i];
        return m;
      }
    }
    return 0.0;
  }

  double stddev() const {
    switch (kind) {
      case Kind::gaussian: return sigma;
      case Kind::uniform: return (hi - lo) / std::sqrt(12.0);
      case Kind::discrete: {
        double m = mean(), v = 0.0;
        for (std::size_t i = 0; i < values.size(); ++i)
          v += probabilities[i] * (values[i] - m) * (values[i] - m);
        return std::sqrt(v);
      }
    }
    return 0.0;
  }

  // Nominal ("guessing the future") value used by deterministic compiles.
  double nominal() const { return mean(); }

  double draw(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter) const {
    switch (kind) {
      case Kind::gaussian: return mu + sigma * rng::normal(seed, stream, counter);
      case Kind::uniform: return lo + (hi - lo) * rng::uniform(seed, stream, counter);
      case Kind::discrete: {
        double u = rng::uniform(seed, stream, counter), acc = 0.0;
        for (std::size_t i = 0; i < values.size(); ++i) {
          acc += probabilities[i];
          if (u < acc && probabilities[i] > 0.0) return values[i];
        }
        // u fell in the rounding gap above the last cumulative sum.
        for (std::size_t i = values.size(); i-- > 0;)
          if (probabilities[i] > 0.0) return values[i];
        return values.back();
      }
    }
    return 0.0;
  }
};

// ---------------------------------------------------------------------------
// Crisp sets
// ---------------------------------------------------------------------------

enum class Norm { l1, l2, linf };

struct CrispSet {
  enum class Kind { box, ellipsoid, polytope };

  Kind kind = Kind::box;
  Vec center;
  Vec halfwidth;  // box: per-dimension scale eta
  Norm norm = Norm::linf;
  Mat shape;      // ellipsoid: SPD matrix S, set {q : (q-c)^T S^-1 (q-c) <= r^2}
  double radius = 0.0;
  Mat vertices;   // polytope: one vertex per row

  static CrispSet box(Vec center, Vec halfwidth, Norm norm = Norm::linf) {
    CrispSet s;
    s.kind = Kind::box;
    s.center = std::move(center);
    s.halfwidth = std::move(halfwidth);
    s.norm = norm;
    s.validate();
    return s;
  }

  static CrispSet ellipsoid(Vec center, Mat shape, double radius) {
    CrispSet s;
    s.kind = Kind::ellipsoid;
    s.center = std::move(center);
    s.shape = std::move(shape);
    s.radius = radius;
    s.norm = Norm::l2;
    s.validate();
    return s;
  }

  static CrispSet polytope(Mat vertices) {
    CrispSet s;
    s.kind = Kind::polytope;
    s.vertices = std::move(vertices);
    s.validate();
    return s;
  }

  void validate() const {
    switch (kind) {
      case Kind::box:
        require(center.size() >= 1, "box needs at least one dimension");
        require(center.size() == halfwidth.size(), "box center/halfwidth dimension mismatch");
        require(center.allFinite() && halfwidth.allFinite(), "box parameters must be finite");
        require((halfwidth.array() >= 0.0).all(), "box halfwidth must be >= 0");
        break;
      case Kind::ellipsoid: {
        require(center.size() >= 1, "ellipsoid needs at least one dimension");
        require(shape.rows() == center.size() && shape.cols() == center.size(),
                "ellipsoid shape matrix dimension mismatch");
        require(radius >= 0.0 && std::isfinite(radius), "ellipsoid radius must be >= 0");
        require((shape - shape.transpose()).norm() <= 1e-12 * (1.0 + shape.norm()),
                "ellipsoid shape matrix must be symmetric");
        Eigen::LLT<Mat> llt(shape);
        require(llt.info() == Eigen::Success, "ellipsoid shape matrix must be positive definite");
        break;
      }
      case Kind::polytope:
        require(vertices.rows() >= 1 && vertices.cols() >= 1, "polytope needs at least one vertex");
        require(vertices.allFinite(), "polytope vertices must be finite");
        break;
    }
  }

  Index dim() const { return kind == Kind::polytope ? vertices.cols() : center.size(); }

  Vec nominal() const {
    if (kind == Kind::polytope) return vertices.colwise().mean().transpose();
    return center;
  }

  bool vertex_enumerable() const {
    return kind == Kind::polytope || (kind == Kind::box && norm != Norm::l2);
  }

  bool singleton() const {
    switch (kind) {
      case Kind::box: return (halfwidth.array() == 0.0).all();
      case Kind::ellipsoid: return radius == 0.0;
      case Kind::polytope:
        for (Index r = 1; r < vertices.rows(); ++r)
          if (vertices.row(r) != vertices.row(0)) return false;
        return true;
    }
    return false;
  }
};

namespace detail {

// Nonnegative least squares (Lawson-Hanson active set): min |A x - b|, x >= 0.
inline Vec nnls(const Mat& A, const Vec& b, int max_iter = 500) {
  const Index n = A.cols();
  Vec x = Vec::Zero(n);
  std::vector<bool> passive(n, false);
  Vec w = A.transpose() * (b - A * x);
  const double tol = 1e-12 * (1.0 + A.cwiseAbs().maxCoeff()) * (1.0 + b.cwiseAbs().maxCoeff());
  for (int it = 0; it < max_iter; ++it) {
    Index best = -1;
    double wmax = tol;
    for (Index j = 0; j < n; ++j)
      if (!passive[j] && w(j) > wmax) wmax = w(j), best = j;
    if (best < 0) break;
    passive[best] = true;
    for (int inner = 0; inner < max_iter; ++inner) {
      std::vector<Index> idx;
      for (Index j = 0; j < n; ++j)
        if (passive[j]) idx.push_back(j);
      Mat Ap(A.rows(), static_cast<Index>(idx.size()));
      for (std::size_t k = 0; k < idx.size(); ++k) Ap.col(static_cast<Index>(k)) = A.col(idx[k]);
      Vec z = Ap.colPivHouseholderQr().solve(b);
      bool feasible = true;
      for (Index k = 0; k < z.size(); ++k)
        if (z(k) <= 0.0) feasible = false;
      if (feasible) {
        x.setZero();
        for (std::size_t k = 0; k < idx.size(); ++k) x(idx[k]) = z(static_cast<Index>(k));
        break;
      }
      double alpha = 1.0;
      for (std::size_t k = 0; k < idx.size(); ++k) {
        double zk = z(static_cast<Index>(k));
        if (zk <= 0.0) alpha = std::min(alpha, x(idx[k]) / (x(idx[k]) - zk));
      }
      for (std::size_t k = 0; k < idx.size(); ++k)
        x(idx[k]) += alpha * (z(static_cast<Index>(k)) - x(idx[k]));
      for (std::size_t k = 0; k < idx.size(); ++k)
        if (x(idx[k]) <= 1e-15) passive[idx[k]] = false, x(idx[k]) = 0.0;
    }
    w = A.transpose() * (b - A * x);
  }
  return x;
}

// Euclidean projection onto the probability simplex.
inline Vec project_simplex(const Vec& v) {
  std::vector<double> u(v.data(), v.data() + v.size());
  std::sort(u.begin(), u.end(), std::greater<>());
  double css = 0.0, theta = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    css += u[i];
    double t = (css - 1.0) / static_cast<double>(i + 1);
    if (u[i] - t > 0.0) theta = t;
  }
  return (v.array() - theta).max(0.0).matrix();
}

// Euclidean projection onto the unit l1 ball.
inline Vec project_l1_ball(const Vec& v) {
  if (v.lpNorm<1>() <= 1.0) return v;
  Vec a = v.cwiseAbs();
  Vec p = project_simplex(a);
  for (Index i = 0; i < v.size(); ++i) p(i) = std::copysign(p(i), v(i));
  return p;
}

inline double slack_tol(double a, double b, double c) {
  return 8.0 * std::numeric_limits<double>::epsilon() *
         std::max({1.0, std::abs(a), std::abs(b), std::abs(c)});
}

}  // namespace detail

// Closed-set membership: boundary points are members.
inline bool crisp_contains(const CrispSet& set, const Vec& q) {
  if (q.size() != set.dim())
    throw ValidationError("crisp_contains: dimension mismatch (set " + std::to_string(set.dim()) +
                          ", point " + std::to_string(q.size()) + ")");
  switch (set.kind) {
    case CrispSet::Kind::box: {
      const Vec& c = set.center;
      const Vec& eta = set.halfwidth;
      // Degenerate dimensions pin the coordinate to the center.
      double acc = 0.0;
      for (Index i = 0; i < q.size(); ++i) {
        double d = std::abs(c(i) - q(i));
        double tol = detail::slack_tol(c(i), q(i), eta(i));
        if (eta(i) == 0.0) {
          if (d > tol) return false;
          continue;
        }
        double r = d / eta(i);
        switch (set.norm) {
          case Norm::linf:
            if (d > eta(i) + tol) return false;
            break;
          case Norm::l1: acc += r; break;
          case Norm::l2: acc += r * r; break;
        }
      }
      if (set.norm == Norm::l1) return acc <= 1.0 + 1e-14 * q.size();
      if (set.norm == Norm::l2) return std::sqrt(acc) <= 1.0 + 1e-14 * q.size();
      return true;
    }
    case CrispSet::Kind::ellipsoid: {
      Vec d = q - set.center;
      double m = std::sqrt(std::max(0.0, d.dot(set.shape.llt().solve(d))));
      return m <= set.radius + detail::slack_tol(m, set.radius, d.norm());
    }
    case CrispSet::Kind::polytope: {
      const Mat& V = set.vertices;
      if (V.cols() == 1) {
        double lo = V.minCoeff(), hi = V.maxCoeff();
        return q(0) >= lo - detail::slack_tol(lo, q(0), 0) && q(0) <= hi + detail::slack_tol(hi, q(0), 0);
      }
      // q is in the hull iff some lambda >= 0 with V^T lambda = q, sum lambda = 1.
      const double w = 1.0 + V.cwiseAbs().maxCoeff();
      Mat A(V.cols() + 1, V.rows());
      A.topRows(V.cols()) = V.transpose();
      A.row(V.cols()).setConstant(w);
      Vec b(V.cols() + 1);
      b.head(V.cols()) = q;
      b(V.cols()) = w;
      Vec lambda = detail::nnls(A, b);
      double resid = (A * lambda - b).norm();
      return resid <= 1e-9 * w;
    }
  }
  return false;
}

// Euclidean-style projection used by adversarial ascent.  Norm-induced boxes
// and ellipsoids are projected in their normalized coordinates; polytopes are
// handled by the caller through barycentric weights (see polytope_point).
inline Vec project(const CrispSet& set, const Vec& q) {
  switch (set.kind) {
    case CrispSet::Kind::box: {
      Vec w = Vec::Zero(q.size());
      for (Index i = 0; i < q.size(); ++i)
        if (set.halfwidth(i) > 0.0) w(i) = (q(i) - set.center(i)) / set.halfwidth(i);
      if (set.norm == Norm::linf) w = w.cwiseMax(-1.0).cwiseMin(1.0);
      else if (set.norm == Norm::l2) {
        double r = w.norm();
        if (r > 1.0) w /= r;
      } else {
        w = detail::project_l1_ball(w);
      }
      return set.center + set.halfwidth.cwiseProduct(w);
    }
    case CrispSet::Kind::ellipsoid: {
      Eigen::LLT<Mat> llt(set.shape);
      Mat L = llt.matrixL();
      Vec w = L.triangularView<Eigen::Lower>().solve(q - set.center);
      double r = w.norm();
      if (r > set.radius && r > 0.0) w *= set.radius / r;
      return set.center + L * w;
    }
    case CrispSet::Kind::polytope:
      throw ValidationError("project: polytopes are parameterized by barycentric weights");
  }
  return q;
}

inline Vec polytope_point(const CrispSet& set, const Vec& lambda) {
  return set.vertices.transpose() * lambda;
}

// Seeded point inside the set (uniform for boxes; radially uniform for balls
// and ellipsoids; Dirichlet(1) barycentric weights for polytopes).
inline Vec random_point(const CrispSet& set, std::uint64_t seed, std::uint64_t counter) {
  const Index n = set.dim();
  auto u = [&](Index i) { return rng::uniform(seed, counter, static_cast<std::uint64_t>(i)); };
  switch (set.kind) {
    case CrispSet::Kind::box: {
      if (set.norm == Norm::linf) {
        Vec q(n);
        for (Index i = 0; i < n; ++i) q(i) = set.center(i) + (2.0 * u(i) - 1.0) * set.halfwidth(i);
        return q;
      }
      Vec w(n);
      for (Index i = 0; i < n; ++i) w(i) = rng::normal(seed, counter, static_cast<std::uint64_t>(i));
      if (set.norm == Norm::l2) {
        w *= std::pow(u(n), 1.0 / static_cast<double>(n)) / std::max(w.norm(), 1e-300);
      } else {
        Vec e(n + 1);
        for (Index i = 0; i <= n; ++i) e(i) = -std::log(u(n + 1 + i));
        e /= e.sum();
        for (Index i = 0; i < n; ++i) w(i) = std::copysign(e(i), w(i));
      }
      return set.center + set.halfwidth.cwiseProduct(w);
    }
    case CrispSet::Kind::ellipsoid: {
      Vec w(n);
      for (Index i = 0; i < n; ++i) w(i) = rng::normal(seed, counter, static_cast<std::uint64_t>(i));
      w *= set.radius * std::pow(u(n), 1.0 / static_cast<double>(n)) / std::max(w.norm(), 1e-300);
      Mat L = Eigen::LLT<Mat>(set.shape).matrixL();
      return set.center + L * w;
    }
    case CrispSet::Kind::polytope: {
      Vec lambda(set.vertices.rows());
      for (Index i = 0; i < lambda.size(); ++i) lambda(i) = -std::log(u(i));
      lambda /= lambda.sum();
      return polytope_point(set, lambda);
    }
  }
  return set.nominal();
}

// ---------------------------------------------------------------------------
// Fuzzy sets
// ---------------------------------------------------------------------------

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  double mid() const { return 0.5 * (lo + hi); }
  bool contains(double x) const { return x >= lo && x <= hi; }
};

struct FuzzySet {
  enum class Kind { triangular, trapezoidal, gaussian };

  Kind kind = Kind::triangular;
  double a = 0.0, b = 0.0, c = 0.0, d = 0.0;  // breakpoints (triangular uses a,b,c)
  double center = 0.0, width = 1.0;           // gaussian membership

  static FuzzySet triangular(double a, double b, double c) {
    FuzzySet f;
    f.kind = Kind::triangular;
    f.a = a, f.b = b, f.c = c;
    f.validate();
    return f;
  }

  static FuzzySet trapezoidal(double a, double b, double c, double d) {
    FuzzySet f;
    f.kind = Kind::trapezoidal;
    f.a = a, f.b = b, f.c = c, f.d = d;
    f.validate();
    return f;
  }

  static FuzzySet gaussian(double center, double width) {
    FuzzySet f;
    f.kind = Kind::gaussian;
    f.center = center;
    f.width = width;
    f.validate();
    return f;
  }

  void validate() const {
    switch (kind) {
      case Kind::triangular:
        require(std::isfinite(a) && std::isfinite(c) && a <= b && b <= c, "triangular requires a <= b <= c");
        break;
      case Kind::trapezoidal:
        require(std::isfinite(a) && std::isfinite(d) && a <= b && b <= c && c <= d,
                "trapezoidal requires a <= b <= c <= d");
        break;
      case Kind::gaussian:
        require(std::isfinite(center), "gaussian membership center must be finite");
        require(std::isfinite(width) && width > 0.0, "gaussian membership width must be > 0");
        break;
    }
  }

  // Peak (core midpoint) used by nominal compiles.
  double nominal() const {
    switch (kind) {
      case Kind::triangular: return b;
      case Kind::trapezoidal: return 0.5 * (b + c);
      case Kind::gaussian: return center;
    }
    return 0.0;
  }

  bool singleton() const {
    switch (kind) {
      case Kind::triangular: return a == c;
      case Kind::trapezoidal: return a == d;
      case Kind::gaussian: return false;
    }
    return false;
  }
};

inline double membership(const FuzzySet& set, double x) {
  switch (set.kind) {
    case FuzzySet::Kind::gaussian: {
      double z = (x - set.center) / set.width;
      return std::exp(-z * z);
    }
    case FuzzySet::Kind::triangular:
    case FuzzySet::Kind::trapezoidal: {
      double a = set.a, b = set.b;
      double c = set.kind == FuzzySet::Kind::triangular ? set.b : set.c;
      double d = set.kind == FuzzySet::Kind::triangular ? set.c : set.d;
      if (x >= b && x <= c) return 1.0;
      if (x < a || x > d) return 0.0;
      if (x < b) return (x - a) / (b - a);
      return (d - x) / (d - c);
    }
  }
  return 0.0;
}

// {x : membership(x) >= alpha}.  alpha = 0 returns the closed support for the
// piecewise-linear kinds; the gaussian kind has unbounded support there.
inline Interval alpha_cut(const FuzzySet& set, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ValidationError("alpha_cut: alpha must lie in (0, 1]");
  switch (set.kind) {
    case FuzzySet::Kind::gaussian: {
      if (alpha == 0.0) throw ValidationError("alpha_cut: gaussian membership has unbounded 0-cut");
      double r = set.width * std::sqrt(-std::log(alpha));
      return {set.center - r, set.center + r};
    }
    case FuzzySet::Kind::triangular:
      return {set.a + alpha * (set.b - set.a), set.c - alpha * (set.c - set.b)};
    case FuzzySet::Kind::trapezoidal:
      return {set.a + alpha * (set.b - set.a), set.d - alpha * (set.d - set.c)};
  }
  return {};
}

// ---------------------------------------------------------------------------
// Scenario sets
// ---------------------------------------------------------------------------

struct ScenarioSet {
  enum class Provenance { mcs, vertices, alpha_grid, nominal, generated };

  Mat points;                  // n_scen x n_uncertain
  std::vector<double> weights; // probability (mcs/vertices/nominal) or alpha level (alpha_grid)
  Provenance provenance = Provenance::nominal;
  std::uint64_t seed = 0;
  std::vector<double> levels;  // distinct alpha levels (alpha_grid only)
  std::vector<std::string> binding_order;
  bool moment_matched = false;

  Index size() const { return points.rows(); }
  Index dim() const { return points.cols(); }

  // One row per scenario; header is the binding order followed by `weight`.
  std::string to_csv() const {
    std::ostringstream os;
    os.precision(17);
    for (Index j = 0; j < dim(); ++j) {
      os << (j < static_cast<Index>(binding_order.size()) ? binding_order[j] : "q" + std::to_string(j));
      os << ',';
    }
    os << "weight\n";
    for (Index i = 0; i < size(); ++i) {
      for (Index j = 0; j < dim(); ++j) os << points(i, j) << ',';
      os << weights[static_cast<std::size_t>(i)] << '\n';
    }
    return os.str();
  }
};

inline const char* to_string(ScenarioSet::Provenance p) {
  switch (p) {
    case ScenarioSet::Provenance::mcs: return "mcs";
    case ScenarioSet::Provenance::vertices: return "vertices";
    case ScenarioSet::Provenance::alpha_grid: return "alpha-grid";
    case ScenarioSet::Provenance::nominal: return "nominal";
    case ScenarioSet::Provenance::generated: return "generated";
  }
  return "?";
}

// Monte Carlo scenarios, one independent column per model.  With
// `moment_match`, continuous columns are affinely standardized so their sample
// mean and population std equal the model's exactly.
inline ScenarioSet sample_stochastic(const std::vector<StochasticModel>& models, Index n, std::uint64_t seed,
                                     bool moment_match = false) {
  if (n < 1) throw ValidationError("sample_stochastic: n must be >= 1");
  ScenarioSet s;
  s.provenance = ScenarioSet::Provenance::mcs;
  s.seed = seed;
  s.moment_matched = moment_match;
  s.points.resize(n, static_cast<Index>(models.size()));
  for (std::size_t j = 0; j < models.size(); ++j) {
    models[j].validate();
    for (Index i = 0; i < n; ++i)
      s.points(i, static_cast<Index>(j)) =
          models[j].draw(seed, static_cast<std::uint64_t>(j), static_cast<std::uint64_t>(i));
    if (moment_match && n >= 2 && models[j].kind != StochasticModel::Kind::discrete) {
      auto col = s.points.col(static_cast<Index>(j));
      double m = col.mean();
      double sd = std::sqrt((col.array() - m).square().mean());
      if (sd > 0.0) col = ((col.array() - m) * (models[j].stddev() / sd) + models[j].mean()).matrix();
    }
  }
  s.weights.assign(static_cast<std::size_t>(n), 1.0 / static_cast<double>(n));
  return s;
}

// Vertices in lexicographic order (first coordinate varies slowest, low before
// high).  l1 boxes are cross-polytopes with 2n vertices.
inline ScenarioSet enumerate_vertices(const CrispSet& set) {
  ScenarioSet s;
  s.provenance = ScenarioSet::Provenance::vertices;
  switch (set.kind) {
    case CrispSet::Kind::ellipsoid:
      throw ValidationError("enumerate_vertices: ellipsoids have no finite vertex set");
    case CrispSet::Kind::polytope:
      s.points = set.vertices;
      break;
    case CrispSet::Kind::box: {
      const Index n = set.dim();
      if (set.norm == Norm::l2)
        throw ValidationError("enumerate_vertices: l2-norm sets have no finite vertex set");
      if (set.norm == Norm::l1) {
        s.points.resize(2 * n, n);
        for (Index i = 0; i < n; ++i) {
          s.points.row(2 * i) = set.center.transpose();
          s.points.row(2 * i + 1) = set.center.transpose();
          s.points(2 * i, i) -= set.halfwidth(i);
          s.points(2 * i + 1, i) += set.halfwidth(i);
        }
        break;
      }
      if (n > 24) throw ValidationError("enumerate_vertices: box dimension too large to enumerate");
      const Index count = Index{1} << n;
      s.points.resize(count, n);
      for (Index v = 0; v < count; ++v)
        for (Index i = 0; i < n; ++i) {
          bool high = (v >> (n - 1 - i)) & 1;
          s.points(v, i) = set.center(i) + (high ? 1.0 : -1.0) * set.halfwidth(i);
        }
      break;
    }
  }
  s.weights.assign(static_cast<std::size_t>(s.points.rows()), 1.0 / static_cast<double>(s.points.rows()));
  return s;
}

inline constexpr double kAlphaFloor = 0.01;
inline constexpr Index kDefaultAlphaLevels = 11;

// Alpha levels j/(n-1) floored at eps.  Each level contributes every
// combination of cut endpoints across the sets (2 points for one set), lows
// before highs; the per-scenario weight is the scenario's alpha level.
inline ScenarioSet alpha_grid_scenarios(const std::vector<FuzzySet>& sets, Index n_levels,
                                        double eps = kAlphaFloor) {
  if (n_levels < 2) throw ValidationError("alpha_grid_scenarios: need at least 2 levels");
  if (sets.empty()) throw ValidationError("alpha_grid_scenarios: no fuzzy sets");
  if (sets.size() > 12) throw ValidationError("alpha_grid_scenarios: too many fuzzy sets");
  const Index k = static_cast<Index>(sets.size());
  const Index combos = Index{1} << k;
  ScenarioSet s;
  s.provenance = ScenarioSet::Provenance::alpha_grid;
  s.points.resize(n_levels * combos, k);
  for (Index j = 0; j < n_levels; ++j) {
    double alpha = std::max(eps, static_cast<double>(j) / static_cast<double>(n_levels - 1));
    s.levels.push_back(alpha);
    for (Index c = 0; c < combos; ++c) {
      for (Index i = 0; i < k; ++i) {
        Interval cut = alpha_cut(sets[static_cast<std::size_t>(i)], alpha);
        bool high = (c >> (k - 1 - i)) & 1;
        s.points(j * combos + c, i) = high ? cut.hi : cut.lo;
      }
      s.weights.push_back(alpha);
    }
  }
  return s;
}

}  // namespace uccd
