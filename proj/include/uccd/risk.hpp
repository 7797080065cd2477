#pragma once

// Scalar risk measures and constraint-treatment evaluators over scenario
// values or fuzzy numbers.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "uccd/common.hpp"
#include "uccd/usets.hpp"

namespace uccd::risk {

// ---------------------------------------------------------------------------
// Normal distribution helpers
// ---------------------------------------------------------------------------

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

inline double normal_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }

// Acklam's rational approximation followed by one Halley step against erfc.
inline double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw ValidationError("normal_quantile: p must lie in (0, 1)");
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                                 1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                                 6.680131188771972e+01,  -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                                 -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                                 3.754408661907416e+00};
  constexpr double plow = 0.02425;
  double x;
  if (p < plow) {
    double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - plow) {
    double q = p - 0.5, r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    double q = std::sqrt(-2.0 * std::log(1.0 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  double e = normal_cdf(x) - p;
  double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * x * x);
  return x - u / (1.0 + 0.5 * x * u);
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

enum class Treatment {
  nominal,
  expectation,
  discounted,
  mean_std,
  cvar,
  utility,
  chance,
  system_chance,
  worst_case,
  possibilistic,
  evidence,
};

enum class ChanceMode { saa, gaussian };
enum class EvidenceMeasure { belief, plausibility };

struct TreatmentSpec {
  Treatment kind = Treatment::expectation;
  double k_s = 0.0;                                           // mean_std shift index
  double sigma_a = std::numeric_limits<double>::infinity();   // mean_std dispersion cap
  double gamma = 0.9;                                         // cvar confidence level
  double rho = 0.0;                                           // utility risk aversion
  double utility_shift = 1.0;                                 // utility: positive offset
  double p_f = 0.05;                                          // chance / system_chance target
  ChanceMode mode = ChanceMode::gaussian;
  double pos_f = 0.5;                                         // possibilistic target
  EvidenceMeasure measure = EvidenceMeasure::plausibility;
  double level = 0.5;                                         // evidence target
  double discount = 0.0;                                      // discounted: gamma >= 0

  void validate() const {
    switch (kind) {
      case Treatment::mean_std:
        require(k_s >= 0.0, "k_s must be >= 0");
        require(sigma_a >= 0.0, "sigma_a must be >= 0");
        break;
      case Treatment::cvar: require(gamma > 0.0 && gamma < 1.0, "cvar level must lie in (0, 1)"); break;
      case Treatment::utility:
        require(rho >= 0.0, "utility rho must be >= 0");
        require(utility_shift > 0.0, "utility shift must be > 0");
        break;
      case Treatment::chance:
      case Treatment::system_chance:
        require(p_f > 0.0 && p_f < 1.0, "failure probability must lie in (0, 1)");
        break;
      case Treatment::possibilistic:
        require(pos_f > 0.0 && pos_f <= 1.0, "POS_f must lie in (0, 1]");
        break;
      case Treatment::evidence: require(level >= 0.0 && level < 1.0, "evidence level must lie in [0, 1)"); break;
      case Treatment::discounted: require(discount >= 0.0, "discount must be >= 0"); break;
      default: break;
    }
  }
};

// Per-constraint treatment with a default; overrides are keyed by constraint
// name.
struct RiskConfig {
  TreatmentSpec fallback;
  std::map<std::string, TreatmentSpec> overrides;

  const TreatmentSpec& for_constraint(const std::string& name) const {
    auto it = overrides.find(name);
    return it == overrides.end() ? fallback : it->second;
  }

  void validate() const {
    fallback.validate();
    for (const auto& [_, t] : overrides) t.validate();
  }
};

inline const char* to_string(Treatment t) {
  switch (t) {
    case Treatment::nominal: return "nominal";
    case Treatment::expectation: return "expectation";
    case Treatment::discounted: return "discounted";
    case Treatment::mean_std: return "mean-std";
    case Treatment::cvar: return "cvar";
    case Treatment::utility: return "utility";
    case Treatment::chance: return "chance";
    case Treatment::system_chance: return "system-chance";
    case Treatment::worst_case: return "worst-case";
    case Treatment::possibilistic: return "possibilistic";
    case Treatment::evidence: return "evidence";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Moments
// ---------------------------------------------------------------------------

struct SampleStats {
  double mean = 0.0;
  double std = 0.0;  // n-1 denominator
  std::size_t n = 0;
  double min = 0.0;
  double max = 0.0;
};

inline SampleStats sample_stats(std::span<const double> values) {
  if (values.size() < 2) throw ValidationError("sample_stats: std needs at least 2 values");
  SampleStats s;
  s.n = values.size();
  s.min = *std::min_element(values.begin(), values.end());
  s.max = *std::max_element(values.begin(), values.end());
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(s.n);
  double ss = 0.0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(ss / static_cast<double>(s.n - 1));
  // Rounding can push the mean a few ulps outside [min, max] for constant data.
  s.mean = std::clamp(s.mean, s.min, s.max);
  return s;
}

// sqrt(E[g^2] - E[g]^2), evaluated in the two-pass form.  Weights need not be
// normalized.
inline double population_std(std::span<const double> values, std::span<const double> weights = {}) {
  if (values.empty()) return 0.0;
  double wsum = 0.0, m = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    double w = weights.empty() ? 1.0 : weights[i];
    wsum += w;
    m += w * values[i];
  }
  m /= wsum;
  double v = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    double w = weights.empty() ? 1.0 : weights[i];
    v += w * (values[i] - m) * (values[i] - m);
  }
  return std::sqrt(v / wsum);
}

// ---------------------------------------------------------------------------
// CVaR
// ---------------------------------------------------------------------------

struct TailSplit {
  double var = 0.0;              // smallest x with F(x) >= level
  double cvar = 0.0;
  std::vector<double> tail_mass; // per input, mass assigned to the upper tail
};

// Fractional upper-tail average: sort ascending (stable), take the top
// (1 - level) probability mass, splitting the boundary sample.
inline TailSplit tail_split(std::span<const double> values, std::span<const double> weights, double level) {
  const std::size_t n = values.size();
  TailSplit out;
  out.tail_mass.assign(n, 0.0);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return values[a] < values[b]; });
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) total += weights.empty() ? 1.0 : weights[i];
  const double tail = (1.0 - level) * total;
  double remaining = tail, acc = 0.0;
  for (std::size_t r = n; r-- > 0 && remaining > 0.0;) {
    std::size_t i = order[r];
    double w = weights.empty() ? 1.0 : weights[i];
    double take = std::min(w, remaining);
    out.tail_mass[i] = take / tail;
    acc += take * values[i];
    remaining -= take;
  }
  out.cvar = acc / tail;
  double cum = 0.0;
  out.var = values[order.back()];
  for (std::size_t r = 0; r < n; ++r) {
    std::size_t i = order[r];
    cum += weights.empty() ? 1.0 : weights[i];
    if (cum >= level * total * (1.0 - 1e-15)) {
      out.var = values[i];
      break;
    }
  }
  return out;
}

inline double cvar(std::span<const double> values, double level) {
  if (values.empty()) throw ValidationError("cvar: empty input");
  if (!(level > 0.0 && level < 1.0)) throw ValidationError("cvar: level must lie in (0, 1)");
  return tail_split(values, {}, level).cvar;
}

inline double value_at_risk(std::span<const double> values, double level) {
  if (values.empty()) throw ValidationError("value_at_risk: empty input");
  return tail_split(values, {}, level).var;
}

// ---------------------------------------------------------------------------
// Failure probabilities
// ---------------------------------------------------------------------------

// Fraction of samples with g >= 0.
inline double empirical_failure_prob(std::span<const double> g_values) {
  if (g_values.empty()) throw ValidationError("empirical_failure_prob: empty input");
  std::size_t fails = 0;
  for (double g : g_values) fails += g >= 0.0 ? 1 : 0;
  return static_cast<double>(fails) / static_cast<double>(g_values.size());
}

// Deterministic equivalent mu + z_{1-P_f} sigma of P[g >= 0] <= P_f for a
// Gaussian margin.
inline double gaussian_chance_margin(double mu, double sigma, double p_f) {
  if (sigma < 0.0) throw ValidationError("gaussian_chance_margin: sigma must be >= 0");
  if (!(p_f > 0.0 && p_f < 1.0)) throw ValidationError("gaussian_chance_margin: P_f must lie in (0, 1)");
  if (sigma == 0.0) return mu;
  return mu + normal_quantile(1.0 - p_f) * sigma;
}

// Rows are scenarios, columns constraints; a scenario fails if any column does.
inline double system_failure_prob(const Mat& g) {
  if (g.rows() == 0) throw ValidationError("system_failure_prob: empty input");
  Index fails = 0;
  for (Index s = 0; s < g.rows(); ++s) fails += (g.row(s).array() >= 0.0).any() ? 1 : 0;
  return static_cast<double>(fails) / static_cast<double>(g.rows());
}

// ---------------------------------------------------------------------------
// Utility
// ---------------------------------------------------------------------------

inline double crra_utility(double o, double rho) {
  if (!(o > 0.0)) throw ValidationError("crra_utility: argument must be > 0");
  if (rho < 0.0) throw ValidationError("crra_utility: rho must be >= 0");
  if (std::abs(1.0 - rho) < 1e-9) return std::log(o);
  return (std::pow(o, 1.0 - rho) - 1.0) / (1.0 - rho);
}

inline double crra_marginal(double o, double rho) { return std::pow(o, -rho); }

inline double expected_utility(std::span<const double> samples, double rho) {
  if (samples.empty()) throw ValidationError("expected_utility: empty input");
  double acc = 0.0;
  for (double o : samples) acc += crra_utility(o, rho);
  return acc / static_cast<double>(samples.size());
}

// Value whose utility equals the expected utility.
inline double certainty_equivalent(double expected, double rho) {
  if (std::abs(1.0 - rho) < 1e-9) return std::exp(expected);
  return std::pow(1.0 + (1.0 - rho) * expected, 1.0 / (1.0 - rho));
}

// ---------------------------------------------------------------------------
// Discounted expectation
// ---------------------------------------------------------------------------

// Normalized trapezoid weights of exp(-gamma (t - t0)) on the given nodes.
inline std::vector<double> discount_weights(std::span<const double> nodes, double gamma) {
  const std::size_t n = nodes.size();
  std::vector<double> w(n, 0.0);
  if (n == 1) return {1.0};
  double total = 0.0;
  for (std::size_t k = 0; k + 1 < n; ++k) {
    double h = nodes[k + 1] - nodes[k];
    double e0 = std::exp(-gamma * (nodes[k] - nodes[0]));
    double e1 = std::exp(-gamma * (nodes[k + 1] - nodes[0]));
    w[k] += 0.5 * h * e0;
    w[k + 1] += 0.5 * h * e1;
  }
  for (double v : w) total += v;
  for (double& v : w) v /= total;
  return w;
}

// Scenario mean of the normalized discounted time average (finite-horizon
// stand-in for the long-run limit).  Rows are scenarios.
inline double discounted_expectation(const Mat& g_series, double gamma, std::span<const double> nodes) {
  if (gamma < 0.0) throw ValidationError("discounted_expectation: gamma must be >= 0");
  if (g_series.cols() != static_cast<Index>(nodes.size()))
    throw ValidationError("discounted_expectation: series length does not match grid");
  auto w = discount_weights(nodes, gamma);
  double acc = 0.0;
  for (Index s = 0; s < g_series.rows(); ++s)
    for (Index k = 0; k < g_series.cols(); ++k) acc += w[static_cast<std::size_t>(k)] * g_series(s, k);
  return acc / static_cast<double>(g_series.rows());
}

// ---------------------------------------------------------------------------
// Possibility and evidence
// ---------------------------------------------------------------------------

struct AlphaValue {
  double g = 0.0;
  double alpha = 0.0;
};

// sup{alpha : g >= 0} over propagated alpha-cut values.
inline double possibility_of_failure(std::span<const AlphaValue> pairs) {
  double pos = 0.0;
  for (const auto& p : pairs)
    if (p.g >= 0.0) pos = std::max(pos, p.alpha);
  return pos;
}

struct FocalElement {
  std::set<int> subset;
  double mass = 0.0;
};

struct Bpa {
  std::vector<FocalElement> focal;

  void validate() const {
    require(!focal.empty(), "BPA needs at least one focal element");
    double total = 0.0;
    for (const auto& f : focal) {
      require(f.mass > 0.0, "BPA focal masses must be > 0");
      require(!f.subset.empty(), "BPA focal elements must be nonempty");
      total += f.mass;
    }
    require(std::abs(total - 1.0) <= 1e-12, "BPA masses must sum to 1");
  }
};

struct Evidence {
  double belief = 0.0;
  double plausibility = 0.0;
};

inline Evidence belief_plausibility(const Bpa& bpa, const std::set<int>& event) {
  bpa.validate();
  Evidence e;
  for (const auto& f : bpa.focal) {
    bool subset = std::includes(event.begin(), event.end(), f.subset.begin(), f.subset.end());
    bool meets = std::any_of(f.subset.begin(), f.subset.end(), [&](int x) { return event.count(x) > 0; });
    if (subset) e.belief += f.mass;
    if (meets) e.plausibility += f.mass;
  }
  return e;
}

// ---------------------------------------------------------------------------
// Fuzzy expected value
// ---------------------------------------------------------------------------

namespace detail {

// Credibility of {xi >= r}: half the sum of possibility and necessity.
inline double credibility_at_least(const FuzzySet& set, double r, const Interval& core) {
  double pos = r <= core.hi ? 1.0 : membership(set, r);
  double pos_below = r > core.lo ? 1.0 : membership(set, r);
  return 0.5 * (pos + 1.0 - pos_below);
}

}  // namespace detail

// Credibilistic expected value
//   E = int_0^inf Cr{xi >= r} dr - int_-inf^0 Cr{xi <= r} dr
// by trapezoid quadrature with breakpoints at the support, core and zero.
// Gaussian memberships are truncated at the alpha floor.
inline double fuzzy_expected_value(const FuzzySet& set, int points_per_segment = 1000) {
  Interval support = set.kind == FuzzySet::Kind::gaussian ? alpha_cut(set, kAlphaFloor) : alpha_cut(set, 0.0);
  Interval core = alpha_cut(set, 1.0);
  std::vector<double> breaks = {support.lo, support.hi, core.lo, core.hi, 0.0};
  std::sort(breaks.begin(), breaks.end());
  breaks.erase(std::unique(breaks.begin(), breaks.end()), breaks.end());
  // Cr{xi <= r} = 1 - Cr{xi > r}; the two agree with Cr{xi >= r} off atoms.
  auto integrand = [&](double r) {
    double up = detail::credibility_at_least(set, r, core);
    if (r < support.lo) up = 1.0;
    if (r > support.hi) up = 0.0;
    return r >= 0.0 ? up : -(1.0 - up);
  };
  double total = 0.0;
  for (std::size_t s = 0; s + 1 < breaks.size(); ++s) {
    double lo = breaks[s], hi = breaks[s + 1];
    double h = (hi - lo) / points_per_segment;
    // Evaluate at interior-biased endpoints so each segment sees one side of
    // any jump at its breakpoints.
    auto f = [&](double r) {
      double eps = 1e-12 * std::max(1.0, std::abs(r));
      return integrand(std::clamp(r, lo + eps, hi - eps));
    };
    double acc = 0.5 * (f(lo) + f(hi));
    for (int k = 1; k < points_per_segment; ++k) acc += f(lo + k * h);
    total += acc * h;
  }
  return total;
}

// Alpha-cut form E = 1/2 int_0^1 (L(a) + R(a)) da on the floored alpha grid,
// used by the compilers; exposed here so tests can compare the two routes.
inline double fuzzy_expected_value_alpha(const FuzzySet& set, Index n_levels) {
  double acc = 0.0, prev_alpha = 0.0, prev_val = 0.0;
  for (Index j = 0; j < n_levels; ++j) {
    double alpha = std::max(kAlphaFloor, static_cast<double>(j) / static_cast<double>(n_levels - 1));
    Interval cut = alpha_cut(set, alpha);
    double val = 0.5 * (cut.lo + cut.hi);
    double nominal_alpha = static_cast<double>(j) / static_cast<double>(n_levels - 1);
    if (j > 0) acc += 0.5 * (nominal_alpha - prev_alpha) * (val + prev_val);
    prev_alpha = nominal_alpha;
    prev_val = val;
  }
  return acc;
}

}  // namespace uccd::risk
