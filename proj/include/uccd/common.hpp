#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace uccd {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Index = Eigen::Index;

// Input that violates a documented contract (bad document, dimension mismatch,
// unknown name).  Maps to CLI exit code 2.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A formulation was asked to consume uncertainty it cannot represent, e.g.
// fuzzy bindings under a chance-constrained compile.  CLI exit code 3.
class CompatibilityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Numerical failure inside an algorithm (non-finite value, no stabilizing
// Riccati solution, ...).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& what) {
  if (!cond) throw ValidationError(what);
}

inline bool all_finite(const Vec& v) { return v.allFinite(); }

}  // namespace uccd
