#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace uccd::rng {

// Counter-based generator: every draw is a pure function of
// (seed, stream, counter), so samples can be produced in any order or on any
// number of threads and still match bit for bit.

inline std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t hash(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter) {
  return splitmix64(seed ^ splitmix64(stream * 0xd1b54a32d192ed03ULL ^ splitmix64(counter)));
}

// Uniform on the open interval (0, 1).
inline double uniform(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter) {
  return (static_cast<double>(hash(seed, stream, counter) >> 11) + 0.5) * 0x1.0p-53;
}

// Standard normal via Box-Muller on two consecutive counters.
inline double normal(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter) {
  double u1 = uniform(seed, stream, 2 * counter);
  double u2 = uniform(seed, stream, 2 * counter + 1);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace uccd::rng
