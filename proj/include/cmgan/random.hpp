#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace cmgan {

// One engine for everything stochastic (init, dropout, cropping, shuffles).
// std::mt19937_64 is fully specified by the standard and its state can be
// streamed, which checkpoints rely on. The distribution helpers below are
// written out so that sequences do not depend on the standard library vendor.
using Rng = std::mt19937_64;

inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

inline double standard_normal(Rng& rng) {
  double u1 = uniform01(rng);
  while (u1 <= 0.0) u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

// Uniform integer in [0, n).
inline uint64_t uniform_index(Rng& rng, uint64_t n) { return n == 0 ? 0 : rng() % n; }

template <typename It>
void shuffle(It first, It last, Rng& rng) {
  const auto n = static_cast<uint64_t>(last - first);
  for (uint64_t i = n; i > 1; --i) {
    const uint64_t j = uniform_index(rng, i);
    std::swap(first[static_cast<std::ptrdiff_t>(i - 1)], first[static_cast<std::ptrdiff_t>(j)]);
  }
}

}  // namespace cmgan
