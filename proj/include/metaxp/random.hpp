// SPDX-License-Identifier: Apache-2.0
#pragma once

// Platform-independent draws on top of std::mt19937_64. The standard
// distributions are implementation-defined, so generated data and
// initialisation would otherwise differ between standard libraries.

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>

namespace metaxp {

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> stream = {}) {
  // splitmix64 over the seed and stream ids
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  std::uint64_t state = mix(seed);
  for (auto s : stream) state = mix(state ^ mix(s));
  return Rng(state);
}

// [0, 1)
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

// Inclusive range.
inline std::int64_t uniform_int(Rng& rng, std::int64_t lo, std::int64_t hi) {
  const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
  return lo + static_cast<std::int64_t>(rng() % span);
}

inline double normal(Rng& rng, double mean = 0.0, double stddev = 1.0) {
  // Box-Muller; one draw per call keeps the stream position simple.
  const double u1 = 1.0 - uniform01(rng);
  const double u2 = uniform01(rng);
  return mean + stddev * std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

}  // namespace metaxp
