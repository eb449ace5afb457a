// SPDX-License-Identifier: Apache-2.0
#pragma once

// Oracle suites shared by the `selftest` CLI command and the acceptance
// binary. Each suite returns one outcome with a short measured summary.

#include <cstdint>
#include <string>
#include <vector>

namespace metaxp::selftest {

inline constexpr double kFdStep = 1e-5;
inline constexpr double kFdTolerance = 1e-4;
inline constexpr double kCtcOracleTolerance = 1e-6;
inline constexpr double kExactTolerance = 1e-12;

struct Outcome {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

// CTC loss against path enumeration and its gradient against finite
// differences, on random instances with U <= 6, V <= 4, len <= 3.
Outcome ctc_oracle_suite(std::uint64_t seed, std::size_t instances = 200);

// Finite-difference checks for every differentiable op.
Outcome autodiff_suite(std::uint64_t seed, std::size_t instances = 100);

// Hand-derived quadratic inner/outer steps, and alpha = 0 MAML against
// plain SGD over the support stream.
Outcome maml_arithmetic_suite(std::uint64_t seed);

// WCA gradient closed form and KL non-negativity / zero at equality.
Outcome regularizer_suite(std::uint64_t seed, std::size_t kl_pairs = 1000);

// Exhaustive CER check (length <= 4, 4 symbols) and prefix beam search
// against exhaustive exact-CTC decoding.
Outcome decode_suite(std::uint64_t seed, std::size_t beam_instances = 100);

// Scalar and AVX2 kernels agree (skipped, and passed, without AVX2).
Outcome kernel_suite(std::uint64_t seed);

std::vector<Outcome> run_all(std::uint64_t seed);

}  // namespace metaxp::selftest
