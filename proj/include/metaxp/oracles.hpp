// SPDX-License-Identifier: Apache-2.0
#pragma once

// Slow reference implementations used to check the real ones. Exponential
// in the input size; keep instances tiny.

#include <cstddef>
#include <span>
#include <vector>

#include "metaxp/tensor.hpp"

namespace metaxp::oracle {

using Sequence = std::vector<std::size_t>;

// Collapse a frame path: merge adjacent repeats, then drop blanks.
Sequence collapse(std::span<const std::size_t> path, std::size_t blank = 0);

// -log of the summed probability of every one of the V^U frame paths that
// collapses to labels. Infinity when no path does.
double ctc_nll_enumerated(const Tensor& log_probs, std::span<const std::size_t> labels, std::size_t blank = 0);

struct ExhaustiveDecode {
  Sequence best;
  double log_prob = 0.0;  // exact CTC log-probability of best
};

// Label sequence with the largest exact CTC probability, found by summing
// all frame paths per collapsed sequence. Ties go to the lexicographically
// smaller sequence.
ExhaustiveDecode ctc_decode_enumerated(const Tensor& log_probs, std::size_t blank = 0);

// Exact CTC log-probability of labels by path enumeration.
double ctc_log_prob_enumerated(const Tensor& log_probs, std::span<const std::size_t> labels, std::size_t blank = 0);

// Levenshtein distance by memoised recursion on (i, j) suffixes.
std::size_t edit_distance_recursive(std::span<const std::size_t> a, std::span<const std::size_t> b);

}  // namespace metaxp::oracle
