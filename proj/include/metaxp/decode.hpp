// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "metaxp/tensor.hpp"

namespace metaxp::eval {

using Sequence = std::vector<std::size_t>;

enum class DecodeMode { Greedy, PrefixBeam };

struct DecodeConfig {
  DecodeMode mode = DecodeMode::Greedy;
  std::size_t beam_size = 8;

  void validate() const;
  friend bool operator==(const DecodeConfig&, const DecodeConfig&) = default;
};

const char* decode_mode_name(DecodeMode mode);
DecodeMode parse_decode_mode(const std::string& name);

// Per-frame argmax (lowest index wins ties), adjacent repeats collapsed,
// blanks removed.
Sequence greedy_ctc_decode(const Tensor& log_probs, std::size_t blank = 0);

// CTC prefix beam search without a language model. Keeps the beam_size
// prefixes with the highest marginal probability after every frame and
// returns the best surviving prefix. A beam of 1 is not the same as greedy
// decoding: it follows the most probable collapsed prefix, not the most
// probable frame path.
Sequence prefix_beam_decode(const Tensor& log_probs, const DecodeConfig& config, std::size_t blank = 0);

Sequence decode(const Tensor& log_probs, const DecodeConfig& config, std::size_t blank = 0);

// Unit-cost Levenshtein distance.
std::size_t edit_distance(std::span<const std::size_t> reference, std::span<const std::size_t> hypothesis);

// edit_distance / len(reference). Throws Error for an empty reference.
double cer(std::span<const std::size_t> reference, std::span<const std::size_t> hypothesis);

}  // namespace metaxp::eval
