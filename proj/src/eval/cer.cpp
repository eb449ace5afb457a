// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <vector>

#include "metaxp/decode.hpp"
#include "metaxp/error.hpp"

namespace metaxp::eval {

std::size_t edit_distance(std::span<const std::size_t> reference, std::span<const std::size_t> hypothesis) {
  // Two-row DP over the hypothesis.
  std::vector<std::size_t> prev(hypothesis.size() + 1), cur(hypothesis.size() + 1);
  for (std::size_t j = 0; j <= hypothesis.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= reference.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= hypothesis.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (reference[i - 1] == hypothesis[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[hypothesis.size()];
}

double cer(std::span<const std::size_t> reference, std::span<const std::size_t> hypothesis) {
  if (reference.empty()) throw Error("cer: reference must not be empty");
  return static_cast<double>(edit_distance(reference, hypothesis)) / static_cast<double>(reference.size());
}

}  // namespace metaxp::eval
