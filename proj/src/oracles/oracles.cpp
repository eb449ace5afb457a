// SPDX-License-Identifier: Apache-2.0
#include "metaxp/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>

#include "metaxp/error.hpp"

namespace metaxp::oracle {

namespace {

// Calls visit(path, log_prob) for all V^U frame paths.
void for_each_path(const Tensor& log_probs, const std::function<void(const Sequence&, double)>& visit) {
  if (log_probs.rank() != 2) throw ShapeError("oracle: log_probs must be U x V");
  const std::size_t frames = log_probs.shape()[0], vocab = log_probs.shape()[1];
  Sequence path(frames, 0);
  for (;;) {
    double lp = 0.0;
    for (std::size_t t = 0; t < frames; ++t) lp += log_probs.at(t, path[t]);
    visit(path, lp);
    std::size_t t = 0;
    while (t < frames && ++path[t] == vocab) path[t++] = 0;
    if (t == frames) break;
  }
}

}  // namespace

Sequence collapse(std::span<const std::size_t> path, std::size_t blank) {
  Sequence out;
  for (std::size_t t = 0; t < path.size(); ++t) {
    if (t > 0 && path[t] == path[t - 1]) continue;
    if (path[t] != blank) out.push_back(path[t]);
  }
  return out;
}

double ctc_log_prob_enumerated(const Tensor& log_probs, std::span<const std::size_t> labels, std::size_t blank) {
  // Plain probability sum in long double; instances are small enough.
  long double total = 0.0L;
  const Sequence target(labels.begin(), labels.end());
  for_each_path(log_probs, [&](const Sequence& path, double lp) {
    if (collapse(path, blank) == target) total += std::exp(static_cast<long double>(lp));
  });
  if (total == 0.0L) return -std::numeric_limits<double>::infinity();
  return static_cast<double>(std::log(total));
}

double ctc_nll_enumerated(const Tensor& log_probs, std::span<const std::size_t> labels, std::size_t blank) {
  return -ctc_log_prob_enumerated(log_probs, labels, blank);
}

ExhaustiveDecode ctc_decode_enumerated(const Tensor& log_probs, std::size_t blank) {
  std::map<Sequence, long double> mass;
  for_each_path(log_probs, [&](const Sequence& path, double lp) {
    mass[collapse(path, blank)] += std::exp(static_cast<long double>(lp));
  });
  ExhaustiveDecode out;
  long double best = -1.0L;
  for (const auto& [seq, p] : mass) {
    if (p > best) {
      best = p;
      out.best = seq;
    }
  }
  out.log_prob = static_cast<double>(std::log(best));
  return out;
}

std::size_t edit_distance_recursive(std::span<const std::size_t> a, std::span<const std::size_t> b) {
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> memo;
  std::function<std::size_t(std::size_t, std::size_t)> go = [&](std::size_t i, std::size_t j) -> std::size_t {
    if (i == a.size()) return b.size() - j;
    if (j == b.size()) return a.size() - i;
    auto key = std::make_pair(i, j);
    if (auto it = memo.find(key); it != memo.end()) return it->second;
    std::size_t best;
    if (a[i] == b[j]) {
      best = go(i + 1, j + 1);
    } else {
      best = 1 + std::min({go(i + 1, j), go(i, j + 1), go(i + 1, j + 1)});
    }
    memo[key] = best;
    return best;
  };
  return go(0, 0);
}

}  // namespace metaxp::oracle
