// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "metaxp/decode.hpp"
#include "metaxp/error.hpp"

namespace metaxp::eval {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double hi = std::max(a, b);
  return hi + std::log1p(std::exp(std::min(a, b) - hi));
}

struct PrefixScore {
  double blank = kNegInf;     // paths ending in blank
  double nonblank = kNegInf;  // paths ending in the prefix's last symbol
  double total() const { return log_add(blank, nonblank); }
};

void check_input(const Tensor& log_probs, std::size_t blank) {
  if (log_probs.rank() != 2) throw ShapeError("decode: log_probs must be U x V, got " + shape_string(log_probs.shape()));
  if (blank >= log_probs.shape()[1]) throw ShapeError("decode: blank index outside vocabulary");
}

}  // namespace

void DecodeConfig::validate() const {
  if (beam_size < 1) throw ConfigError("beam_size must be >= 1");
}

const char* decode_mode_name(DecodeMode mode) { return mode == DecodeMode::Greedy ? "greedy" : "prefix_beam"; }

DecodeMode parse_decode_mode(const std::string& name) {
  if (name == "greedy") return DecodeMode::Greedy;
  if (name == "prefix_beam") return DecodeMode::PrefixBeam;
  throw ConfigError("unknown decode mode: " + name);
}

Sequence greedy_ctc_decode(const Tensor& log_probs, std::size_t blank) {
  check_input(log_probs, blank);
  const std::size_t frames = log_probs.shape()[0], vocab = log_probs.shape()[1];
  Sequence out;
  std::size_t previous = blank;
  for (std::size_t t = 0; t < frames; ++t) {
    std::size_t best = 0;
    for (std::size_t v = 1; v < vocab; ++v) {
      if (log_probs.at(t, v) > log_probs.at(t, best)) best = v;
    }
    if (best != blank && best != previous) out.push_back(best);
    previous = best;
  }
  return out;
}

Sequence prefix_beam_decode(const Tensor& log_probs, const DecodeConfig& config, std::size_t blank) {
  config.validate();
  check_input(log_probs, blank);
  const std::size_t frames = log_probs.shape()[0], vocab = log_probs.shape()[1];

  std::map<Sequence, PrefixScore> beam;
  beam[{}].blank = 0.0;
  for (std::size_t t = 0; t < frames; ++t) {
    std::map<Sequence, PrefixScore> next;
    for (const auto& [prefix, score] : beam) {
      const double total = score.total();
      auto& same = next[prefix];
      same.blank = log_add(same.blank, total + log_probs.at(t, blank));
      if (!prefix.empty()) {
        same.nonblank = log_add(same.nonblank, score.nonblank + log_probs.at(t, prefix.back()));
      }
      for (std::size_t c = 0; c < vocab; ++c) {
        if (c == blank) continue;
        Sequence extended = prefix;
        extended.push_back(c);
        // A repeated symbol only starts a new label after a blank.
        const double from = !prefix.empty() && prefix.back() == c ? score.blank : total;
        auto& ext = next[std::move(extended)];
        ext.nonblank = log_add(ext.nonblank, from + log_probs.at(t, c));
      }
    }
    std::vector<std::pair<Sequence, PrefixScore>> ranked(next.begin(), next.end());
    // Stable over the map's lexicographic order, so ties keep the shorter or
    // smaller prefix.
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& a, const auto& b) { return a.second.total() > b.second.total(); });
    if (ranked.size() > config.beam_size) ranked.resize(config.beam_size);
    beam = std::map<Sequence, PrefixScore>(ranked.begin(), ranked.end());
  }
  const Sequence* best = nullptr;
  double best_score = kNegInf;
  for (const auto& [prefix, score] : beam) {
    if (best == nullptr || score.total() > best_score) {
      best = &prefix;
      best_score = score.total();
    }
  }
  return best ? *best : Sequence{};
}

Sequence decode(const Tensor& log_probs, const DecodeConfig& config, std::size_t blank) {
  return config.mode == DecodeMode::Greedy ? greedy_ctc_decode(log_probs, blank)
                                           : prefix_beam_decode(log_probs, config, blank);
}

}  // namespace metaxp::eval
