// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "metaxp/model.hpp"
#include "metaxp/random.hpp"
#include "metaxp/synth.hpp"
#include "metaxp/tensor.hpp"

namespace testutil {

inline metaxp::Tensor random_tensor(metaxp::Rng& rng, metaxp::Shape shape, double lo = -1.0, double hi = 1.0) {
  metaxp::Tensor t(std::move(shape));
  for (auto& v : t.storage()) v = metaxp::uniform(rng, lo, hi);
  return t;
}

// Row-wise log-softmax of random scores, U x V.
inline metaxp::Tensor random_log_probs(metaxp::Rng& rng, std::size_t frames, std::size_t vocab) {
  metaxp::Tensor t({frames, vocab});
  for (std::size_t u = 0; u < frames; ++u) {
    double mx = -1e300;
    for (std::size_t v = 0; v < vocab; ++v) {
      t.at(u, v) = metaxp::uniform(rng, -3.0, 3.0);
      mx = std::max(mx, t.at(u, v));
    }
    double sum = 0.0;
    for (std::size_t v = 0; v < vocab; ++v) sum += std::exp(t.at(u, v) - mx);
    const double lse = mx + std::log(sum);
    for (std::size_t v = 0; v < vocab; ++v) t.at(u, v) -= lse;
  }
  return t;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

inline metaxp::asr::ModelConfig tiny_model() {
  metaxp::asr::ModelConfig c;
  c.num_encoder_blocks = 3;
  c.num_decoder_blocks = 1;
  c.model_dim = 8;
  c.ff_dim = 12;
  c.num_heads = 2;
  c.vocab_size = 6;
  c.feature_dim = 3;
  c.frame_stack = 2;
  c.dropout = 0.1;
  return c;
}

inline metaxp::synth::GenerationSpec tiny_generation() {
  metaxp::synth::GenerationSpec g;
  g.feature_dim = 3;
  g.num_symbols = 4;
  g.num_accents = 2;
  g.source_train = 24;
  g.accent_train = 10;
  g.source_test = 6;
  g.accent_test = 4;
  return g;
}

}  // namespace testutil
