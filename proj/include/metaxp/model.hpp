// SPDX-License-Identifier: Apache-2.0
#pragma once

// Joint CTC / attention encoder-decoder: a shared pre-norm transformer
// encoder over stacked input frames, a linear CTC head, and an
// autoregressive decoder with cross-attention.
//
// Vocabulary layout: index 0 is the CTC blank, index vocab_size-1 is the
// shared sos/eos symbol, and 1..vocab_size-2 are output symbols.

#include <cstddef>
#include <cstdint>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "metaxp/graph.hpp"
#include "metaxp/registry.hpp"

namespace metaxp::asr {

struct ModelConfig {
  std::size_t num_encoder_blocks = 4;
  std::size_t num_decoder_blocks = 2;
  std::size_t model_dim = 32;
  std::size_t ff_dim = 64;
  std::size_t num_heads = 2;
  std::size_t vocab_size = 12;
  std::size_t feature_dim = 8;
  std::size_t frame_stack = 2;
  double dropout = 0.1;

  std::size_t blank() const { return 0; }
  std::size_t sos_eos() const { return vocab_size - 1; }
  std::size_t num_symbols() const { return vocab_size - 2; }

  // Throws ConfigError describing the first violated constraint.
  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct AsrModel {
  ModelConfig config;
  ParameterRegistry params;
};

AsrModel build_model(const ModelConfig& config, std::uint64_t rng_seed);

struct EncoderOutput {
  ad::Var hidden;      // U x model_dim
  std::size_t frames;  // U
};

// Frames after stacking: ceil(T / frame_stack).
std::size_t stacked_length(std::size_t frames, std::size_t frame_stack);

// features: T x feature_dim. Dropout is active iff the graph is in train mode.
EncoderOutput encode(const ModelConfig& config, BoundParameters& params, const Tensor& features);

// U x vocab_size unnormalised scores.
ad::Var ctc_logits(const ModelConfig& config, BoundParameters& params, const EncoderOutput& enc);

// Teacher-forced decoder scores, (len+1) x vocab_size. Row t scores token t
// (labels[t], or eos at t = len) given sos + labels[0..t).
ad::Var aed_logits(const ModelConfig& config, BoundParameters& params, const EncoderOutput& enc,
                   std::span<const std::size_t> labels);

// Frozen-parameter selection. Each pattern is either an exact parameter
// name or a prefix ending in '.'.
struct FreezePolicy {
  std::vector<std::string> patterns;

  // Keeps the first and last encoder blocks, the input projection, the
  // encoder's final norm, the CTC head, the decoder embedding and the
  // decoder output layers trainable; freezes the interior encoder blocks
  // and the decoder blocks.
  static FreezePolicy default_for(const ModelConfig& config);
};

// Replaces the registry's freeze mask. Throws ConfigError if a pattern
// matches no parameter.
std::set<std::string> apply_freeze_policy(ParameterRegistry& registry, const FreezePolicy& policy);

// Sinusoidal position table, rows x dim.
Tensor positional_encoding(std::size_t rows, std::size_t dim);

}  // namespace metaxp::asr
