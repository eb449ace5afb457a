// SPDX-License-Identifier: Apache-2.0
#include "metaxp/model.hpp"

#include <cmath>
#include <optional>
#include <string>

#include "metaxp/error.hpp"
#include "metaxp/ops.hpp"
#include "metaxp/random.hpp"

namespace metaxp::asr {

using ad::Var;

void ModelConfig::validate() const {
  if (num_encoder_blocks == 0) throw ConfigError("num_encoder_blocks must be >= 1");
  if (num_decoder_blocks == 0) throw ConfigError("num_decoder_blocks must be >= 1");
  if (model_dim == 0 || ff_dim == 0) throw ConfigError("model_dim and ff_dim must be positive");
  if (num_heads == 0 || model_dim % num_heads != 0) {
    throw ConfigError("model_dim (" + std::to_string(model_dim) + ") must be divisible by num_heads (" +
                      std::to_string(num_heads) + ")");
  }
  if (vocab_size < 3) throw ConfigError("vocab_size must be >= 3 (symbols + blank + sos/eos)");
  if (feature_dim == 0) throw ConfigError("feature_dim must be positive");
  if (frame_stack == 0) throw ConfigError("frame_stack must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must be in [0, 1)");
}

namespace {

class Initializer {
 public:
  Initializer(ParameterRegistry& reg, std::uint64_t seed) : reg_(reg), rng_(make_rng(seed)) {}

  void weight(const std::string& name, std::size_t fan_in, std::size_t fan_out) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Tensor t(Shape{fan_in, fan_out});
    for (auto& v : t.data()) v = uniform(rng_, -bound, bound);
    reg_.add(name, std::move(t));
  }
  void bias(const std::string& name, std::size_t n) { reg_.add(name, Tensor(Shape{n}, 0.0)); }
  void linear(const std::string& prefix, std::size_t in, std::size_t out) {
    weight(prefix + ".weight", in, out);
    bias(prefix + ".bias", out);
  }
  void norm(const std::string& prefix, std::size_t n) {
    reg_.add(prefix + ".gain", Tensor(Shape{n}, 1.0));
    bias(prefix + ".bias", n);
  }
  void attention(const std::string& prefix, std::size_t d) {
    for (const char* part : {"query", "key", "value", "output"}) linear(prefix + "." + part, d, d);
  }

 private:
  ParameterRegistry& reg_;
  Rng rng_;
};

std::string enc_block(std::size_t i) { return "encoder.block" + std::to_string(i + 1); }
std::string dec_block(std::size_t i) { return "decoder.block" + std::to_string(i + 1); }

Var linear(BoundParameters& p, const std::string& prefix, Var x) {
  return ad::add(ad::matmul(x, p.get(prefix + ".weight")), p.get(prefix + ".bias"));
}

Var norm(BoundParameters& p, const std::string& prefix, Var x) {
  return ad::layer_norm(x, p.get(prefix + ".gain"), p.get(prefix + ".bias"));
}

Var multi_head_attention(const ModelConfig& cfg, BoundParameters& p, const std::string& prefix, Var query_in,
                         Var memory, const Tensor* mask) {
  Var q = linear(p, prefix + ".query", query_in);
  Var k = linear(p, prefix + ".key", memory);
  Var v = linear(p, prefix + ".value", memory);
  const std::size_t head_dim = cfg.model_dim / cfg.num_heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));
  std::vector<Var> heads;
  heads.reserve(cfg.num_heads);
  std::optional<Var> mask_var;
  if (mask) mask_var = p.graph().constant(*mask);
  for (std::size_t h = 0; h < cfg.num_heads; ++h) {
    const std::size_t lo = h * head_dim, hi = lo + head_dim;
    Var qh = cfg.num_heads == 1 ? q : ad::slice(q, 1, lo, hi);
    Var kh = cfg.num_heads == 1 ? k : ad::slice(k, 1, lo, hi);
    Var vh = cfg.num_heads == 1 ? v : ad::slice(v, 1, lo, hi);
    Var scores = ad::scale(ad::matmul(qh, ad::transpose(kh)), inv_sqrt);
    if (mask_var) scores = ad::add(scores, *mask_var);
    heads.push_back(ad::matmul(ad::softmax(scores), vh));
  }
  Var context = heads.size() == 1 ? heads[0] : ad::concat(heads, 1);
  return linear(p, prefix + ".output", context);
}

Var feed_forward(BoundParameters& p, const std::string& prefix, Var x) {
  return linear(p, prefix + ".ff2", ad::relu(linear(p, prefix + ".ff1", x)));
}

Tensor causal_mask(std::size_t n) {
  Tensor m(Shape{n, n}, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = r + 1; c < n; ++c) m.at(r, c) = -1e9;
  }
  return m;
}

}  // namespace

AsrModel build_model(const ModelConfig& config, std::uint64_t rng_seed) {
  config.validate();
  AsrModel model{config, {}};
  Initializer init(model.params, rng_seed);
  const std::size_t d = config.model_dim;

  init.linear("encoder.input", config.feature_dim * config.frame_stack, d);
  for (std::size_t i = 0; i < config.num_encoder_blocks; ++i) {
    const std::string b = enc_block(i);
    init.norm(b + ".norm1", d);
    init.attention(b + ".attn", d);
    init.norm(b + ".norm2", d);
    init.linear(b + ".ff1", d, config.ff_dim);
    init.linear(b + ".ff2", config.ff_dim, d);
  }
  init.norm("encoder.final_norm", d);
  init.linear("ctc", d, config.vocab_size);

  init.weight("decoder.embedding.weight", config.vocab_size, d);
  for (std::size_t i = 0; i < config.num_decoder_blocks; ++i) {
    const std::string b = dec_block(i);
    init.norm(b + ".norm1", d);
    init.attention(b + ".self_attn", d);
    init.norm(b + ".norm2", d);
    init.attention(b + ".cross_attn", d);
    init.norm(b + ".norm3", d);
    init.linear(b + ".ff1", d, config.ff_dim);
    init.linear(b + ".ff2", config.ff_dim, d);
  }
  init.norm("decoder.final_norm", d);
  init.linear("decoder.output", d, config.vocab_size);
  return model;
}

std::size_t stacked_length(std::size_t frames, std::size_t frame_stack) {
  return (frames + frame_stack - 1) / frame_stack;
}

Tensor positional_encoding(std::size_t rows, std::size_t dim) {
  Tensor pe(Shape{rows, dim});
  for (std::size_t pos = 0; pos < rows; ++pos) {
    for (std::size_t i = 0; i < dim; i += 2) {
      const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(dim));
      pe.at(pos, i) = std::sin(static_cast<double>(pos) * freq);
      if (i + 1 < dim) pe.at(pos, i + 1) = std::cos(static_cast<double>(pos) * freq);
    }
  }
  return pe;
}

EncoderOutput encode(const ModelConfig& config, BoundParameters& params, const Tensor& features) {
  if (features.rank() != 2 || features.shape()[1] != config.feature_dim) {
    throw ShapeError("encode: features " + shape_string(features.shape()) + " do not match feature_dim " +
                     std::to_string(config.feature_dim));
  }
  const std::size_t frames = features.shape()[0];
  if (frames < config.frame_stack) {
    throw ShapeError("encode: " + std::to_string(frames) + " frames is shorter than frame_stack " +
                     std::to_string(config.frame_stack));
  }
  const std::size_t stack = config.frame_stack, fdim = config.feature_dim;
  const std::size_t u_len = stacked_length(frames, stack);
  // Row u holds frames u*stack .. u*stack+stack-1 side by side; the tail is
  // zero padded.
  Tensor stacked(Shape{u_len, stack * fdim}, 0.0);
  for (std::size_t t = 0; t < frames; ++t) {
    const std::size_t u = t / stack, slot = t % stack;
    for (std::size_t f = 0; f < fdim; ++f) stacked.at(u, slot * fdim + f) = features.at(t, f);
  }

  ad::Graph& g = params.graph();
  Var x = linear(params, "encoder.input", g.constant(std::move(stacked)));
  x = ad::add(x, g.constant(positional_encoding(u_len, config.model_dim)));
  x = ad::dropout(x, config.dropout);
  for (std::size_t i = 0; i < config.num_encoder_blocks; ++i) {
    const std::string b = enc_block(i);
    Var h = norm(params, b + ".norm1", x);
    x = ad::add(x, ad::dropout(multi_head_attention(config, params, b + ".attn", h, h, nullptr), config.dropout));
    h = norm(params, b + ".norm2", x);
    x = ad::add(x, ad::dropout(feed_forward(params, b, h), config.dropout));
  }
  return EncoderOutput{norm(params, "encoder.final_norm", x), u_len};
}

Var ctc_logits(const ModelConfig& config, BoundParameters& params, const EncoderOutput& enc) {
  const Tensor& h = enc.hidden.value();
  if (h.rank() != 2 || h.shape()[0] != enc.frames || h.shape()[1] != config.model_dim) {
    throw ShapeError("ctc_logits: encoder output " + shape_string(h.shape()) + " inconsistent with model");
  }
  return linear(params, "ctc", enc.hidden);
}

Var aed_logits(const ModelConfig& config, BoundParameters& params, const EncoderOutput& enc,
               std::span<const std::size_t> labels) {
  std::vector<std::size_t> inputs;
  inputs.reserve(labels.size() + 1);
  inputs.push_back(config.sos_eos());
  for (auto s : labels) {
    if (s == config.blank() || s >= config.sos_eos()) {
      throw ShapeError("aed_logits: label symbol " + std::to_string(s) + " outside output vocabulary");
    }
    inputs.push_back(s);
  }
  const std::size_t n = inputs.size();
  ad::Graph& g = params.graph();
  Var x = ad::embedding(params.get("decoder.embedding.weight"), inputs);
  x = ad::add(x, g.constant(positional_encoding(n, config.model_dim)));
  x = ad::dropout(x, config.dropout);
  const Tensor mask = causal_mask(n);
  for (std::size_t i = 0; i < config.num_decoder_blocks; ++i) {
    const std::string b = dec_block(i);
    Var h = norm(params, b + ".norm1", x);
    x = ad::add(x, ad::dropout(multi_head_attention(config, params, b + ".self_attn", h, h, n > 1 ? &mask : nullptr),
                               config.dropout));
    h = norm(params, b + ".norm2", x);
    x = ad::add(x, ad::dropout(multi_head_attention(config, params, b + ".cross_attn", h, enc.hidden, nullptr),
                               config.dropout));
    h = norm(params, b + ".norm3", x);
    x = ad::add(x, ad::dropout(feed_forward(params, b, h), config.dropout));
  }
  return linear(params, "decoder.output", norm(params, "decoder.final_norm", x));
}

FreezePolicy FreezePolicy::default_for(const ModelConfig& config) {
  FreezePolicy policy;
  for (std::size_t i = 1; i + 1 < config.num_encoder_blocks; ++i) policy.patterns.push_back(enc_block(i) + ".");
  for (std::size_t i = 0; i < config.num_decoder_blocks; ++i) policy.patterns.push_back(dec_block(i) + ".");
  return policy;
}

std::set<std::string> apply_freeze_policy(ParameterRegistry& registry, const FreezePolicy& policy) {
  std::set<std::string> frozen;
  for (const auto& pattern : policy.patterns) {
    const bool prefix = !pattern.empty() && pattern.back() == '.';
    bool matched = false;
    for (const auto& e : registry.entries()) {
      if (prefix ? e.name.starts_with(pattern) : e.name == pattern) {
        frozen.insert(e.name);
        matched = true;
      }
    }
    if (!matched) throw ConfigError("freeze policy pattern matches no parameter: " + pattern);
  }
  registry.set_frozen(frozen);
  return frozen;
}

}  // namespace metaxp::asr
