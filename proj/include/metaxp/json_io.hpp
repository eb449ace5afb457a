// SPDX-License-Identifier: Apache-2.0
#pragma once

// JSON mappings for the configuration types. Reading is strict: unknown
// keys are rejected, missing keys keep their defaults.

#include <initializer_list>
#include <string>

#include "json.hpp"
#include "metaxp/error.hpp"
#include "metaxp/losses.hpp"
#include "metaxp/model.hpp"
#include "metaxp/synth.hpp"
#include "metaxp/trainer.hpp"

namespace metaxp::json_detail {

inline void expect_keys(const nlohmann::json& j, const char* what, std::initializer_list<const char*> keys) {
  if (!j.is_object()) throw ConfigError(std::string(what) + ": expected an object");
  for (const auto& item : j.items()) {
    bool known = false;
    for (const char* k : keys) known = known || item.key() == k;
    if (!known) throw ConfigError(std::string(what) + ": unknown key '" + item.key() + "'");
  }
}

template <class T>
void read(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) j.at(key).get_to(out);
}

}  // namespace metaxp::json_detail

namespace metaxp::asr {

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"num_encoder_blocks", c.num_encoder_blocks},
       {"num_decoder_blocks", c.num_decoder_blocks},
       {"model_dim", c.model_dim},
       {"ff_dim", c.ff_dim},
       {"num_heads", c.num_heads},
       {"vocab_size", c.vocab_size},
       {"feature_dim", c.feature_dim},
       {"frame_stack", c.frame_stack},
       {"dropout", c.dropout}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  using namespace json_detail;
  expect_keys(j, "model", {"num_encoder_blocks", "num_decoder_blocks", "model_dim", "ff_dim", "num_heads",
                           "vocab_size", "feature_dim", "frame_stack", "dropout"});
  read(j, "num_encoder_blocks", c.num_encoder_blocks);
  read(j, "num_decoder_blocks", c.num_decoder_blocks);
  read(j, "model_dim", c.model_dim);
  read(j, "ff_dim", c.ff_dim);
  read(j, "num_heads", c.num_heads);
  read(j, "vocab_size", c.vocab_size);
  read(j, "feature_dim", c.feature_dim);
  read(j, "frame_stack", c.frame_stack);
  read(j, "dropout", c.dropout);
}

inline void to_json(nlohmann::json& j, const FreezePolicy& p) { j = p.patterns; }
inline void from_json(const nlohmann::json& j, FreezePolicy& p) { j.get_to(p.patterns); }

}  // namespace metaxp::asr

namespace metaxp::loss {

inline void to_json(nlohmann::json& j, const LossConfig& c) {
  j = {{"lambda", c.lambda},
       {"label_smoothing", c.label_smoothing},
       {"kld_weight", c.kld_weight},
       {"wca_weight", c.wca_weight}};
}

inline void from_json(const nlohmann::json& j, LossConfig& c) {
  using namespace json_detail;
  expect_keys(j, "loss", {"lambda", "label_smoothing", "kld_weight", "wca_weight"});
  read(j, "lambda", c.lambda);
  read(j, "label_smoothing", c.label_smoothing);
  read(j, "kld_weight", c.kld_weight);
  read(j, "wca_weight", c.wca_weight);
}

}  // namespace metaxp::loss

namespace metaxp::synth {

inline void to_json(nlohmann::json& j, const GenerationSpec& g) {
  j = {{"feature_dim", g.feature_dim},
       {"num_symbols", g.num_symbols},
       {"num_accents", g.num_accents},
       {"emission_scale", g.emission_scale},
       {"noise_std", g.noise_std},
       {"accent_shift_norm", g.accent_shift_norm},
       {"shared_shift_weight", g.shared_shift_weight},
       {"confusions_per_accent", g.confusions_per_accent},
       {"swap_probability", g.swap_probability},
       {"min_duration_scale", g.min_duration_scale},
       {"max_duration_scale", g.max_duration_scale},
       {"source_train", g.source_train},
       {"accent_train", g.accent_train},
       {"source_test", g.source_test},
       {"accent_test", g.accent_test},
       {"seed", g.seed}};
}

inline void from_json(const nlohmann::json& j, GenerationSpec& g) {
  using namespace json_detail;
  expect_keys(j, "generation",
              {"feature_dim", "num_symbols", "num_accents", "emission_scale", "noise_std", "accent_shift_norm",
               "shared_shift_weight", "confusions_per_accent", "swap_probability", "min_duration_scale", "max_duration_scale",
               "source_train", "accent_train", "source_test", "accent_test", "seed"});
  read(j, "feature_dim", g.feature_dim);
  read(j, "num_symbols", g.num_symbols);
  read(j, "num_accents", g.num_accents);
  read(j, "emission_scale", g.emission_scale);
  read(j, "noise_std", g.noise_std);
  read(j, "accent_shift_norm", g.accent_shift_norm);
  read(j, "shared_shift_weight", g.shared_shift_weight);
  read(j, "confusions_per_accent", g.confusions_per_accent);
  read(j, "swap_probability", g.swap_probability);
  read(j, "min_duration_scale", g.min_duration_scale);
  read(j, "max_duration_scale", g.max_duration_scale);
  read(j, "source_train", g.source_train);
  read(j, "accent_train", g.accent_train);
  read(j, "source_test", g.source_test);
  read(j, "accent_test", g.accent_test);
  read(j, "seed", g.seed);
}

}  // namespace metaxp::synth

namespace metaxp::meta {

NLOHMANN_JSON_SERIALIZE_ENUM(Optimizer, {{Optimizer::Adam, "adam"}, {Optimizer::Sgd, "sgd"}})
NLOHMANN_JSON_SERIALIZE_ENUM(Schedule, {{Schedule::Noam, "noam"}, {Schedule::Constant, "constant"}})

inline void to_json(nlohmann::json& j, const TrainerConfig& c) {
  nlohmann::json opt = c.optimizer, sched = c.schedule;
  j = {{"alpha", c.alpha},
       {"beta", c.beta},
       {"inner_steps", c.inner_steps},
       {"batch_size", c.batch_size},
       {"epochs", c.epochs},
       {"warmup_steps", c.warmup_steps},
       {"support_fraction", c.support_fraction},
       {"method", method_name(c.method)},
       {"rng_seed", c.rng_seed},
       {"optimizer", opt},
       {"lr_scale", c.lr_scale},
       {"schedule", sched},
       {"clip_norm", c.clip_norm},
       {"max_steps", c.max_steps}};
  if (c.freeze_policy) j["freeze_policy"] = *c.freeze_policy;
}

inline void from_json(const nlohmann::json& j, TrainerConfig& c) {
  using namespace json_detail;
  expect_keys(j, "trainer",
              {"alpha", "beta", "inner_steps", "batch_size", "epochs", "warmup_steps", "support_fraction", "method",
               "rng_seed", "optimizer", "lr_scale", "schedule", "clip_norm", "max_steps", "freeze_policy"});
  read(j, "alpha", c.alpha);
  read(j, "beta", c.beta);
  read(j, "inner_steps", c.inner_steps);
  read(j, "batch_size", c.batch_size);
  read(j, "epochs", c.epochs);
  read(j, "warmup_steps", c.warmup_steps);
  read(j, "support_fraction", c.support_fraction);
  if (j.contains("method")) c.method = parse_method(j.at("method").get<std::string>());
  read(j, "rng_seed", c.rng_seed);
  if (j.contains("optimizer")) {
    const auto name = j.at("optimizer").get<std::string>();
    if (name != "adam" && name != "sgd") throw ConfigError("trainer: unknown optimizer '" + name + "'");
    j.at("optimizer").get_to(c.optimizer);
  }
  read(j, "lr_scale", c.lr_scale);
  if (j.contains("schedule")) {
    const auto name = j.at("schedule").get<std::string>();
    if (name != "noam" && name != "constant") throw ConfigError("trainer: unknown schedule '" + name + "'");
    j.at("schedule").get_to(c.schedule);
  }
  read(j, "clip_norm", c.clip_norm);
  read(j, "max_steps", c.max_steps);
  if (j.contains("freeze_policy") && !j.at("freeze_policy").is_null()) {
    c.freeze_policy = j.at("freeze_policy").get<asr::FreezePolicy>();
  }
}

}  // namespace metaxp::meta
