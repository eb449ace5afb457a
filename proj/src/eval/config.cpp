// SPDX-License-Identifier: Apache-2.0
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "metaxp/error.hpp"
#include "metaxp/experiment.hpp"
#include "metaxp/json_io.hpp"

namespace metaxp::eval {

MethodRun MethodRun::parse(const std::string& text) {
  MethodRun run;
  const auto colon = text.find(':');
  run.method = meta::parse_method(text.substr(0, colon));
  if (colon != std::string::npos) run.recipe = synth::parse_recipe(text.substr(colon + 1));
  if (run.recipe == synth::Recipe::Mandarin || run.recipe == synth::Recipe::All) {
    throw ConfigError("expansion runs use the Accent or Accent+ recipe, got " + text);
  }
  return run;
}

std::string MethodRun::label() const {
  std::string out = meta::method_name(method);
  if (recipe != synth::Recipe::Accent) out += std::string(":") + synth::recipe_name(recipe);
  return out;
}

ExperimentConfig ExperimentConfig::defaults() {
  ExperimentConfig c;
  c.model.vocab_size = c.generation.num_symbols + 2;
  c.model.feature_dim = c.generation.feature_dim;

  c.baseline.method = meta::Method::FT;
  c.baseline.epochs = 10;
  c.baseline.batch_size = 16;
  c.baseline.warmup_steps = 300;
  c.baseline.lr_scale = 2.0;

  c.trainer.epochs = 4;
  c.trainer.batch_size = 16;
  c.trainer.warmup_steps = 200;
  c.trainer.lr_scale = 1.0;
  c.trainer.alpha = 0.05;
  c.trainer.beta = 5.0;

  for (const char* m : {"FT", "KLD", "KLD:Accent+", "WCA", "FMP", "MAML", "MAML:Accent+", "MAML_FMP",
                        "MAML_FMP:Accent+"}) {
    c.methods.push_back(MethodRun::parse(m));
  }
  return c;
}

void ExperimentConfig::validate() const {
  if (version != kConfigVersion) {
    throw ConfigError("unsupported config version " + std::to_string(version) + " (expected " +
                      std::to_string(kConfigVersion) + ")");
  }
  model.validate();
  loss.validate();
  generation.validate();
  baseline.validate();
  trainer.validate();
  decode.validate();
  if (model.feature_dim != generation.feature_dim) {
    throw ConfigError("model.feature_dim must equal generation.feature_dim");
  }
  if (model.vocab_size != generation.num_symbols + 2) {
    throw ConfigError("model.vocab_size must equal generation.num_symbols + 2 (blank and sos/eos)");
  }
  if (generation.num_accents == 0) throw ConfigError("generation.num_accents must be >= 1");
  for (const auto& [name, t] : method_trainers) {
    meta::parse_method(name);
    t.validate();
  }
  for (const auto& run : methods) {
    trainer_for(run).validate();
    if (run.recipe == synth::Recipe::AccentPlus &&
        generation.source_train < generation.accent_train * generation.num_accents) {
      throw ConfigError(run.label() + ": Accent+ needs generation.source_train >= accent_train * num_accents");
    }
  }
  if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
}

meta::TrainerConfig ExperimentConfig::trainer_for(const MethodRun& run) const {
  auto it = method_trainers.find(meta::method_name(run.method));
  meta::TrainerConfig t = it != method_trainers.end() ? it->second : trainer;
  t.method = run.method;
  t.rng_seed = seed;
  return t;
}

ExperimentConfig parse_config(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    // nlohmann reports a byte offset; convert it to a line number.
    const std::size_t upto = std::min<std::size_t>(e.byte, text.size());
    std::size_t line = 1;
    for (std::size_t i = 0; i < upto; ++i) line += text[i] == '\n';
    throw ParseError(line, std::string("invalid JSON: ") + e.what());
  }
  ExperimentConfig c;
  try {
    json_detail::expect_keys(j, "config", {"version", "seed", "model", "loss", "generation", "baseline", "trainer",
                                           "method_trainers", "methods", "decode", "output_dir"});
    if (!j.contains("version")) throw ConfigError("config: missing 'version'");
    j.at("version").get_to(c.version);
    if (c.version != kConfigVersion) {
      throw ConfigError("unsupported config version " + std::to_string(c.version));
    }
    json_detail::read(j, "seed", c.seed);
    if (j.contains("generation")) j.at("generation").get_to(c.generation);
    c.model.vocab_size = c.generation.num_symbols + 2;
    c.model.feature_dim = c.generation.feature_dim;
    if (j.contains("model")) asr::from_json(j.at("model"), c.model);
    if (j.contains("loss")) j.at("loss").get_to(c.loss);
    if (j.contains("baseline")) meta::from_json(j.at("baseline"), c.baseline);
    if (j.contains("trainer")) meta::from_json(j.at("trainer"), c.trainer);
    if (j.contains("method_trainers")) {
      for (const auto& [name, patch] : j.at("method_trainers").items()) {
        meta::TrainerConfig t = c.trainer;
        meta::from_json(patch, t);
        c.method_trainers[meta::method_name(meta::parse_method(name))] = t;
      }
    }
    if (j.contains("methods")) {
      for (const auto& m : j.at("methods")) c.methods.push_back(MethodRun::parse(m.get<std::string>()));
    }
    if (j.contains("decode")) {
      const auto& d = j.at("decode");
      json_detail::expect_keys(d, "decode", {"mode", "beam_size"});
      if (d.contains("mode")) c.decode.mode = parse_decode_mode(d.at("mode").get<std::string>());
      json_detail::read(d, "beam_size", c.decode.beam_size);
    }
    json_detail::read(j, "output_dir", c.output_dir);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

std::string format_config(const ExperimentConfig& c) {
  nlohmann::ordered_json j;
  j["version"] = c.version;
  j["seed"] = c.seed;
  j["model"] = nlohmann::json(c.model);
  j["loss"] = nlohmann::json(c.loss);
  j["generation"] = nlohmann::json(c.generation);
  j["baseline"] = nlohmann::json(c.baseline);
  j["trainer"] = nlohmann::json(c.trainer);
  j["method_trainers"] = nlohmann::ordered_json::object();
  for (const auto& [name, t] : c.method_trainers) j["method_trainers"][name] = nlohmann::json(t);
  j["methods"] = nlohmann::ordered_json::array();
  for (const auto& run : c.methods) j["methods"].push_back(run.label());
  j["decode"] = {{"mode", decode_mode_name(c.decode.mode)}, {"beam_size", c.decode.beam_size}};
  j["output_dir"] = c.output_dir;
  return j.dump(2) + "\n";
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config: " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

}  // namespace metaxp::eval
