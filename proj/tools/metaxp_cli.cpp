// SPDX-License-Identifier: Apache-2.0
// metaxp: dataset generation, training, evaluation, the comparison grid and
// the oracle self-tests.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 self-test,
// invariant or runtime failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "metaxp/checkpoint.hpp"
#include "metaxp/dataset_io.hpp"
#include "metaxp/error.hpp"
#include "metaxp/experiment.hpp"
#include "metaxp/json_io.hpp"
#include "metaxp/kernels.hpp"
#include "metaxp/selftest.hpp"

namespace {

using namespace metaxp;
namespace fs = std::filesystem;

constexpr int kUsage = 1;
constexpr int kFailure = 2;

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string format = "table";
};

eval::ExperimentConfig resolve_config(const Common& c) {
  eval::ExperimentConfig cfg = c.config_path.empty() ? eval::ExperimentConfig::defaults()
                                                     : eval::load_config(c.config_path);
  if (c.seed) cfg.seed = *c.seed;
  if (!c.out.empty()) cfg.output_dir = c.out;
  cfg.validate();
  return cfg;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

std::string dataset_stem(synth::Recipe r) {
  switch (r) {
    case synth::Recipe::Mandarin: return "mandarin";
    case synth::Recipe::All: return "all";
    case synth::Recipe::Accent: return "accent";
    case synth::Recipe::AccentPlus: return "accent_plus";
  }
  return "data";
}

int cmd_gen(const Common& c) {
  auto cfg = resolve_config(c);
  fs::create_directories(cfg.output_dir);
  const std::string spec = nlohmann::json(cfg.generation).dump();
  for (auto r : {synth::Recipe::Mandarin, synth::Recipe::All, synth::Recipe::Accent, synth::Recipe::AccentPlus}) {
    const fs::path path = fs::path(cfg.output_dir) / (dataset_stem(r) + ".mxd");
    const auto part = synth::build_partition(r, cfg.generation);
    synth::write_dataset(part, path, spec);
    std::printf("%s: %zu train, %zu source test, %zu accent domains\n", path.string().c_str(), part.train.size(),
                part.test_source.size(), part.test_accent.size());
  }
  return 0;
}

int cmd_train(const Common& c, const std::string& method, const std::string& recipe, const std::string& init,
              const std::string& dataset) {
  auto cfg = resolve_config(c);
  const auto run = eval::MethodRun{meta::parse_method(method), synth::parse_recipe(recipe)};
  asr::AsrModel model;
  meta::TrainerConfig trainer;
  if (init.empty()) {
    model = asr::build_model(cfg.model, cfg.seed);
    trainer = cfg.baseline;
    trainer.method = run.method;
    trainer.rng_seed = cfg.seed;
  } else {
    model = asr::load_checkpoint(init);
    model.params.clear_frozen();
    model.params.take_snapshot();
    trainer = cfg.trainer_for(run);
  }
  const auto data = dataset.empty() ? synth::build_partition(run.recipe, cfg.generation) : synth::read_dataset(dataset);
  fs::create_directories(cfg.output_dir);
  write_file(fs::path(cfg.output_dir) / "config.json", eval::format_config(cfg));
  const auto records = meta::train(trainer, cfg.loss, model, data.train, [](const meta::StepRecord& r) {
    if (r.iteration % 50 == 0) std::fprintf(stderr, "step %zu loss %.4f\n", r.iteration, r.train_loss);
  });
  meta::write_training_log(records, fs::path(cfg.output_dir) / "train_log.jsonl");
  asr::save_checkpoint(model, fs::path(cfg.output_dir) / "model.ckpt");
  std::printf("trained %s on %s: %zu steps, %zu/%zu trainable parameters\n", meta::method_name(run.method),
              data.recipe.c_str(), records.size(), model.params.trainable_count(), model.params.parameter_count());
  return 0;
}

int cmd_eval(const Common& c, const std::string& checkpoint, const std::string& dataset) {
  auto cfg = resolve_config(c);
  const auto model = asr::load_checkpoint(checkpoint);
  const auto data =
      dataset.empty() ? synth::build_partition(synth::Recipe::Mandarin, cfg.generation) : synth::read_dataset(dataset);
  eval::MethodResult r;
  r.name = fs::path(checkpoint).stem().string();
  r.data = data.recipe;
  r.cer_source = eval::corpus_cer(model, data.test_source, cfg.decode);
  double sum = 0.0;
  for (const auto& [domain, utts] : data.test_accent) {
    r.cer_by_domain[domain] = eval::corpus_cer(model, utts, cfg.decode);
    sum += r.cer_by_domain[domain];
  }
  r.cer_accent = data.test_accent.empty() ? 0.0 : sum / static_cast<double>(data.test_accent.size());
  r.trainable_fraction =
      static_cast<double>(model.params.trainable_count()) / static_cast<double>(model.params.parameter_count());
  eval::ExperimentReport report{{r}};
  std::fputs(eval::render_report(report, eval::parse_report_format(c.format), false).c_str(), stdout);
  return 0;
}

int cmd_compare(const Common& c) {
  auto cfg = resolve_config(c);
  eval::RunOptions options;
  options.progress = [](const std::string& msg) { std::fprintf(stderr, "%s\n", msg.c_str()); };
  const auto report = eval::run_experiment(cfg, options);
  std::fputs(eval::render_report(report, eval::parse_report_format(c.format), true).c_str(), stdout);
  return 0;
}

int cmd_selftest(const Common& c) {
  const std::uint64_t seed = c.seed.value_or(1);
  std::printf("kernel backend: %s\n", std::string(kernels::backend_name(kernels::active_backend())).c_str());
  bool ok = true;
  for (const auto& o : selftest::run_all(seed)) {
    std::printf("%-16s %s  %s (%.2f s)\n", o.name.c_str(), o.passed ? "PASS" : "FAIL", o.detail.c_str(), o.seconds);
    ok = ok && o.passed;
  }
  return ok ? 0 : kFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Meta-learning accent domain expansion experiments"};
  app.require_subcommand(1);
  Common common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config_path, "Experiment config (JSON)")->check(CLI::ExistingFile);
    sub->add_option("--seed", common.seed, "Override the config seed");
    sub->add_option("--out", common.out, "Output directory");
    sub->add_option("--format", common.format, "Report format")->check(CLI::IsMember({"table", "csv", "json"}));
  };

  auto* gen = app.add_subcommand("gen", "Write the synthetic datasets for every data recipe");
  add_common(gen);

  std::string method = "FT", recipe = "Accent", init, checkpoint, dataset;
  auto* train = app.add_subcommand("train", "Train one method");
  add_common(train);
  train->add_option("--method", method, "FT, WCA, KLD, FMP, MAML or MAML_FMP");
  train->add_option("--recipe", recipe, "Mandarin, All, Accent or Accent+");
  train->add_option("--init", init, "Warm-start checkpoint (its values become the snapshot)")
      ->check(CLI::ExistingFile);
  train->add_option("--dataset", dataset, "Dataset file instead of generating")->check(CLI::ExistingFile);

  auto* ev = app.add_subcommand("eval", "Score a checkpoint on the test sets");
  add_common(ev);
  ev->add_option("--checkpoint", checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  ev->add_option("--dataset", dataset, "Dataset file instead of generating")->check(CLI::ExistingFile);

  auto* compare = app.add_subcommand("compare", "Run the full method grid and print the report");
  add_common(compare);

  auto* self = app.add_subcommand("selftest", "Run the oracle suites");
  add_common(self);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsage;
  }

  try {
    if (*gen) return cmd_gen(common);
    if (*train) return cmd_train(common, method, recipe, init, dataset);
    if (*ev) return cmd_eval(common, checkpoint, dataset);
    if (*compare) return cmd_compare(common);
    if (*self) return cmd_selftest(common);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kUsage;
  } catch (const ParseError& e) {
    std::fprintf(stderr, "parse error: %s\n", e.what());
    return kUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kFailure;
  }
  return kUsage;
}
