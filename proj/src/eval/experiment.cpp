// SPDX-License-Identifier: Apache-2.0
#include "metaxp/experiment.hpp"

#include <chrono>
#include <cmath>
#include <fstream>

#include "metaxp/checkpoint.hpp"
#include "metaxp/error.hpp"
#include "metaxp/ops.hpp"

namespace metaxp::eval {

namespace {

double round4(double v) { return std::round(v * 1e4) / 1e4; }

std::string file_stem(const std::string& label) {
  std::string out;
  for (char c : label) {
    if (c == ':') {
      out += '_';
    } else if (c == '+') {
      out += "plus";
    } else {
      out += c;
    }
  }
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

struct Trained {
  asr::AsrModel model;
  double wall_s = 0.0;
  std::size_t steps = 0;
};

MethodResult score(const std::string& name, const std::string& data, const Trained& trained,
                   const synth::DatasetPartition& tests, const DecodeConfig& decode) {
  MethodResult r;
  r.name = name;
  r.data = data;
  r.cer_source = round4(corpus_cer(trained.model, tests.test_source, decode));
  double sum = 0.0;
  for (const auto& [domain, utts] : tests.test_accent) {
    const double v = round4(corpus_cer(trained.model, utts, decode));
    r.cer_by_domain[domain] = v;
    sum += v;
  }
  r.cer_accent = tests.test_accent.empty() ? 0.0 : round4(sum / static_cast<double>(tests.test_accent.size()));
  r.wall_s = trained.wall_s;
  r.steps = trained.steps;
  r.trainable_fraction = static_cast<double>(trained.model.params.trainable_count()) /
                         static_cast<double>(trained.model.params.parameter_count());
  return r;
}

}  // namespace

const MethodResult& ExperimentReport::row(const std::string& name, const std::string& data) const {
  for (const auto& r : rows) {
    if (r.name == name && r.data == data) return r;
  }
  throw Error("report has no row " + name + " / " + data);
}

double corpus_cer(const asr::AsrModel& model, std::span<const synth::Utterance> tests, const DecodeConfig& decode) {
  if (tests.empty()) throw Error("corpus_cer: empty test set");
  std::size_t edits = 0, symbols = 0;
  for (const auto& utt : tests) {
    ad::Graph g(ad::Mode::Eval);
    asr::BoundParameters bound(g, model.params, false);
    auto enc = asr::encode(model.config, bound, utt.features);
    const Tensor log_probs = ad::log_softmax(asr::ctc_logits(model.config, bound, enc)).value();
    const Sequence hyp = eval::decode(log_probs, decode, model.config.blank());
    edits += edit_distance(utt.labels, hyp);
    symbols += utt.labels.size();
  }
  if (symbols == 0) throw Error("corpus_cer: empty references");
  return static_cast<double>(edits) / static_cast<double>(symbols);
}

ExperimentReport run_experiment(const ExperimentConfig& config, const RunOptions& options) {
  config.validate();
  auto progress = [&](const std::string& msg) {
    if (options.progress) options.progress(msg);
  };
  const std::filesystem::path out_dir = config.output_dir;
  if (options.write_files) {
    std::filesystem::create_directories(out_dir / "logs");
    write_text(out_dir / "config.json", format_config(config));
  }

  std::map<synth::Recipe, synth::DatasetPartition> data;
  auto partition = [&](synth::Recipe recipe) -> const synth::DatasetPartition& {
    auto it = data.find(recipe);
    if (it == data.end()) it = data.emplace(recipe, synth::build_partition(recipe, config.generation)).first;
    return it->second;
  };

  auto run = [&](asr::AsrModel model, const meta::TrainerConfig& tc, synth::Recipe recipe,
                 const std::string& stem) {
    progress("training " + stem + " on " + synth::recipe_name(recipe));
    const auto start = std::chrono::steady_clock::now();
    auto records = meta::train(tc, config.loss, model, partition(recipe).train);
    Trained t{std::move(model), std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(),
              records.size()};
    if (options.write_files) {
      meta::write_training_log(records, out_dir / "logs" / (stem + ".jsonl"));
      asr::save_checkpoint(t.model, out_dir / (stem + ".ckpt"));
    }
    return t;
  };

  ExperimentReport report;
  const synth::DatasetPartition& tests = partition(synth::Recipe::Mandarin);
  const asr::AsrModel init = asr::build_model(config.model, config.seed);
  meta::TrainerConfig base = config.baseline;
  base.method = meta::Method::FT;
  base.freeze_policy.reset();
  base.rng_seed = config.seed;

  const Trained b1 = run(init, base, synth::Recipe::Mandarin, "baseline-1");
  report.rows.push_back(score("Baseline-1", "Mandarin", b1, tests, config.decode));
  const Trained b2 = run(init, base, synth::Recipe::All, "baseline-2");
  report.rows.push_back(score("Baseline-2", "All", b2, tests, config.decode));

  for (const auto& m : config.methods) {
    asr::AsrModel start = b2.model;
    start.params.clear_frozen();
    start.params.take_snapshot();
    const Trained t = run(std::move(start), config.trainer_for(m), m.recipe, file_stem(m.label()));
    report.rows.push_back(score(meta::method_name(m.method), synth::recipe_name(m.recipe), t, tests, config.decode));
  }

  const MethodResult& ref = report.rows[1];
  for (auto& r : report.rows) {
    if (ref.cer_source > 0.0) r.delta_source = (ref.cer_source - r.cer_source) / ref.cer_source;
    if (ref.cer_accent > 0.0) r.delta_accent = (ref.cer_accent - r.cer_accent) / ref.cer_accent;
  }

  if (options.write_files) {
    write_text(out_dir / "report.txt", render_report(report, ReportFormat::Table, false));
    write_text(out_dir / "report.csv", render_report(report, ReportFormat::Csv, false));
    write_text(out_dir / "report.json", render_report(report, ReportFormat::Json, false));
    std::string timing;
    for (const auto& r : report.rows) {
      timing += r.name + "\t" + r.data + "\t" + std::to_string(r.wall_s) + "\t" + std::to_string(r.steps) + "\n";
    }
    write_text(out_dir / "timing.tsv", timing);
  }
  return report;
}

}  // namespace metaxp::eval
