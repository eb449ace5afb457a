// SPDX-License-Identifier: Apache-2.0
#pragma once

// Experiment grid: two baselines trained from scratch (source only, and
// source plus all accents), then each expansion method warm-started from
// the second baseline and trained on its data recipe. Every model is scored
// on the same source and per-accent test sets.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "metaxp/decode.hpp"
#include "metaxp/losses.hpp"
#include "metaxp/model.hpp"
#include "metaxp/synth.hpp"
#include "metaxp/trainer.hpp"

namespace metaxp::eval {

inline constexpr int kConfigVersion = 1;

struct MethodRun {
  meta::Method method = meta::Method::FT;
  synth::Recipe recipe = synth::Recipe::Accent;

  // "<METHOD>" (Accent data) or "<METHOD>:<recipe>".
  static MethodRun parse(const std::string& text);
  std::string label() const;
  friend bool operator==(const MethodRun&, const MethodRun&) = default;
};

struct ExperimentConfig {
  int version = kConfigVersion;
  std::uint64_t seed = 1;  // model initialisation and trainer streams
  asr::ModelConfig model;
  loss::LossConfig loss;
  synth::GenerationSpec generation;
  meta::TrainerConfig baseline;  // both baselines; method is ignored
  meta::TrainerConfig trainer;   // expansion runs; method comes from the run
  // Per-method replacements for `trainer`, keyed by method name.
  std::map<std::string, meta::TrainerConfig> method_trainers;
  std::vector<MethodRun> methods;
  DecodeConfig decode;
  std::string output_dir = "out";

  // The full default grid.
  static ExperimentConfig defaults();
  // Throws ConfigError on the first inconsistency.
  void validate() const;
  meta::TrainerConfig trainer_for(const MethodRun& run) const;
};

// Versioned JSON document. Throws ConfigError (with the offending key) or
// ParseError (invalid JSON).
ExperimentConfig parse_config(const std::string& text);
std::string format_config(const ExperimentConfig& config);
ExperimentConfig load_config(const std::filesystem::path& path);

struct MethodResult {
  std::string name;  // "Baseline-1", "Baseline-2" or the method tag
  std::string data;  // recipe name
  double cer_source = 0.0;
  double cer_accent = 0.0;  // mean over accent domains
  std::map<std::string, double> cer_by_domain;
  double wall_s = 0.0;
  std::size_t steps = 0;
  double trainable_fraction = 1.0;
  // (baseline - value) / baseline against Baseline-2; unset when the
  // baseline CER is 0.
  std::optional<double> delta_source;
  std::optional<double> delta_accent;
};

struct ExperimentReport {
  std::vector<MethodResult> rows;  // baselines first, then config order

  const MethodResult& row(const std::string& name, const std::string& data) const;
};

// Corpus-level CER (total edits over total reference symbols) of the CTC
// branch over a test list.
double corpus_cer(const asr::AsrModel& model, std::span<const synth::Utterance> tests, const DecodeConfig& decode);

struct RunOptions {
  // Writes checkpoints, training logs, the resolved config and report files
  // under config.output_dir when set.
  bool write_files = true;
  std::function<void(const std::string&)> progress;
};

ExperimentReport run_experiment(const ExperimentConfig& config, const RunOptions& options = {});

enum class ReportFormat { Table, Csv, Json };
ReportFormat parse_report_format(const std::string& name);

// Columns: Method, Data, CER_source, CER_accent, Δsource%, Δaccent%,
// wall_s, trainable%. CERs have 4 decimals. include_timing=false drops
// wall_s so reruns render byte-identically.
std::string render_report(const ExperimentReport& report, ReportFormat format, bool include_timing = true);

}  // namespace metaxp::eval
