// SPDX-License-Identifier: Apache-2.0
#pragma once

// Synthetic multi-domain speech stand-in. Each output symbol owns a mean
// feature vector; an utterance emits a run of noisy frames per symbol.
// Accent domains perturb this process three ways: a constant feature shift,
// substitution of the emitted mean for confusable symbol pairs (the label
// keeps the intended symbol), and a duration multiplier.

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "metaxp/tensor.hpp"

namespace metaxp::synth {

struct Confusion {
  std::size_t from = 0;
  std::size_t to = 0;
  double probability = 0.0;
  friend bool operator==(const Confusion&, const Confusion&) = default;
};

struct DomainSpec {
  std::string domain_id;               // "G" or "A1".."An"
  std::vector<double> accent_shift;    // feature_dim entries, zero for G
  std::vector<Confusion> confusion_pairs;
  double duration_scale = 1.0;
  double noise_std = 0.0;

  bool is_source() const { return domain_id == "G"; }
  void validate(std::size_t feature_dim, std::size_t num_symbols) const;
  friend bool operator==(const DomainSpec&, const DomainSpec&) = default;
};

// Row 0 is the silence mean; rows 1..num_symbols are symbol means.
struct EmissionTable {
  std::vector<std::vector<double>> means;

  std::size_t num_symbols() const { return means.empty() ? 0 : means.size() - 1; }
  std::size_t feature_dim() const { return means.empty() ? 0 : means[0].size(); }
};

struct Utterance {
  std::string id;
  std::string domain_id;
  Tensor features;                  // T x feature_dim
  std::vector<std::size_t> labels;  // symbols in 1..num_symbols
  friend bool operator==(const Utterance&, const Utterance&) = default;
};

enum class Recipe { Mandarin, All, Accent, AccentPlus };

const char* recipe_name(Recipe recipe);
// Accepts "Mandarin", "All", "Accent", "Accent+". Throws ConfigError.
Recipe parse_recipe(const std::string& name);

struct DatasetPartition {
  std::string recipe;
  std::vector<Utterance> train;
  std::vector<Utterance> test_source;
  std::map<std::string, std::vector<Utterance>> test_accent;
  friend bool operator==(const DatasetPartition&, const DatasetPartition&) = default;
};

// Everything that determines the synthetic world and the split sizes.
struct GenerationSpec {
  std::size_t feature_dim = 8;
  std::size_t num_symbols = 10;
  std::size_t num_accents = 11;
  double emission_scale = 1.0;
  double noise_std = 0.5;
  double accent_shift_norm = 1.5;
  // Weight in [0, 1] of a direction common to every accent in each accent's
  // shift; the rest of the shift is accent-specific.
  double shared_shift_weight = 0.6;
  std::size_t confusions_per_accent = 2;
  double swap_probability = 0.3;
  double min_duration_scale = 0.75;
  double max_duration_scale = 1.5;
  std::size_t source_train = 2400;
  std::size_t accent_train = 200;  // per accent
  std::size_t source_test = 200;
  std::size_t accent_test = 200;   // per accent
  std::uint64_t seed = 7;

  void validate() const;
  friend bool operator==(const GenerationSpec&, const GenerationSpec&) = default;
};

EmissionTable make_emissions(const GenerationSpec& spec);
DomainSpec source_domain(const GenerationSpec& spec);
std::vector<DomainSpec> accent_domains(const GenerationSpec& spec);

// Utterance i draws from its own stream keyed by (seed, domain, i), so the
// output does not depend on generation order. Ids are
// "<domain>-<tag>-<index>".
std::vector<Utterance> generate_domain(const DomainSpec& spec, const EmissionTable& emissions, std::size_t count,
                                       std::uint64_t seed, const std::string& tag = "u");

DatasetPartition build_partition(Recipe recipe, const GenerationSpec& spec);

}  // namespace metaxp::synth
