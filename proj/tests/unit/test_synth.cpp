// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <set>

#include "doctest.h"
#include "helpers.hpp"
#include "metaxp/dataset_io.hpp"
#include "metaxp/error.hpp"
#include "metaxp/oracles.hpp"
#include "metaxp/synth.hpp"

using namespace metaxp;
using namespace metaxp::synth;

namespace {

std::size_t nearest_mean(const EmissionTable& table, const Tensor& features, std::size_t t) {
  std::size_t best = 0;
  double best_d = INFINITY;
  for (std::size_t m = 0; m < table.means.size(); ++m) {
    double d = 0.0;
    for (std::size_t f = 0; f < table.feature_dim(); ++f) {
      const double diff = features.at(t, f) - table.means[m][f];
      d += diff * diff;
    }
    if (d < best_d) {
      best_d = d;
      best = m;
    }
  }
  return best;
}

// Runs of nearest-mean rows, silence included.
std::vector<std::size_t> frame_runs(const EmissionTable& table, const Tensor& features) {
  std::vector<std::size_t> runs;
  for (std::size_t t = 0; t < features.rows(); ++t) {
    const auto m = nearest_mean(table, features, t);
    if (runs.empty() || runs.back() != m) runs.push_back(m);
  }
  return runs;
}

std::vector<std::size_t> oracle_decode(const EmissionTable& table, const Tensor& features) {
  std::vector<std::size_t> out;
  for (auto m : frame_runs(table, features)) {
    if (m != 0) out.push_back(m);
  }
  return out;
}

double oracle_cer(const DomainSpec& domain, const EmissionTable& table, std::size_t count) {
  std::size_t edits = 0, total = 0;
  for (const auto& u : generate_domain(domain, table, count, 99)) {
    edits += oracle::edit_distance_recursive(u.labels, oracle_decode(table, u.features));
    total += u.labels.size();
  }
  return static_cast<double>(edits) / static_cast<double>(total);
}

std::set<std::string> ids(const std::vector<Utterance>& utts) {
  std::set<std::string> out;
  for (const auto& u : utts) out.insert(u.id);
  return out;
}

}  // namespace

TEST_CASE("noiseless source frames are exact means and decode without errors") {
  GenerationSpec spec;
  const auto table = make_emissions(spec);
  auto g = source_domain(spec);
  g.noise_std = 0.0;
  for (const auto& u : generate_domain(g, table, 300, 3)) {
    for (std::size_t t = 0; t < u.features.rows(); ++t) {
      const auto& mean = table.means[nearest_mean(table, u.features, t)];
      for (std::size_t f = 0; f < spec.feature_dim; ++f) CHECK(u.features.at(t, f) == mean[f]);
    }
    CHECK(oracle_decode(table, u.features) == u.labels);
  }
}

TEST_CASE("generation is deterministic") {
  const auto spec = testutil::tiny_generation();
  CHECK(build_partition(Recipe::All, spec) == build_partition(Recipe::All, spec));
  const auto table = make_emissions(spec);
  const auto accent = accent_domains(spec).front();
  CHECK(generate_domain(accent, table, 50, 4) == generate_domain(accent, table, 50, 4));
  CHECK(generate_domain(accent, table, 50, 4) != generate_domain(accent, table, 50, 5));
}

TEST_CASE("confusion swap frequency") {
  GenerationSpec spec;
  const auto table = make_emissions(spec);
  DomainSpec d = source_domain(spec);
  d.domain_id = "A1";
  d.accent_shift.assign(spec.feature_dim, 0.0);
  d.noise_std = 0.0;
  d.confusion_pairs = {Confusion{3, 7, 0.3}};
  std::size_t segments = 0, swapped = 0;
  std::size_t index_seed = 0;
  while (segments < 10000) {
    for (const auto& u : generate_domain(d, table, 2000, 1000 + index_seed++)) {
      bool adjacent = false;
      for (std::size_t i = 0; i + 1 < u.labels.size(); ++i) {
        if ((u.labels[i] == 3 && u.labels[i + 1] == 7) || (u.labels[i] == 7 && u.labels[i + 1] == 3)) adjacent = true;
      }
      if (adjacent) continue;
      const auto runs = frame_runs(table, u.features);
      REQUIRE(runs.size() == u.labels.size() + 2);
      for (std::size_t i = 0; i < u.labels.size(); ++i) {
        if (u.labels[i] != 3) {
          CHECK(runs[i + 1] == u.labels[i]);
          continue;
        }
        ++segments;
        if (runs[i + 1] == 7) ++swapped;
      }
    }
  }
  const double fraction = static_cast<double>(swapped) / static_cast<double>(segments);
  CAPTURE(segments);
  CHECK(fraction == doctest::Approx(0.3).epsilon(0.1));
}

TEST_CASE("oracle decoder degrades with noise and with swap probability") {
  GenerationSpec spec;
  const auto table = make_emissions(spec);
  auto g = source_domain(spec);
  double previous = -1.0;
  for (double noise : {0.0, 0.2, 0.4, 0.6, 0.8}) {
    g.noise_std = noise;
    const double cer = oracle_cer(g, table, 10000);
    CAPTURE(noise);
    if (noise == 0.0) CHECK(cer == 0.0);
    CHECK(cer >= previous - 0.005);
    previous = cer;
  }
  g.noise_std = 0.0;
  g.domain_id = "A1";
  previous = -1.0;
  for (double p : {0.0, 0.1, 0.2, 0.3, 0.5}) {
    g.confusion_pairs = {Confusion{1, 2, p}, Confusion{4, 5, p}};
    const double cer = oracle_cer(g, table, 10000);
    CHECK(cer >= previous - 0.005);
    previous = cer;
  }
  CHECK(previous > 0.0);
}

TEST_CASE("domain specs") {
  GenerationSpec spec;
  const auto g = source_domain(spec);
  CHECK(g.is_source());
  CHECK(g.confusion_pairs.empty());
  CHECK(g.duration_scale == 1.0);
  for (double v : g.accent_shift) CHECK(v == 0.0);

  const auto accents = accent_domains(spec);
  CHECK(accents.size() == spec.num_accents);
  for (const auto& a : accents) {
    double norm = 0.0;
    for (double v : a.accent_shift) norm += v * v;
    CHECK(std::sqrt(norm) == doctest::Approx(spec.accent_shift_norm).epsilon(1e-12));
    for (const auto& c : a.confusion_pairs) {
      CHECK(c.probability >= 0.0);
      CHECK(c.probability <= 0.5);
    }
    CHECK(a.duration_scale >= spec.min_duration_scale);
    CHECK(a.duration_scale <= spec.max_duration_scale);
  }

  DomainSpec bad = accents.front();
  bad.confusion_pairs.front().probability = 0.7;
  CHECK_THROWS_AS(bad.validate(spec.feature_dim, spec.num_symbols), ConfigError);
  bad = accents.front();
  bad.confusion_pairs.front().to = spec.num_symbols + 1;
  CHECK_THROWS_AS(bad.validate(spec.feature_dim, spec.num_symbols), ConfigError);

  auto wrong = spec;
  wrong.shared_shift_weight = 1.5;
  CHECK_THROWS_AS(wrong.validate(), ConfigError);
}

TEST_CASE("utterances are alignable after frame stacking") {
  GenerationSpec spec;
  spec.min_duration_scale = 0.5;
  for (const auto& d : accent_domains(spec)) {
    for (const auto& u : generate_domain(d, make_emissions(spec), 200, 8)) {
      CHECK(!u.labels.empty());
      CHECK(u.features.rows() >= 2 * u.labels.size() + 1);
      const std::size_t stacked = (u.features.rows() + 1) / 2;
      CHECK(stacked >= u.labels.size() + 1);
    }
  }
}

TEST_CASE("recipes") {
  const auto spec = testutil::tiny_generation();
  const auto mandarin = build_partition(Recipe::Mandarin, spec);
  CHECK(mandarin.train.size() == spec.source_train);
  for (const auto& u : mandarin.train) CHECK(u.domain_id == "G");

  const auto accent = build_partition(Recipe::Accent, spec);
  CHECK(accent.train.size() == spec.accent_train * spec.num_accents);
  for (const auto& u : accent.train) CHECK(u.domain_id != "G");

  const auto plus = build_partition(Recipe::AccentPlus, spec);
  std::size_t source = 0;
  for (const auto& u : plus.train) source += u.domain_id == "G";
  CHECK(source == spec.accent_train * spec.num_accents);
  CHECK(plus.train.size() == 2 * source);

  const auto all = build_partition(Recipe::All, spec);
  CHECK(all.train.size() == spec.source_train + spec.accent_train * spec.num_accents);

  for (const auto* part : {&mandarin, &accent, &plus, &all}) {
    CHECK(part->test_source == mandarin.test_source);
    CHECK(part->test_accent == mandarin.test_accent);
    auto train_ids = ids(part->train);
    CHECK(train_ids.size() == part->train.size());
    for (const auto& id : ids(part->test_source)) CHECK(train_ids.count(id) == 0);
    for (const auto& [domain, utts] : part->test_accent) {
      for (const auto& id : ids(utts)) CHECK(train_ids.count(id) == 0);
    }
  }

  auto short_source = spec;
  short_source.source_train = 5;
  CHECK_THROWS_AS(build_partition(Recipe::AccentPlus, short_source), ConfigError);
  CHECK(parse_recipe("Accent+") == Recipe::AccentPlus);
  CHECK_THROWS_AS(parse_recipe("Cantonese"), ConfigError);
}

TEST_CASE("dataset file round trip and damage") {
  const auto part = build_partition(Recipe::AccentPlus, testutil::tiny_generation());
  const std::string text = format_dataset(part);
  CHECK(parse_dataset(text) == part);

  const auto cut = text.substr(0, text.size() / 2);
  try {
    parse_dataset(cut);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() > 1);
  }

  std::string flipped = text;
  const auto pos = flipped.find("section train");
  REQUIRE(pos != std::string::npos);
  const auto digit = flipped.find_first_of("123456789", flipped.find('\n', pos) + 1);
  flipped[digit] = flipped[digit] == '9' ? '8' : '9';
  CHECK_THROWS_AS(parse_dataset(flipped), IntegrityError);

  try {
    parse_dataset("METAXP-DATASET 1\nrecipe Accent\nbogus\n");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 3);
  }
}
