// SPDX-License-Identifier: Apache-2.0
#include "metaxp/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "metaxp/checksum.hpp"
#include "metaxp/error.hpp"
#include "metaxp/random.hpp"

namespace metaxp::synth {

namespace {

std::uint64_t domain_key(const std::string& domain_id) {
  Fnv1a64 h;
  h.update(domain_id);
  return h.digest();
}

std::string utterance_id(const std::string& domain, const std::string& tag, std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06zu", index);
  return domain + "-" + tag + "-" + buf;
}

std::vector<double> unit_vector(Rng& rng, std::size_t dim) {
  std::vector<double> v(dim);
  double norm = 0.0;
  for (auto& x : v) {
    x = normal(rng);
    norm += x * x;
  }
  norm = std::sqrt(norm);
  for (auto& x : v) x /= norm;
  return v;
}

}  // namespace

const char* recipe_name(Recipe recipe) {
  switch (recipe) {
    case Recipe::Mandarin: return "Mandarin";
    case Recipe::All: return "All";
    case Recipe::Accent: return "Accent";
    case Recipe::AccentPlus: return "Accent+";
  }
  return "?";
}

Recipe parse_recipe(const std::string& name) {
  if (name == "Mandarin") return Recipe::Mandarin;
  if (name == "All") return Recipe::All;
  if (name == "Accent") return Recipe::Accent;
  if (name == "Accent+") return Recipe::AccentPlus;
  throw ConfigError("unknown data recipe: " + name);
}

void DomainSpec::validate(std::size_t feature_dim, std::size_t num_symbols) const {
  if (domain_id.empty()) throw ConfigError("domain_id must not be empty");
  if (accent_shift.size() != feature_dim) {
    throw ConfigError("domain " + domain_id + ": accent_shift has " + std::to_string(accent_shift.size()) +
                      " entries, expected " + std::to_string(feature_dim));
  }
  if (!(duration_scale > 0.0)) throw ConfigError("domain " + domain_id + ": duration_scale must be > 0");
  if (!(noise_std >= 0.0)) throw ConfigError("domain " + domain_id + ": noise_std must be >= 0");
  for (const auto& c : confusion_pairs) {
    if (c.from < 1 || c.from > num_symbols || c.to < 1 || c.to > num_symbols || c.from == c.to) {
      throw ConfigError("domain " + domain_id + ": invalid confusion pair");
    }
    if (!(c.probability >= 0.0 && c.probability <= 0.5)) {
      throw ConfigError("domain " + domain_id + ": swap probability must be in [0, 0.5]");
    }
  }
  if (is_source()) {
    const bool zero_shift = std::all_of(accent_shift.begin(), accent_shift.end(), [](double v) { return v == 0.0; });
    if (!zero_shift || !confusion_pairs.empty() || duration_scale != 1.0) {
      throw ConfigError("source domain G must have zero shift, no confusions and duration_scale 1");
    }
  }
}

void GenerationSpec::validate() const {
  if (feature_dim == 0 || num_symbols < 2) throw ConfigError("generation: need feature_dim >= 1 and >= 2 symbols");
  if (!(noise_std >= 0.0) || !(emission_scale > 0.0)) throw ConfigError("generation: bad noise/emission scale");
  if (!(swap_probability >= 0.0 && swap_probability <= 0.5)) {
    throw ConfigError("generation: swap_probability must be in [0, 0.5]");
  }
  if (!(shared_shift_weight >= 0.0 && shared_shift_weight <= 1.0)) {
    throw ConfigError("generation: shared_shift_weight must be in [0, 1]");
  }
  if (!(min_duration_scale > 0.0 && max_duration_scale >= min_duration_scale)) {
    throw ConfigError("generation: bad duration scale range");
  }
  if (confusions_per_accent > 0 && num_symbols < 2) throw ConfigError("generation: confusions need 2 symbols");
}

EmissionTable make_emissions(const GenerationSpec& spec) {
  spec.validate();
  Rng rng = make_rng(spec.seed, {0xe1});
  EmissionTable table;
  table.means.assign(spec.num_symbols + 1, std::vector<double>(spec.feature_dim, 0.0));
  for (std::size_t s = 1; s <= spec.num_symbols; ++s) {
    for (auto& v : table.means[s]) v = normal(rng, 0.0, spec.emission_scale);
  }
  return table;
}

DomainSpec source_domain(const GenerationSpec& spec) {
  return DomainSpec{"G", std::vector<double>(spec.feature_dim, 0.0), {}, 1.0, spec.noise_std};
}

std::vector<DomainSpec> accent_domains(const GenerationSpec& spec) {
  spec.validate();
  std::vector<DomainSpec> out;
  Rng shared_rng = make_rng(spec.seed, {0xacc, 0});
  const auto shared = unit_vector(shared_rng, spec.feature_dim);
  for (std::size_t k = 1; k <= spec.num_accents; ++k) {
    Rng rng = make_rng(spec.seed, {0xacc, k});
    DomainSpec d;
    d.domain_id = "A" + std::to_string(k);
    const auto own = unit_vector(rng, spec.feature_dim);
    d.accent_shift.resize(spec.feature_dim);
    for (std::size_t f = 0; f < spec.feature_dim; ++f) {
      d.accent_shift[f] = spec.shared_shift_weight * shared[f] + (1.0 - spec.shared_shift_weight) * own[f];
    }
    double norm = 0.0;
    for (auto v : d.accent_shift) norm += v * v;
    norm = std::sqrt(norm);
    for (auto& v : d.accent_shift) v *= spec.accent_shift_norm / norm;
    std::vector<std::size_t> used;
    while (d.confusion_pairs.size() < spec.confusions_per_accent) {
      const auto from = static_cast<std::size_t>(uniform_int(rng, 1, static_cast<std::int64_t>(spec.num_symbols)));
      const auto to = static_cast<std::size_t>(uniform_int(rng, 1, static_cast<std::int64_t>(spec.num_symbols)));
      if (from == to || std::find(used.begin(), used.end(), from) != used.end()) continue;
      used.push_back(from);
      d.confusion_pairs.push_back(Confusion{from, to, spec.swap_probability});
    }
    d.duration_scale = uniform(rng, spec.min_duration_scale, spec.max_duration_scale);
    d.noise_std = spec.noise_std;
    out.push_back(std::move(d));
  }
  return out;
}

std::vector<Utterance> generate_domain(const DomainSpec& spec, const EmissionTable& emissions, std::size_t count,
                                       std::uint64_t seed, const std::string& tag) {
  const std::size_t fdim = emissions.feature_dim();
  const std::size_t symbols = emissions.num_symbols();
  if (symbols < 2) throw ConfigError("emission table must cover at least two symbols");
  for (const auto& m : emissions.means) {
    if (m.size() != fdim) throw ConfigError("emission table rows differ in length");
  }
  spec.validate(fdim, symbols);
  if (count == 0) throw ConfigError("generate_domain: count must be >= 1");

  const std::uint64_t key = domain_key(spec.domain_id);
  const std::uint64_t tag_key = domain_key(tag);
  std::vector<Utterance> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng = make_rng(seed, {key, tag_key, i});
    const auto len = static_cast<std::size_t>(uniform_int(rng, 2, 6));
    std::vector<std::size_t> labels;
    labels.reserve(len);
    while (labels.size() < len) {
      const auto s = static_cast<std::size_t>(uniform_int(rng, 1, static_cast<std::int64_t>(symbols)));
      if (!labels.empty() && labels.back() == s) continue;
      labels.push_back(s);
    }
    // Emission plan: one silence frame, each symbol's run, one silence frame.
    std::vector<std::size_t> frame_means{0};
    for (auto s : labels) {
      std::size_t emitted = s;
      for (const auto& c : spec.confusion_pairs) {
        if (c.from == s) {
          if (uniform01(rng) < c.probability) emitted = c.to;
          break;
        }
      }
      const auto base = static_cast<double>(uniform_int(rng, 2, 4));
      const auto run = std::max<std::size_t>(2, static_cast<std::size_t>(std::lround(spec.duration_scale * base)));
      frame_means.insert(frame_means.end(), run, emitted);
    }
    frame_means.push_back(0);

    Tensor features(Shape{frame_means.size(), fdim});
    for (std::size_t t = 0; t < frame_means.size(); ++t) {
      const auto& mean = emissions.means[frame_means[t]];
      for (std::size_t f = 0; f < fdim; ++f) {
        double v = mean[f] + spec.accent_shift[f];
        if (spec.noise_std > 0.0) v += normal(rng, 0.0, spec.noise_std);
        features.at(t, f) = v;
      }
    }
    out.push_back(Utterance{utterance_id(spec.domain_id, tag, i), spec.domain_id, std::move(features), std::move(labels)});
  }
  return out;
}

DatasetPartition build_partition(Recipe recipe, const GenerationSpec& spec) {
  spec.validate();
  const EmissionTable emissions = make_emissions(spec);
  const DomainSpec source = source_domain(spec);
  const std::vector<DomainSpec> accents = accent_domains(spec);

  DatasetPartition part;
  part.recipe = recipe_name(recipe);
  part.test_source = generate_domain(source, emissions, spec.source_test, spec.seed, "test");
  for (const auto& a : accents) {
    part.test_accent.emplace(a.domain_id, generate_domain(a, emissions, spec.accent_test, spec.seed, "test"));
  }

  std::vector<Utterance> accent_train;
  for (const auto& a : accents) {
    auto utts = generate_domain(a, emissions, spec.accent_train, spec.seed, "train");
    std::move(utts.begin(), utts.end(), std::back_inserter(accent_train));
  }

  switch (recipe) {
    case Recipe::Mandarin:
      part.train = generate_domain(source, emissions, spec.source_train, spec.seed, "train");
      break;
    case Recipe::All:
      part.train = generate_domain(source, emissions, spec.source_train, spec.seed, "train");
      std::move(accent_train.begin(), accent_train.end(), std::back_inserter(part.train));
      break;
    case Recipe::Accent:
      part.train = std::move(accent_train);
      break;
    case Recipe::AccentPlus: {
      if (accent_train.size() > spec.source_train) {
        throw ConfigError("Accent+ needs at least as many source utterances as accent utterances");
      }
      // Equal-count source sample: a seeded subset of the source training pool.
      std::vector<std::size_t> order(spec.source_train);
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      Rng rng = make_rng(spec.seed, {0x5a, 0x11});
      for (std::size_t i = order.size(); i > 1; --i) {
        std::swap(order[i - 1], order[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(i - 1)))]);
      }
      order.resize(accent_train.size());
      std::sort(order.begin(), order.end());
      auto pool = generate_domain(source, emissions, spec.source_train, spec.seed, "train");
      part.train = std::move(accent_train);
      for (auto i : order) part.train.push_back(std::move(pool[i]));
      break;
    }
  }
  return part;
}

}  // namespace metaxp::synth
