// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <sstream>

#include "doctest.h"
#include "helpers.hpp"
#include "json.hpp"
#include "metaxp/decode.hpp"
#include "metaxp/error.hpp"
#include "metaxp/experiment.hpp"
#include "metaxp/oracles.hpp"

using namespace metaxp;
using namespace metaxp::eval;

namespace {

// One frame per entry, the listed symbol at log-probability ~0.
Tensor one_hot(std::initializer_list<std::size_t> frames, std::size_t vocab) {
  Tensor t(Shape{frames.size(), vocab}, std::log(1e-6));
  std::size_t u = 0;
  for (auto s : frames) t.at(u++, s) = std::log(1.0 - 1e-6 * static_cast<double>(vocab - 1));
  return t;
}

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> row;
    std::istringstream cells(line);
    std::string cell;
    while (std::getline(cells, cell, ',')) row.push_back(cell);
    rows.push_back(row);
  }
  return rows;
}

ExperimentConfig tiny_experiment() {
  auto c = ExperimentConfig::defaults();
  c.model = testutil::tiny_model();
  c.generation = testutil::tiny_generation();
  c.baseline.epochs = 1;
  c.baseline.batch_size = 8;
  c.baseline.warmup_steps = 4;
  c.trainer.epochs = 1;
  c.trainer.batch_size = 4;
  c.trainer.warmup_steps = 4;
  c.method_trainers.clear();
  c.methods.clear();
  return c;
}

}  // namespace

TEST_CASE("greedy decoding") {
  CHECK(greedy_ctc_decode(one_hot({1, 1, 0, 2}, 3)) == Sequence{1, 2});
  CHECK(greedy_ctc_decode(one_hot({0, 0, 0}, 3)).empty());
  CHECK(greedy_ctc_decode(one_hot({1, 0, 1}, 3)) == Sequence{1, 1});
  CHECK(greedy_ctc_decode(Tensor(Shape{2, 3})).empty());
}

TEST_CASE("prefix beam on one-hot frames equals greedy") {
  Rng rng = make_rng(51);
  for (int trial = 0; trial < 50; ++trial) {
    const auto frames = static_cast<std::size_t>(uniform_int(rng, 1, 8));
    Tensor t(Shape{frames, 4}, std::log(1e-6));
    for (std::size_t u = 0; u < frames; ++u) t.at(u, static_cast<std::size_t>(uniform_int(rng, 0, 3))) = std::log(1.0 - 3e-6);
    for (std::size_t beam : {1, 4}) {
      CHECK(prefix_beam_decode(t, DecodeConfig{DecodeMode::PrefixBeam, beam}) == greedy_ctc_decode(t));
    }
  }
}

TEST_CASE("prefix beam matches exhaustive exact-CTC decoding") {
  Rng rng = make_rng(52);
  for (int trial = 0; trial < 100; ++trial) {
    const auto frames = static_cast<std::size_t>(uniform_int(rng, 1, 4));
    const auto vocab = static_cast<std::size_t>(uniform_int(rng, 2, 3));
    const Tensor lp = testutil::random_log_probs(rng, frames, vocab);
    const auto oracle = oracle::ctc_decode_enumerated(lp);
    const auto beam = prefix_beam_decode(lp, DecodeConfig{DecodeMode::PrefixBeam, 16});
    const bool tie = std::abs(oracle::ctc_log_prob_enumerated(lp, beam) - oracle.log_prob) <= 1e-12;
    CHECK((beam == oracle.best || tie));
  }
}

TEST_CASE("a beam wide enough to hold every prefix is never beaten by a narrower one") {
  Rng rng = make_rng(53);
  for (int trial = 0; trial < 100; ++trial) {
    const auto frames = static_cast<std::size_t>(uniform_int(rng, 1, 5));
    const Tensor lp = testutil::random_log_probs(rng, frames, 3);
    const double wide = oracle::ctc_log_prob_enumerated(lp, prefix_beam_decode(lp, {DecodeMode::PrefixBeam, 256}));
    for (std::size_t beam : {1, 2, 4}) {
      const double narrow = oracle::ctc_log_prob_enumerated(lp, prefix_beam_decode(lp, {DecodeMode::PrefixBeam, beam}));
      CHECK(wide >= narrow - 1e-12);
    }
  }
}

TEST_CASE("decode config") {
  CHECK(parse_decode_mode(decode_mode_name(DecodeMode::PrefixBeam)) == DecodeMode::PrefixBeam);
  CHECK_THROWS_AS(parse_decode_mode("viterbi"), ConfigError);
  CHECK_THROWS_AS((DecodeConfig{DecodeMode::PrefixBeam, 0}.validate()), ConfigError);
}

TEST_CASE("character error rate") {
  const Sequence abc{1, 2, 3}, abd{1, 2, 4};
  CHECK(cer(abc, abc) == 0.0);
  CHECK(cer(abc, abd) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(cer(abc, Sequence{}) == 1.0);
  CHECK(cer(Sequence{1}, Sequence{2, 3, 4}) == 3.0);
  CHECK_THROWS_AS(cer(Sequence{}, abc), Error);
}

TEST_CASE("edit distance matches a recursive oracle") {
  Rng rng = make_rng(54);
  for (int trial = 0; trial < 2000; ++trial) {
    Sequence a(static_cast<std::size_t>(uniform_int(rng, 0, 10)));
    Sequence b(static_cast<std::size_t>(uniform_int(rng, 0, 10)));
    for (auto& s : a) s = static_cast<std::size_t>(uniform_int(rng, 1, 4));
    for (auto& s : b) s = static_cast<std::size_t>(uniform_int(rng, 1, 4));
    CHECK(edit_distance(a, b) == oracle::edit_distance_recursive(a, b));
  }
}

TEST_CASE("method runs") {
  CHECK(MethodRun::parse("MAML") == MethodRun{meta::Method::MAML, synth::Recipe::Accent});
  CHECK(MethodRun::parse("MAML:Accent+") == MethodRun{meta::Method::MAML, synth::Recipe::AccentPlus});
  CHECK(MethodRun::parse("MAML+FMP").label() == "MAML_FMP");
  CHECK(MethodRun::parse("MAML:Accent+").label() == "MAML:Accent+");
  CHECK_THROWS_AS(MethodRun::parse("FT:Mandarin"), ConfigError);
  CHECK_THROWS_AS(MethodRun::parse("BOGUS"), ConfigError);
}

TEST_CASE("experiment config documents") {
  const auto defaults = ExperimentConfig::defaults();
  CHECK_NOTHROW(defaults.validate());
  const auto text = format_config(defaults);
  CHECK(format_config(parse_config(text)) == text);

  auto j = nlohmann::json::parse(text);
  j["model"]["layers"] = 4;
  try {
    parse_config(j.dump());
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("layers") != std::string::npos);
  }

  j = nlohmann::json::parse(text);
  j["version"] = 2;
  CHECK_THROWS_AS(parse_config(j.dump()), ConfigError);

  try {
    parse_config("{\n  \"version\": 1,\n  \"seed\": ,\n}");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 3);
  }

  auto overridden = defaults;
  overridden.method_trainers["MAML"] = defaults.trainer;
  overridden.method_trainers["MAML"].alpha = 0.25;
  CHECK(overridden.trainer_for(MethodRun{meta::Method::MAML, synth::Recipe::Accent}).alpha == 0.25);
  CHECK(overridden.trainer_for(MethodRun{meta::Method::FT, synth::Recipe::Accent}).alpha == defaults.trainer.alpha);
  CHECK(overridden.trainer_for(MethodRun{meta::Method::FT, synth::Recipe::Accent}).method == meta::Method::FT);
}

TEST_CASE("experiment without methods reports the baselines only") {
  const auto report = run_experiment(tiny_experiment(), RunOptions{false, {}});
  REQUIRE(report.rows.size() == 2);
  CHECK(report.rows[0].name == "Baseline-1");
  CHECK(report.rows[0].data == "Mandarin");
  CHECK(report.rows[1].name == "Baseline-2");
  CHECK(report.rows[1].data == "All");
  CHECK(report.rows[0].cer_by_domain.size() == 2);
}

TEST_CASE("report rows, deltas and renderings") {
  auto config = tiny_experiment();
  config.methods = {MethodRun::parse("FT"), MethodRun::parse("MAML_FMP"), MethodRun::parse("MAML:Accent+")};
  const auto report = run_experiment(config, RunOptions{false, {}});
  REQUIRE(report.rows.size() == 5);
  CHECK(report.rows[2].name == "FT");
  CHECK(report.rows[3].name == "MAML_FMP");
  CHECK(report.rows[4].name == "MAML");
  CHECK(report.rows[4].data == "Accent+");
  CHECK(&report.row("MAML", "Accent+") == &report.rows[4]);
  CHECK(report.rows[3].trainable_fraction < 1.0);

  const auto& b2 = report.row("Baseline-2", "All");
  for (const auto& r : report.rows) {
    CHECK(r.cer_source >= 0.0);
    CHECK(r.cer_source == std::round(r.cer_source * 1e4) / 1e4);
    if (b2.cer_source > 0.0) {
      REQUIRE(r.delta_source.has_value());
      CHECK(*r.delta_source == doctest::Approx((b2.cer_source - r.cer_source) / b2.cer_source).epsilon(1e-15));
    } else {
      CHECK(!r.delta_source.has_value());
    }
  }

  const auto rows = parse_csv(render_report(report, ReportFormat::Csv));
  REQUIRE(rows.size() == 6);
  CHECK(rows[0] == std::vector<std::string>{"Method", "Data", "CER_source", "CER_accent", "Δsource%", "Δaccent%",
                                            "wall_s", "trainable%"});
  for (std::size_t i = 1; i < rows.size(); ++i) {
    REQUIRE(rows[i].size() == 8);
    CHECK(rows[i][0] == report.rows[i - 1].name);
    CHECK(std::stod(rows[i][2]) == report.rows[i - 1].cer_source);
  }
  CHECK(parse_csv(render_report(report, ReportFormat::Csv, false))[0].size() == 7);

  const auto j = nlohmann::json::parse(render_report(report, ReportFormat::Json));
  CHECK(j["rows"].size() == 5);
  CHECK(j["rows"][0]["method"] == "Baseline-1");

  const auto table = render_report(report, ReportFormat::Table);
  CHECK(table.rfind("Method", 0) == 0);
  CHECK(std::count(table.begin(), table.end(), '\n') == 7);
  CHECK_THROWS_AS(parse_report_format("xml"), ConfigError);
}
