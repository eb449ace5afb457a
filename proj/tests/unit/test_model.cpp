// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "helpers.hpp"
#include "metaxp/checkpoint.hpp"
#include "metaxp/error.hpp"
#include "metaxp/model.hpp"
#include "metaxp/ops.hpp"

using namespace metaxp;
using namespace metaxp::asr;

namespace {

// Independent parameter census from the layer formulas.
std::size_t linear(std::size_t in, std::size_t out) { return in * out + out; }
std::size_t norm(std::size_t d) { return 2 * d; }

std::size_t encoder_block(const ModelConfig& c) {
  const std::size_t d = c.model_dim;
  return 2 * norm(d) + 4 * linear(d, d) + linear(d, c.ff_dim) + linear(c.ff_dim, d);
}

std::size_t decoder_block(const ModelConfig& c) {
  const std::size_t d = c.model_dim;
  return 3 * norm(d) + 8 * linear(d, d) + linear(d, c.ff_dim) + linear(c.ff_dim, d);
}

std::size_t census(const ModelConfig& c) {
  const std::size_t d = c.model_dim;
  return linear(c.feature_dim * c.frame_stack, d) + c.num_encoder_blocks * encoder_block(c) + norm(d) +
         linear(d, c.vocab_size) + c.vocab_size * d + c.num_decoder_blocks * decoder_block(c) + norm(d) +
         linear(d, c.vocab_size);
}

struct Outputs {
  Tensor ctc;
  Tensor aed;
};

Outputs run_eval(const AsrModel& model, const Tensor& features, const std::vector<std::size_t>& labels,
                 std::uint64_t seed = 0) {
  ad::Graph g(ad::Mode::Eval, seed);
  BoundParameters bound(g, model.params, false);
  auto enc = encode(model.config, bound, features);
  return {ctc_logits(model.config, bound, enc).value(), aed_logits(model.config, bound, enc, labels).value()};
}

Tensor features_for(const ModelConfig& c, std::size_t frames, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  return testutil::random_tensor(rng, {frames, c.feature_dim});
}

}  // namespace

TEST_CASE("build_model is deterministic per seed") {
  const ModelConfig c = testutil::tiny_model();
  auto a = build_model(c, 3), b = build_model(c, 3), other = build_model(c, 4);
  CHECK(a.params.same_values(b.params));
  CHECK_FALSE(a.params.same_values(other.params));
  CHECK(a.params.names() == other.params.names());
}

TEST_CASE("model config validation") {
  ModelConfig c;
  c.num_heads = 3;
  CHECK_THROWS_AS(build_model(c, 1), ConfigError);
  c = ModelConfig{};
  c.vocab_size = 2;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("parameter census matches the layer formulas") {
  const ModelConfig def;
  CHECK(census(def) == 61688);
  CHECK(build_model(def, 1).params.parameter_count() == census(def));
  const ModelConfig tiny = testutil::tiny_model();
  CHECK(build_model(tiny, 1).params.parameter_count() == census(tiny));
}

TEST_CASE("initialisation follows the stated rule") {
  auto m = build_model(ModelConfig{}, 9);
  for (const auto& e : m.params.entries()) {
    const auto& v = e.value.storage();
    if (e.name.ends_with(".gain")) {
      CHECK(std::all_of(v.begin(), v.end(), [](double x) { return x == 1.0; }));
    } else if (e.name.ends_with(".bias")) {
      CHECK(std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; }));
    } else {
      const auto& s = e.value.shape();
      const double limit = std::sqrt(6.0 / static_cast<double>(s[0] + s[1]));
      CHECK(std::all_of(v.begin(), v.end(), [&](double x) { return std::abs(x) <= limit; }));
    }
  }
}

TEST_CASE("encoder output length is ceil(T / frame_stack)") {
  const ModelConfig c = testutil::tiny_model();
  auto m = build_model(c, 1);
  for (std::size_t frames : {2u, 7u, 8u, 13u}) {
    ad::Graph g;
    BoundParameters bound(g, m.params, false);
    auto enc = encode(c, bound, features_for(c, frames, frames));
    CHECK(enc.frames == (frames + 1) / 2);
    CHECK(enc.hidden.shape() == Shape{(frames + 1) / 2, c.model_dim});
  }
  ad::Graph g;
  BoundParameters bound(g, m.params, false);
  CHECK_THROWS_AS(encode(c, bound, Tensor({1, c.feature_dim})), ShapeError);
  CHECK_THROWS_AS(encode(c, bound, Tensor({8, c.feature_dim + 1})), ShapeError);
}

TEST_CASE("zero features give finite outputs") {
  const ModelConfig c = testutil::tiny_model();
  auto m = build_model(c, 1);
  auto out = run_eval(m, Tensor({6, c.feature_dim}), {1, 2});
  CHECK(out.ctc.all_finite());
  CHECK(out.aed.all_finite());
}

TEST_CASE("eval-mode outputs ignore the dropout seed") {
  const ModelConfig c = testutil::tiny_model();
  auto m = build_model(c, 1);
  const Tensor x = features_for(c, 9, 2);
  auto a = run_eval(m, x, {1, 3}, 1), b = run_eval(m, x, {1, 3}, 99);
  CHECK(a.ctc == b.ctc);
  CHECK(a.aed == b.aed);
}

TEST_CASE("CTC logits have one row per encoder frame and normalise") {
  const ModelConfig c = testutil::tiny_model();
  auto m = build_model(c, 1);
  ad::Graph g;
  BoundParameters bound(g, m.params, false);
  auto enc = encode(c, bound, features_for(c, 10, 3));
  auto logits = ctc_logits(c, bound, enc);
  CHECK(logits.shape() == Shape{5, c.vocab_size});
  const Tensor lp = ad::log_softmax(logits).value();
  for (std::size_t u = 0; u < 5; ++u) {
    double total = 0.0;
    for (std::size_t v = 0; v < c.vocab_size; ++v) total += std::exp(lp.at(u, v));
    CHECK(total == doctest::Approx(1.0).epsilon(1e-14));
  }
}

TEST_CASE("perturbation probe separates the CTC path from the decoder") {
  const ModelConfig c = testutil::tiny_model();
  auto base = build_model(c, 5);
  const Tensor x = features_for(c, 8, 4);
  const auto ref = run_eval(base, x, {2});
  for (const auto& e : base.params.entries()) {
    auto probe = base;
    for (auto& v : probe.params.get(e.name).storage()) v += 0.05;
    const auto out = run_eval(probe, x, {2});
    const bool on_ctc_path = e.name.starts_with("encoder.") || e.name.starts_with("ctc.");
    CAPTURE(e.name);
    if (on_ctc_path) {
      CHECK_FALSE(out.ctc == ref.ctc);
    } else {
      CHECK(out.ctc == ref.ctc);
    }
  }
}

TEST_CASE("decoder output rows") {
  const ModelConfig c = testutil::tiny_model();
  auto m = build_model(c, 1);
  const Tensor x = features_for(c, 8, 5);
  CHECK(run_eval(m, x, {}).aed.shape() == Shape{1, c.vocab_size});
  CHECK(run_eval(m, x, {1, 2, 3}).aed.shape() == Shape{4, c.vocab_size});
  ad::Graph g;
  BoundParameters bound(g, m.params, false);
  auto enc = encode(c, bound, x);
  const std::vector<std::size_t> bad{c.sos_eos()};
  CHECK_THROWS_AS(aed_logits(c, bound, enc, bad), ShapeError);
}

TEST_CASE("decoder is causal: row t ignores labels from t on") {
  const ModelConfig c = testutil::tiny_model();
  auto m = build_model(c, 6);
  const Tensor x = features_for(c, 10, 6);
  const std::vector<std::size_t> labels{1, 2, 3, 4, 2};
  const auto ref = run_eval(m, x, labels).aed;
  for (std::size_t t = 0; t < labels.size(); ++t) {
    auto permuted = labels;
    std::rotate(permuted.begin() + static_cast<std::ptrdiff_t>(t), permuted.begin() + static_cast<std::ptrdiff_t>(t) + 1,
                permuted.end());
    const auto out = run_eval(m, x, permuted).aed;
    for (std::size_t r = 0; r <= t; ++r) {
      for (std::size_t v = 0; v < c.vocab_size; ++v) CHECK(out.at(r, v) == ref.at(r, v));
    }
  }
}

TEST_CASE("freeze policies") {
  const ModelConfig c;
  auto m = build_model(c, 1);
  SUBCASE("empty policy freezes nothing") {
    CHECK(apply_freeze_policy(m.params, FreezePolicy{}).empty());
    CHECK(m.params.trainable_count() == m.params.parameter_count());
  }
  SUBCASE("default policy freezes encoder blocks 2 and 3 and the decoder blocks") {
    const auto frozen = apply_freeze_policy(m.params, FreezePolicy::default_for(c));
    for (const auto& e : m.params.entries()) {
      const bool expect_frozen = e.name.starts_with("encoder.block2.") || e.name.starts_with("encoder.block3.") ||
                                 e.name.starts_with("decoder.block");
      CAPTURE(e.name);
      CHECK(frozen.contains(e.name) == expect_frozen);
    }
    const std::size_t trainable = census(c) - 2 * encoder_block(c) - c.num_decoder_blocks * decoder_block(c);
    CHECK(m.params.trainable_count() == trainable);
    CHECK(trainable == 18936);
  }
  SUBCASE("unknown names are rejected") {
    CHECK_THROWS_AS(apply_freeze_policy(m.params, FreezePolicy{{"encoder.block9."}}), ConfigError);
    CHECK_THROWS_AS(apply_freeze_policy(m.params, FreezePolicy{{"ctc.weights"}}), ConfigError);
  }
}

TEST_CASE("registry snapshot is shared and immutable") {
  auto m = build_model(testutil::tiny_model(), 1);
  CHECK_THROWS_AS(m.params.snapshot(), ConfigError);
  m.params.take_snapshot();
  const auto before = m.params.snapshot();
  auto copy = m.params;
  copy.value(0)[0] += 1.0;
  m.params.value(1)[0] += 1.0;
  CHECK(m.params.snapshot()[0] == before[0]);
  CHECK(copy.snapshot()[1] == before[1]);
  CHECK(&copy.snapshot() == &m.params.snapshot());
}

TEST_CASE("frozen parameters are bound without a gradient slot") {
  auto m = build_model(testutil::tiny_model(), 1);
  apply_freeze_policy(m.params, FreezePolicy::default_for(m.config));
  ad::Graph g;
  BoundParameters bound(g, m.params, true);
  ad::Graph eval_graph;
  BoundParameters eval_bound(eval_graph, m.params, false);
  for (std::size_t i = 0; i < m.params.size(); ++i) {
    const ad::Var v = bound.get(i);
    CHECK(g.needs_grad(v.id) == !m.params.is_frozen(i));
    CHECK(&v.value() == &m.params.value(i));
    CHECK(!eval_graph.needs_grad(eval_bound.get(i).id));
  }
}

TEST_CASE("checkpoint round trip") {
  auto m = build_model(testutil::tiny_model(), 2);
  apply_freeze_policy(m.params, FreezePolicy::default_for(m.config));
  m.params.take_snapshot();
  m.params.value(0)[0] = 0.125;
  const std::string bytes = encode_checkpoint(m);
  const AsrModel back = decode_checkpoint(bytes);
  CHECK(back.config == m.config);
  CHECK(back.params.same_values(m.params));
  CHECK(back.params.frozen_names() == m.params.frozen_names());
  REQUIRE(back.params.has_snapshot());
  CHECK(back.params.snapshot() == m.params.snapshot());
  CHECK(bytes.substr(0, 8) == "MXPCKPT1");

  const auto path = std::filesystem::temp_directory_path() / "metaxp_unit_ckpt.bin";
  save_checkpoint(m, path);
  CHECK(load_checkpoint(path).params.same_values(m.params));
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint damage is detected") {
  auto m = build_model(testutil::tiny_model(), 2);
  std::string bytes = encode_checkpoint(m);
  SUBCASE("flipped byte") {
    bytes[bytes.size() / 2] ^= 0x01;
    CHECK_THROWS_AS(decode_checkpoint(bytes), IntegrityError);
  }
  SUBCASE("truncated") { CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, bytes.size() / 3)), Error); }
  SUBCASE("bad magic") {
    bytes[0] = 'X';
    CHECK_THROWS_AS(decode_checkpoint(bytes), Error);
  }
}

TEST_CASE("positional encoding") {
  const Tensor pe = positional_encoding(4, 6);
  CHECK(pe.shape() == Shape{4, 6});
  CHECK(pe.at(0, 0) == 0.0);
  CHECK(pe.at(0, 1) == 1.0);
  CHECK(pe.at(1, 0) == doctest::Approx(std::sin(1.0)));
}
