// SPDX-License-Identifier: Apache-2.0
#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "metaxp/error.hpp"
#include "metaxp/trainer.hpp"
#include "json.hpp"

using namespace metaxp;
using namespace metaxp::meta;

namespace {

// loss = sum (theta - target)^2 / 2 over unfrozen entries.
class Quadratic : public Objective {
 public:
  explicit Quadratic(double target) : target_(target) {}
  double evaluate(const asr::ParameterRegistry& params, std::span<const synth::Utterance* const>,
                  asr::GradientSet& grads, std::uint64_t) override {
    grads.resize(params.size());
    double loss = 0.0;
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (params.is_frozen(i)) continue;
      const auto& v = params.value(i);
      grads[i].resize(v.size(), 0.0);
      for (std::size_t k = 0; k < v.size(); ++k) {
        loss += 0.5 * (v[k] - target_) * (v[k] - target_);
        grads[i][k] += v[k] - target_;
      }
    }
    return loss;
  }

 private:
  double target_;
};

asr::ParameterRegistry one_parameter(double value) {
  asr::ParameterRegistry reg;
  reg.add("theta", Tensor::scalar(value));
  return reg;
}

const std::vector<synth::Utterance>& tiny_pool() {
  static const auto pool = synth::build_partition(synth::Recipe::Mandarin, testutil::tiny_generation()).train;
  return pool;
}

asr::ModelConfig deterministic_model() {
  auto c = testutil::tiny_model();
  c.dropout = 0.0;
  return c;
}

TrainerConfig small_config(Method method) {
  TrainerConfig c;
  c.method = method;
  c.batch_size = 4;
  c.epochs = 1;
  c.warmup_steps = 10;
  c.alpha = 0.05;
  c.beta = 2.0;
  return c;
}

bool bit_equal(const Tensor& a, const Tensor& b) { return a.shape() == b.shape() && a.storage() == b.storage(); }

}  // namespace

TEST_CASE("noam schedule") {
  const double crossover = 1.0 / std::sqrt(32.0 * 400.0);
  CHECK(noam_lr(400, 32, 400) == doctest::Approx(crossover).epsilon(1e-15));
  // 32^-0.5 * 100 * 400^-1.5
  CHECK(noam_lr(100, 32, 400) == doctest::Approx(0.0022097086912079614).epsilon(1e-15));
  CHECK(noam_lr(100, 32, 400) == doctest::Approx(crossover / 4.0).epsilon(1e-15));
  for (std::size_t s = 1; s < 400; ++s) CHECK(noam_lr(s + 1, 32, 400) >= noam_lr(s, 32, 400));
  for (std::size_t s = 400; s < 2000; ++s) CHECK(noam_lr(s + 1, 32, 400) <= noam_lr(s, 32, 400));
  CHECK_THROWS_AS(noam_lr(0, 32, 400), ConfigError);
}

TEST_CASE("epoch split") {
  const auto a = split_epoch(100, 0.5, 3, 11);
  const auto b = split_epoch(100, 0.5, 3, 11);
  CHECK(a.train_ids == b.train_ids);
  CHECK(a.support_ids == b.support_ids);

  const auto ten = split_epoch(10, 0.5, 0, 1);
  CHECK(ten.support_ids.size() == 5);
  CHECK(ten.train_ids.size() == 5);

  CHECK(split_epoch(100, 0.5, 0, 11).support_ids != split_epoch(100, 0.5, 1, 11).support_ids);

  Rng rng = make_rng(41);
  for (std::size_t epoch = 0; epoch < 30; ++epoch) {
    const auto count = static_cast<std::size_t>(uniform_int(rng, 2, 60));
    const auto s = split_epoch(count, uniform(rng, 0.01, 0.99), epoch, 5);
    std::vector<int> seen(count, 0);
    for (auto i : s.train_ids) ++seen.at(i);
    for (auto i : s.support_ids) ++seen.at(i);
    for (int n : seen) CHECK(n == 1);
    CHECK(!s.train_ids.empty());
    CHECK(!s.support_ids.empty());
  }
  CHECK_THROWS_AS(split_epoch(1, 0.5, 0, 1), ConfigError);
  CHECK_THROWS_AS(split_epoch(0, 0.5, 0, 1), ConfigError);
}

TEST_CASE("first-order inner and outer steps on a quadratic") {
  Quadratic quad(5.0);
  auto theta = one_parameter(1.0);
  const std::vector<std::vector<const synth::Utterance*>> one_batch(1);
  const auto inner = inner_update(quad, theta, one_batch, 0.1, 0.0, 1);
  CHECK(std::abs(inner.adapted.value(0)[0] - 1.4) <= 1e-12);
  CHECK(theta.value(0)[0] == 1.0);
  outer_update(quad, theta, inner.adapted, {}, 0.1, 0.0, 1);
  CHECK(std::abs(theta.value(0)[0] - 1.36) <= 1e-12);
}

TEST_CASE("inner step identities") {
  Quadratic quad(5.0);
  auto theta = one_parameter(1.0);
  theta.add("frozen", Tensor::scalar(-3.0));
  theta.set_frozen({"frozen"});
  const std::vector<std::vector<const synth::Utterance*>> batches(3);
  CHECK(inner_update(quad, theta, batches, 0.0, 0.0, 1).adapted.same_values(theta));
  const auto moved = inner_update(quad, theta, batches, 0.7, 0.0, 1);
  CHECK(moved.adapted.value(0)[0] != 1.0);
  CHECK(moved.adapted.value(1)[0] == -3.0);

  const auto before = theta;
  outer_update(quad, theta, moved.adapted, {}, 0.0, 0.0, 1);
  CHECK(theta.same_values(before));
}

TEST_CASE("alpha = 0 MAML epoch equals SGD over the support stream") {
  const auto& pool = tiny_pool();
  auto cfg = small_config(Method::MAML);
  cfg.alpha = 0.0;
  cfg.clip_norm = 0.0;
  const auto init = asr::build_model(deterministic_model(), 4);
  HybridObjective objective(init.config, loss::LossConfig{});

  auto maml = init.params;
  train(cfg, objective, maml, init.config.model_dim, pool);

  auto sgd = init.params;
  std::size_t step = 0;
  const auto plan = meta_schedule(split_epoch(pool.size(), cfg.support_fraction, 0, cfg.rng_seed), cfg);
  REQUIRE(!plan.empty());
  for (const auto& it : plan) {
    std::vector<const synth::Utterance*> support;
    for (auto i : it.support) support.push_back(&pool[i]);
    asr::GradientSet grads;
    objective.evaluate(sgd, support, grads, 0);
    sgd_apply(sgd, grads, cfg.beta * noam_lr(++step, init.config.model_dim, cfg.warmup_steps));
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < sgd.size(); ++i) {
    worst = std::max(worst, testutil::max_abs_diff(maml.value(i).storage(), sgd.value(i).storage()));
  }
  CHECK(worst <= 1e-12);
}

TEST_CASE("frozen tensors are bit-identical after training under every method") {
  const auto& pool = tiny_pool();
  for (Method method : {Method::FT, Method::WCA, Method::KLD, Method::FMP, Method::MAML, Method::MAML_FMP}) {
    CAPTURE(method_name(method));
    auto model = asr::build_model(testutil::tiny_model(), 5);
    model.params.take_snapshot();
    auto cfg = small_config(method);
    cfg.freeze_policy = asr::FreezePolicy::default_for(model.config);
    const auto before = model.params;
    const auto records = train(cfg, loss::LossConfig{}, model, pool);
    CHECK(!records.empty());
    bool any_moved = false;
    for (std::size_t i = 0; i < model.params.size(); ++i) {
      if (model.params.is_frozen(i)) {
        CHECK(bit_equal(model.params.value(i), before.value(i)));
      } else if (!bit_equal(model.params.value(i), before.value(i))) {
        any_moved = true;
      }
    }
    CHECK(any_moved);
    for (std::size_t i = 0; i < model.params.size(); ++i) {
      CHECK(bit_equal(model.params.snapshot()[i], before.value(i)));
    }
  }
}

TEST_CASE("zero epochs leave the model unchanged") {
  auto model = asr::build_model(testutil::tiny_model(), 6);
  const auto before = model.params;
  auto cfg = small_config(Method::MAML);
  cfg.epochs = 0;
  CHECK(train(cfg, loss::LossConfig{}, model, tiny_pool()).empty());
  CHECK(model.params.same_values(before));
}

TEST_CASE("configuration preconditions") {
  for (double fraction : {0.0, 1.0, -0.2, 1.5}) {
    auto cfg = small_config(Method::MAML_FMP);
    cfg.support_fraction = fraction;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
  }
  auto cfg = small_config(Method::FT);
  cfg.alpha = -1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = small_config(Method::FT);
  cfg.batch_size = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  for (Method method : {Method::WCA, Method::KLD}) {
    auto model = asr::build_model(testutil::tiny_model(), 7);
    CHECK_THROWS_AS(train(small_config(method), loss::LossConfig{}, model, tiny_pool()), ConfigError);
  }
}

TEST_CASE("training is bit-reproducible") {
  for (Method method : {Method::KLD, Method::MAML_FMP}) {
    auto run = [&] {
      auto model = asr::build_model(testutil::tiny_model(), 8);
      model.params.take_snapshot();
      const auto records = train(small_config(method), loss::LossConfig{}, model, tiny_pool());
      std::vector<double> losses;
      for (const auto& r : records) losses.push_back(r.train_loss);
      return std::pair(model.params, losses);
    };
    const auto [a, la] = run();
    const auto [b, lb] = run();
    CHECK(a.same_values(b));
    CHECK(la == lb);
  }
}

TEST_CASE("freezing methods report fewer trainable parameters") {
  auto count = [](Method method) {
    auto model = asr::build_model(testutil::tiny_model(), 9);
    return train(small_config(method), loss::LossConfig{}, model, tiny_pool()).front().trainable_param_count;
  };
  const auto ft = count(Method::FT);
  CHECK(count(Method::FMP) < ft);
  CHECK(count(Method::MAML_FMP) < count(Method::MAML));
  CHECK(count(Method::MAML) == ft);
}

TEST_CASE("step records") {
  auto model = asr::build_model(testutil::tiny_model(), 10);
  std::size_t callbacks = 0;
  const auto records =
      train(small_config(Method::MAML), loss::LossConfig{}, model, tiny_pool(), [&](const StepRecord&) { ++callbacks; });
  REQUIRE(!records.empty());
  CHECK(callbacks == records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    CHECK(records[i].iteration == i + 1);
    CHECK(records[i].support_loss.has_value());
    CHECK(std::isfinite(records[i].train_loss));
  }
  const auto j = nlohmann::json::parse(format_step_record(records.front()));
  CHECK(j.size() == 8);
  for (const char* key :
       {"iteration", "epoch", "method", "train_loss", "support_loss", "lr", "wall_ms", "trainable_param_count"}) {
    CHECK(j.contains(key));
  }
  CHECK(j["method"] == "MAML");

  StepRecord plain;
  CHECK(nlohmann::json::parse(format_step_record(plain))["support_loss"].is_null());
}

TEST_CASE("method names") {
  CHECK(parse_method("MAML+FMP") == Method::MAML_FMP);
  CHECK(parse_method("MAML_FMP") == Method::MAML_FMP);
  for (Method m : {Method::FT, Method::WCA, Method::KLD, Method::FMP, Method::MAML, Method::MAML_FMP}) {
    CHECK(parse_method(method_name(m)) == m);
  }
  CHECK_THROWS_AS(parse_method("SGD"), ConfigError);
  CHECK(is_maml(Method::MAML_FMP));
  CHECK(!is_maml(Method::FMP));
  CHECK(uses_freeze(Method::FMP));
  CHECK(!uses_freeze(Method::MAML));
}
