// SPDX-License-Identifier: Apache-2.0
#include "metaxp/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>

#include "json.hpp"
#include "metaxp/error.hpp"
#include "metaxp/random.hpp"

namespace metaxp::meta {

namespace {

using Batch = std::vector<const synth::Utterance*>;
using Clock = std::chrono::steady_clock;

void shuffle(std::vector<std::size_t>& items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(i - 1)));
    std::swap(items[i - 1], items[j]);
  }
}

std::uint64_t step_seed(std::uint64_t seed, std::size_t step, std::uint64_t phase) {
  auto rng = make_rng(seed, {0x57e9, step, phase});
  return rng();
}

Batch gather(std::span<const synth::Utterance> data, std::span<const std::size_t> ids) {
  Batch batch;
  batch.reserve(ids.size());
  for (auto i : ids) batch.push_back(&data[i]);
  return batch;
}

double scheduled_lr(const TrainerConfig& config, std::size_t step, std::size_t model_dim) {
  if (config.schedule == Schedule::Constant) return config.lr_scale;
  return config.lr_scale * noam_lr(step, model_dim, config.warmup_steps);
}

double elapsed_ms(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

void require_finite(double loss, const char* phase, std::size_t step) {
  if (!std::isfinite(loss)) {
    throw NonFiniteError(std::string("non-finite ") + phase + " loss at step " + std::to_string(step));
  }
}

}  // namespace

const char* method_name(Method method) {
  switch (method) {
    case Method::FT: return "FT";
    case Method::WCA: return "WCA";
    case Method::KLD: return "KLD";
    case Method::FMP: return "FMP";
    case Method::MAML: return "MAML";
    case Method::MAML_FMP: return "MAML_FMP";
  }
  return "?";
}

Method parse_method(const std::string& name) {
  for (Method m : {Method::FT, Method::WCA, Method::KLD, Method::FMP, Method::MAML, Method::MAML_FMP}) {
    if (name == method_name(m)) return m;
  }
  if (name == "MAML+FMP") return Method::MAML_FMP;
  throw ConfigError("unknown method tag: " + name);
}

bool is_maml(Method method) { return method == Method::MAML || method == Method::MAML_FMP; }
bool uses_freeze(Method method) { return method == Method::FMP || method == Method::MAML_FMP; }

void TrainerConfig::validate() const {
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw ConfigError("alpha must be a finite value >= 0");
  if (!(beta >= 0.0) || !std::isfinite(beta)) throw ConfigError("beta must be a finite value >= 0");
  if (inner_steps == 0) throw ConfigError("inner_steps must be >= 1");
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (warmup_steps == 0) throw ConfigError("warmup_steps must be >= 1");
  if (!(lr_scale > 0.0)) throw ConfigError("lr_scale must be > 0");
  if (!(clip_norm >= 0.0)) throw ConfigError("clip_norm must be >= 0");
  if (is_maml(method) && !(support_fraction > 0.0 && support_fraction < 1.0)) {
    throw ConfigError("support_fraction must lie strictly between 0 and 1");
  }
}

EpochSplit split_epoch(std::size_t count, double support_fraction, std::size_t epoch_index, std::uint64_t rng_seed) {
  if (count < 2) throw ConfigError("split_epoch needs at least two utterances");
  if (!(support_fraction > 0.0 && support_fraction < 1.0)) {
    throw ConfigError("support_fraction must lie strictly between 0 and 1");
  }
  std::vector<std::size_t> order(count);
  for (std::size_t i = 0; i < count; ++i) order[i] = i;
  auto rng = make_rng(rng_seed, {0x5b17, epoch_index});
  shuffle(order, rng);
  auto support = static_cast<std::size_t>(std::llround(static_cast<double>(count) * support_fraction));
  support = std::clamp<std::size_t>(support, 1, count - 1);
  EpochSplit split;
  split.epoch_index = epoch_index;
  split.support_ids.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(support));
  split.train_ids.assign(order.begin() + static_cast<std::ptrdiff_t>(support), order.end());
  std::sort(split.support_ids.begin(), split.support_ids.end());
  std::sort(split.train_ids.begin(), split.train_ids.end());
  return split;
}

double noam_lr(std::size_t step, std::size_t model_dim, std::size_t warmup) {
  if (step == 0) throw ConfigError("noam_lr: step must be >= 1");
  if (model_dim == 0 || warmup == 0) throw ConfigError("noam_lr: model_dim and warmup must be >= 1");
  const double s = static_cast<double>(step);
  const double w = static_cast<double>(warmup);
  return std::pow(static_cast<double>(model_dim), -0.5) * std::min(std::pow(s, -0.5), s * std::pow(w, -1.5));
}

InnerResult inner_update(Objective& objective, const asr::ParameterRegistry& theta,
                         std::span<const std::vector<const synth::Utterance*>> batches, double alpha,
                         double clip_norm, std::uint64_t seed) {
  if (batches.empty()) throw ConfigError("inner_update needs at least one batch");
  InnerResult result{theta, 0.0};
  for (std::size_t s = 0; s < batches.size(); ++s) {
    asr::GradientSet grads;
    const double loss = objective.evaluate(result.adapted, batches[s], grads, step_seed(seed, s, 1));
    require_finite(loss, "inner", s);
    clip_gradients(grads, clip_norm);
    sgd_apply(result.adapted, grads, alpha);
    result.loss += loss;
  }
  result.loss /= static_cast<double>(batches.size());
  return result;
}

double outer_update(Objective& objective, asr::ParameterRegistry& theta, const asr::ParameterRegistry& adapted,
                    std::span<const synth::Utterance* const> support, double beta, double clip_norm,
                    std::uint64_t seed) {
  if (theta.size() != adapted.size()) throw ConfigError("outer_update: adapted parameters do not match");
  asr::GradientSet grads;
  const double loss = objective.evaluate(adapted, support, grads, step_seed(seed, 0, 2));
  require_finite(loss, "support", 0);
  clip_gradients(grads, clip_norm);
  sgd_apply(theta, grads, beta);
  return loss;
}

std::vector<MetaIteration> meta_schedule(const EpochSplit& split, const TrainerConfig& config) {
  if (split.train_ids.empty() || split.support_ids.empty()) throw ConfigError("meta_schedule: empty split");
  auto train_order = split.train_ids;
  auto support_order = split.support_ids;
  auto rng = make_rng(config.rng_seed, {0x3e7a, split.epoch_index});
  shuffle(train_order, rng);
  shuffle(support_order, rng);

  const std::size_t bs = config.batch_size;
  std::vector<MetaIteration> plan;
  std::size_t cursor = 0;
  for (std::size_t start = 0; start < support_order.size(); start += bs) {
    MetaIteration it;
    const std::size_t end = std::min(start + bs, support_order.size());
    it.support.assign(support_order.begin() + static_cast<std::ptrdiff_t>(start),
                      support_order.begin() + static_cast<std::ptrdiff_t>(end));
    for (std::size_t s = 0; s < config.inner_steps; ++s) {
      std::vector<std::size_t> batch;
      const std::size_t take = std::min(bs, train_order.size());
      for (std::size_t k = 0; k < take; ++k) {
        batch.push_back(train_order[cursor]);
        cursor = (cursor + 1) % train_order.size();
      }
      it.inner.push_back(std::move(batch));
    }
    plan.push_back(std::move(it));
  }
  return plan;
}

std::vector<StepRecord> train(const TrainerConfig& config, Objective& objective, asr::ParameterRegistry& params,
                              std::size_t model_dim, std::span<const synth::Utterance> data,
                              const StepCallback& on_step) {
  config.validate();
  std::vector<StepRecord> records;
  if (config.epochs == 0) return records;
  if (data.empty()) throw ConfigError("training set is empty");
  if (is_maml(config.method)) {
    const double support = static_cast<double>(data.size()) * config.support_fraction;
    if (std::llround(support) < 1 || static_cast<std::size_t>(std::llround(support)) >= data.size()) {
      throw ConfigError("support_fraction " + std::to_string(config.support_fraction) + " leaves an empty split for " +
                        std::to_string(data.size()) + " utterances");
    }
  }

  const std::size_t trainable = params.trainable_count();
  std::size_t step = 0;
  auto capped = [&] { return config.max_steps != 0 && step >= config.max_steps; };
  auto emit = [&](StepRecord r) {
    if (on_step) on_step(r);
    records.push_back(std::move(r));
  };

  if (is_maml(config.method)) {
    for (std::size_t epoch = 0; epoch < config.epochs && !capped(); ++epoch) {
      const EpochSplit split = split_epoch(data.size(), config.support_fraction, epoch, config.rng_seed);
      for (const auto& it : meta_schedule(split, config)) {
        if (capped()) break;
        ++step;
        const auto start = Clock::now();
        const double beta = config.beta * scheduled_lr(config, step, model_dim);
        std::vector<Batch> inner;
        for (const auto& ids : it.inner) inner.push_back(gather(data, ids));
        const std::uint64_t seed = step_seed(config.rng_seed, step, 0);
        InnerResult adapted = inner_update(objective, params, inner, config.alpha, config.clip_norm, seed);
        const double support_loss =
            outer_update(objective, params, adapted.adapted, gather(data, it.support), beta, config.clip_norm, seed);
        StepRecord r;
        r.iteration = step;
        r.epoch = epoch;
        r.method = config.method;
        r.train_loss = adapted.loss;
        r.support_loss = support_loss;
        r.lr = beta;
        r.wall_ms = elapsed_ms(start);
        r.trainable_param_count = trainable;
        emit(std::move(r));
      }
    }
    return records;
  }

  Adam adam;
  std::vector<std::size_t> order(data.size());
  for (std::size_t epoch = 0; epoch < config.epochs && !capped(); ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    auto rng = make_rng(config.rng_seed, {0x0bd7, epoch});
    shuffle(order, rng);
    for (std::size_t start = 0; start < order.size() && !capped(); start += config.batch_size) {
      ++step;
      const auto t0 = Clock::now();
      const std::size_t end = std::min(start + config.batch_size, order.size());
      const Batch batch = gather(data, std::span(order).subspan(start, end - start));
      asr::GradientSet grads;
      const double loss = objective.evaluate(params, batch, grads, step_seed(config.rng_seed, step, 0));
      require_finite(loss, "training", step);
      clip_gradients(grads, config.clip_norm);
      const double lr = scheduled_lr(config, step, model_dim);
      if (config.optimizer == Optimizer::Adam) {
        adam.apply(params, grads, lr);
      } else {
        sgd_apply(params, grads, lr);
      }
      StepRecord r;
      r.iteration = step;
      r.epoch = epoch;
      r.method = config.method;
      r.train_loss = loss;
      r.lr = lr;
      r.wall_ms = elapsed_ms(t0);
      r.trainable_param_count = trainable;
      emit(std::move(r));
    }
  }
  return records;
}

std::vector<StepRecord> train(const TrainerConfig& config, const loss::LossConfig& losses, asr::AsrModel& model,
                              std::span<const synth::Utterance> data, const StepCallback& on_step) {
  config.validate();
  losses.validate();
  model.config.validate();
  if ((config.method == Method::WCA || config.method == Method::KLD) && !model.params.has_snapshot()) {
    throw ConfigError(std::string(method_name(config.method)) + " needs a snapshot of the starting model");
  }
  if (config.freeze_policy) {
    asr::apply_freeze_policy(model.params, *config.freeze_policy);
  } else if (uses_freeze(config.method)) {
    asr::apply_freeze_policy(model.params, asr::FreezePolicy::default_for(model.config));
  } else {
    model.params.clear_frozen();
  }
  using R = HybridObjective::Regularizer;
  const R reg = config.method == Method::WCA ? R::Wca : config.method == Method::KLD ? R::Kld : R::None;
  HybridObjective objective(model.config, losses, reg);
  return train(config, objective, model.params, model.config.model_dim, data, on_step);
}

std::string format_step_record(const StepRecord& record) {
  nlohmann::ordered_json j;
  j["iteration"] = record.iteration;
  j["epoch"] = record.epoch;
  j["method"] = method_name(record.method);
  j["train_loss"] = record.train_loss;
  j["support_loss"] = record.support_loss ? nlohmann::ordered_json(*record.support_loss) : nlohmann::ordered_json();
  j["lr"] = record.lr;
  j["wall_ms"] = record.wall_ms;
  j["trainable_param_count"] = record.trainable_param_count;
  return j.dump();
}

void write_training_log(std::span<const StepRecord> records, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write training log: " + path.string());
  for (const auto& r : records) out << format_step_record(r) << '\n';
}

}  // namespace metaxp::meta
