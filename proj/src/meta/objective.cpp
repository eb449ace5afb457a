// SPDX-License-Identifier: Apache-2.0
#include <cmath>

#include "metaxp/error.hpp"
#include "metaxp/kernels.hpp"
#include "metaxp/losses.hpp"
#include "metaxp/ops.hpp"
#include "metaxp/random.hpp"
#include "metaxp/trainer.hpp"

namespace metaxp::meta {

HybridObjective::HybridObjective(asr::ModelConfig model, loss::LossConfig losses, Regularizer regularizer)
    : model_(std::move(model)), losses_(losses), regularizer_(regularizer) {
  model_.validate();
  losses_.validate();
}

const Tensor& HybridObjective::teacher_log_probs(const asr::ParameterRegistry& params, const synth::Utterance& utt) {
  auto it = teacher_cache_.find(utt.id);
  if (it != teacher_cache_.end()) return it->second;
  asr::ParameterRegistry teacher;
  const auto& anchor = params.snapshot();
  for (std::size_t i = 0; i < params.size(); ++i) teacher.add(params.entry(i).name, anchor[i]);
  ad::Graph g(ad::Mode::Eval);
  asr::BoundParameters bound(g, teacher, false);
  auto enc = asr::encode(model_, bound, utt.features);
  Tensor lp = ad::log_softmax(asr::ctc_logits(model_, bound, enc)).value();
  return teacher_cache_.emplace(utt.id, std::move(lp)).first->second;
}

double HybridObjective::evaluate(const asr::ParameterRegistry& params, std::span<const synth::Utterance* const> batch,
                                 asr::GradientSet& grads, std::uint64_t seed) {
  if (batch.empty()) throw ConfigError("empty batch");
  if (regularizer_ != Regularizer::None && !params.has_snapshot()) {
    throw ConfigError("WCA and KLD need a snapshot of the starting parameters");
  }
  const double inv_batch = 1.0 / static_cast<double>(batch.size());
  double total = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const synth::Utterance& utt = *batch[i];
    auto rng = make_rng(seed, {i});
    ad::Graph g(ad::Mode::Train, rng());
    asr::BoundParameters bound(g, params, true);
    auto enc = asr::encode(model_, bound, utt.features);
    ad::Var log_probs = ad::log_softmax(asr::ctc_logits(model_, bound, enc));
    ad::Var ctc = loss::ctc_loss(log_probs, utt.labels, model_.blank());
    ad::Var aed = loss::aed_loss(asr::aed_logits(model_, bound, enc, utt.labels), utt.labels, model_.sos_eos(),
                                 losses_.label_smoothing);
    ad::Var total_loss = loss::hybrid_loss(ctc, aed, losses_.lambda);
    if (regularizer_ == Regularizer::Kld) {
      total_loss = ad::add(total_loss, loss::kld_penalty(log_probs, teacher_log_probs(params, utt), losses_.kld_weight));
    }
    const double value = total_loss.value().item();
    if (!std::isfinite(value)) throw NonFiniteError("non-finite loss on utterance " + utt.id);
    g.backward(ad::scale(total_loss, inv_batch));
    bound.accumulate_gradients(grads);
    total += value;
  }
  double mean = total * inv_batch;
  if (regularizer_ == Regularizer::Wca) {
    ad::Graph g(ad::Mode::Eval);
    asr::BoundParameters bound(g, params, true);
    ad::Var penalty = loss::wca_penalty(bound, losses_.wca_weight);
    if (g.size() > 1) {
      g.backward(penalty);
      bound.accumulate_gradients(grads);
    }
    mean += penalty.value().item();
  }
  return mean;
}

double global_norm(const asr::GradientSet& grads) {
  double sum = 0.0;
  for (const auto& g : grads) sum += kernels::dot(g, g);
  return std::sqrt(sum);
}

void clip_gradients(asr::GradientSet& grads, double max_norm) {
  if (max_norm <= 0.0) return;
  const double norm = global_norm(grads);
  if (!std::isfinite(norm)) throw NonFiniteError("non-finite gradient norm");
  if (norm <= max_norm) return;
  const double factor = max_norm / norm;
  for (auto& g : grads) kernels::scale(factor, g);
}

void sgd_apply(asr::ParameterRegistry& params, const asr::GradientSet& grads, double lr) {
  for (std::size_t i = 0; i < params.size() && i < grads.size(); ++i) {
    if (params.is_frozen(i) || grads[i].empty()) continue;
    kernels::axpy(-lr, grads[i], params.value(i).data());
  }
}

void Adam::apply(asr::ParameterRegistry& params, const asr::GradientSet& grads, double lr) {
  if (m_.empty()) {
    m_.resize(params.size());
    v_.resize(params.size());
  }
  ++step_;
  const double correction1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
  const double correction2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
  for (std::size_t i = 0; i < params.size() && i < grads.size(); ++i) {
    if (params.is_frozen(i) || grads[i].empty()) continue;
    auto& m = m_[i];
    auto& v = v_[i];
    if (m.empty()) {
      m.assign(grads[i].size(), 0.0);
      v.assign(grads[i].size(), 0.0);
    }
    auto w = params.value(i).data();
    const auto& g = grads[i];
    for (std::size_t k = 0; k < g.size(); ++k) {
      m[k] = beta1_ * m[k] + (1.0 - beta1_) * g[k];
      v[k] = beta2_ * v[k] + (1.0 - beta2_) * g[k] * g[k];
      w[k] -= lr * (m[k] / correction1) / (std::sqrt(v[k] / correction2) + epsilon_);
    }
  }
}

}  // namespace metaxp::meta
