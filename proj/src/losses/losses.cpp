// SPDX-License-Identifier: Apache-2.0
#include <cmath>

#include "metaxp/error.hpp"
#include "metaxp/losses.hpp"
#include "metaxp/ops.hpp"

namespace metaxp::loss {

using ad::Var;

void LossConfig::validate() const {
  if (!(lambda > 0.0 && lambda < 1.0)) throw ConfigError("lambda must satisfy 0 < lambda < 1");
  if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) throw ConfigError("label_smoothing must be in [0, 1)");
  if (!(kld_weight >= 0.0)) throw ConfigError("kld_weight must be >= 0");
  if (!(wca_weight >= 0.0)) throw ConfigError("wca_weight must be >= 0");
}

Var aed_loss(Var logits, std::span<const std::size_t> labels, std::size_t eos, double smoothing) {
  const Tensor& lv = logits.value();
  if (lv.rank() != 2 || lv.shape()[0] != labels.size() + 1) {
    throw ShapeError("aed_loss: logits " + shape_string(lv.shape()) + " do not match " +
                     std::to_string(labels.size()) + " labels + eos");
  }
  const std::size_t positions = lv.shape()[0], vocab = lv.shape()[1];
  if (eos >= vocab) throw ShapeError("aed_loss: eos outside vocabulary");
  const double off = vocab > 1 ? smoothing / static_cast<double>(vocab - 1) : 0.0;
  Tensor target(lv.shape(), off);
  for (std::size_t t = 0; t < positions; ++t) {
    const std::size_t symbol = t < labels.size() ? labels[t] : eos;
    if (symbol >= vocab) throw ShapeError("aed_loss: label outside vocabulary");
    target.at(t, symbol) = 1.0 - smoothing;
  }
  Var weighted = ad::mul(logits.graph->constant(std::move(target)), ad::log_softmax(logits));
  return ad::scale(ad::reduce_sum(weighted), -1.0 / static_cast<double>(positions));
}

Var hybrid_loss(Var ctc, Var aed, double lambda) {
  return ad::add(ad::scale(ctc, lambda), ad::scale(aed, 1.0 - lambda));
}

Var wca_penalty(asr::BoundParameters& params, double weight) {
  const auto& reg = params.registry();
  const auto& anchor = reg.snapshot();
  ad::Graph& g = params.graph();
  std::vector<Var> terms;
  for (std::size_t i = 0; i < reg.size(); ++i) {
    if (reg.is_frozen(i)) continue;
    Var diff = ad::sub(params.get(i), g.constant(anchor[i]));
    terms.push_back(ad::reduce_sum(ad::mul(diff, diff)));
  }
  if (terms.empty()) return g.constant(Tensor::scalar(0.0));
  Var total = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) total = ad::add(total, terms[i]);
  return ad::scale(total, 0.5 * weight);
}

Var kld_penalty(Var student_log_probs, const Tensor& teacher_log_probs, double weight) {
  const Tensor& sv = student_log_probs.value();
  if (sv.shape() != teacher_log_probs.shape() || sv.rank() != 2) {
    throw ShapeError("kld_penalty: student " + shape_string(sv.shape()) + " vs teacher " +
                     shape_string(teacher_log_probs.shape()));
  }
  // KL(p || q) = sum p log p - sum p log q; the first sum is constant.
  Tensor p(teacher_log_probs.shape());
  double entropy_term = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = std::exp(teacher_log_probs[i]);
    entropy_term += p[i] * teacher_log_probs[i];
  }
  ad::Graph& g = *student_log_probs.graph;
  const double per_row = weight / static_cast<double>(sv.shape()[0]);
  Var cross = ad::reduce_sum(ad::mul(g.constant(std::move(p)), student_log_probs));
  return ad::add(ad::scale(cross, -per_row), g.constant(Tensor::scalar(entropy_term * per_row)));
}

}  // namespace metaxp::loss
