// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <limits>

#include "metaxp/error.hpp"
#include "metaxp/kernels.hpp"
#include "metaxp/losses.hpp"

namespace metaxp::loss {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

inline double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  return a > b ? a + std::log1p(std::exp(b - a)) : b + std::log1p(std::exp(a - b));
}

}  // namespace

std::size_t ctc_min_frames(std::span<const std::size_t> labels) {
  std::size_t n = labels.size();
  for (std::size_t i = 1; i < labels.size(); ++i) {
    if (labels[i] == labels[i - 1]) ++n;
  }
  return n;
}

CtcResult ctc_forward_backward(const Tensor& log_probs, std::span<const std::size_t> labels, std::size_t blank) {
  if (log_probs.rank() != 2) throw ShapeError("ctc_loss: log_probs must be U x V, got " + shape_string(log_probs.shape()));
  const std::size_t frames = log_probs.shape()[0];
  const std::size_t vocab = log_probs.shape()[1];
  for (auto s : labels) {
    if (s >= vocab || s == blank) throw ShapeError("ctc_loss: label symbol " + std::to_string(s) + " invalid");
  }
  const std::size_t required = ctc_min_frames(labels);
  if (frames < required) throw UnalignableError(frames, required);

  // Extended sequence: blank, l1, blank, l2, ..., lL, blank.
  const std::size_t states = 2 * labels.size() + 1;
  std::vector<std::size_t> ext(states, blank);
  for (std::size_t i = 0; i < labels.size(); ++i) ext[2 * i + 1] = labels[i];
  // Skip transition s-2 -> s is allowed into a non-blank that differs from
  // the label two states back.
  std::vector<char> can_skip(states, 0);
  for (std::size_t s = 2; s < states; ++s) can_skip[s] = ext[s] != blank && ext[s] != ext[s - 2];

  auto lp = [&](std::size_t t, std::size_t s) { return log_probs.at(t, ext[s]); };

  std::vector<double> alpha(frames * states, kNegInf);
  std::vector<double> beta(frames * states, kNegInf);
  alpha[0] = lp(0, 0);
  if (states > 1) alpha[1] = lp(0, 1);
  for (std::size_t t = 1; t < frames; ++t) {
    const double* prev = &alpha[(t - 1) * states];
    double* cur = &alpha[t * states];
    for (std::size_t s = 0; s < states; ++s) {
      double acc = prev[s];
      if (s >= 1) acc = log_add(acc, prev[s - 1]);
      if (s >= 2 && can_skip[s]) acc = log_add(acc, prev[s - 2]);
      cur[s] = acc == kNegInf ? kNegInf : acc + lp(t, s);
    }
  }
  const std::size_t last = (frames - 1) * states;
  beta[last + states - 1] = lp(frames - 1, states - 1);
  if (states > 1) beta[last + states - 2] = lp(frames - 1, states - 2);
  for (std::size_t t = frames - 1; t-- > 0;) {
    const double* next = &beta[(t + 1) * states];
    double* cur = &beta[t * states];
    for (std::size_t s = 0; s < states; ++s) {
      double acc = next[s];
      if (s + 1 < states) acc = log_add(acc, next[s + 1]);
      if (s + 2 < states && can_skip[s + 2]) acc = log_add(acc, next[s + 2]);
      cur[s] = acc == kNegInf ? kNegInf : acc + lp(t, s);
    }
  }

  double log_total = alpha[last + states - 1];
  if (states > 1) log_total = log_add(log_total, alpha[last + states - 2]);
  if (!std::isfinite(log_total)) throw UnalignableError(frames, required);

  CtcResult result;
  result.loss = -log_total;
  result.grad.assign(frames * vocab, 0.0);
  // d(-log P)/d log y_t(k) = -sum_{s: ext[s]=k} alpha_t(s) beta_t(s) / (y_t(k) P)
  std::vector<double> occupancy(vocab);
  for (std::size_t t = 0; t < frames; ++t) {
    std::fill(occupancy.begin(), occupancy.end(), kNegInf);
    for (std::size_t s = 0; s < states; ++s) {
      const double a = alpha[t * states + s], b = beta[t * states + s];
      if (a == kNegInf || b == kNegInf) continue;
      occupancy[ext[s]] = log_add(occupancy[ext[s]], a + b - lp(t, s));
    }
    for (std::size_t k = 0; k < vocab; ++k) {
      if (occupancy[k] != kNegInf) result.grad[t * vocab + k] = -std::exp(occupancy[k] - log_total);
    }
  }
  return result;
}

ad::Var ctc_loss(ad::Var log_probs, std::span<const std::size_t> labels, std::size_t blank) {
  if (!log_probs.valid()) throw GraphError("ctc_loss: unbound variable");
  CtcResult r = ctc_forward_backward(log_probs.value(), labels, blank);
  const std::uint32_t in = log_probs.id;
  return log_probs.graph->record(ad::OpKind::Custom, {in}, Tensor::scalar(r.loss),
                                 [in, grad = std::move(r.grad)](ad::Graph& g, std::uint32_t self) {
                                   kernels::axpy(g.grad_of(self)[0], grad, g.grad_buffer(in));
                                 });
}

}  // namespace metaxp::loss
