// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "metaxp/graph.hpp"
#include "metaxp/registry.hpp"

namespace metaxp::loss {

struct LossConfig {
  double lambda = 0.3;           // CTC weight in the hybrid objective
  double label_smoothing = 0.1;  // decoder targets
  double kld_weight = 0.5;
  double wca_weight = 0.01;

  void validate() const;
  friend bool operator==(const LossConfig&, const LossConfig&) = default;
};

// Frames needed to emit labels under CTC: one per label plus one blank
// between each pair of equal neighbours.
std::size_t ctc_min_frames(std::span<const std::size_t> labels);

struct CtcResult {
  double loss = 0.0;          // -log p(labels | log_probs)
  std::vector<double> grad;   // d loss / d log_probs, U x V row-major
};

// Log-space forward-backward over the blank-augmented label sequence.
// log_probs rows are treated as independent inputs. Throws UnalignableError
// when U < ctc_min_frames(labels) and ShapeError for out-of-range symbols.
CtcResult ctc_forward_backward(const Tensor& log_probs, std::span<const std::size_t> labels,
                               std::size_t blank = 0);

// Graph node wrapping ctc_forward_backward; log_probs is U x V.
ad::Var ctc_loss(ad::Var log_probs, std::span<const std::size_t> labels, std::size_t blank = 0);

// Mean over the len+1 decoder positions of label-smoothed cross-entropy
// against labels followed by eos. The target keeps 1 - smoothing; the rest
// is spread evenly over the other vocab_size - 1 symbols.
ad::Var aed_loss(ad::Var logits, std::span<const std::size_t> labels, std::size_t eos, double smoothing);

ad::Var hybrid_loss(ad::Var ctc, ad::Var aed, double lambda);
inline double hybrid_loss(double ctc, double aed, double lambda) { return lambda * ctc + (1.0 - lambda) * aed; }

// (weight / 2) * sum over unfrozen entries of ||theta - theta0||^2, with
// theta0 the registry snapshot. Throws ConfigError without a snapshot.
ad::Var wca_penalty(asr::BoundParameters& params, double weight);

// weight * mean over rows of KL(teacher || student); both inputs are
// log-distributions of the same shape.
ad::Var kld_penalty(ad::Var student_log_probs, const Tensor& teacher_log_probs, double weight);

}  // namespace metaxp::loss
