// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "metaxp/graph.hpp"

namespace metaxp::ad {

// Rank-2 product: [m x k] * [k x n].
Var matmul(Var a, Var b);
// Elementwise sum. b may also be a row vector ([n] or [1 x n]) broadcast
// over the rows of a rank-2 a.
Var add(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var relu(Var a);
// Row-wise over the last dimension.
Var softmax(Var a);
Var log_softmax(Var a);
// Row-wise normalisation followed by per-column gain and bias ([n] each).
Var layer_norm(Var x, Var gain, Var bias, double epsilon = 1e-5);
// Inverted dropout. Identity (no node recorded) outside training mode or
// when rate is 0. The sampled mask is kept for backward.
Var dropout(Var x, double rate);
// Gathers rows of table ([vocab x dim]) by id.
Var embedding(Var table, std::span<const std::size_t> ids);
// axis 0 stacks rows, axis 1 stacks columns. Rank-2 inputs only.
Var concat(std::span<const Var> parts, int axis);
// Half-open range [begin, end) along axis 0 or 1 of a rank-2 tensor.
Var slice(Var x, int axis, std::size_t begin, std::size_t end);
Var reduce_sum(Var x);
Var reduce_mean(Var x);
Var transpose(Var x);

inline Var sub(Var a, Var b) { return add(a, scale(b, -1.0)); }

}  // namespace metaxp::ad
