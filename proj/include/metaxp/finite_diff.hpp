// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <vector>

#include "metaxp/graph.hpp"

namespace metaxp::ad {

// Builds a scalar from the single differentiable input x.
using ScalarFn = std::function<Var(Graph&, Var x)>;

struct GradientCheck {
  double max_relative_error = 0.0;
  std::vector<double> analytic;
  std::vector<double> numeric;
};

// Compares the autodiff gradient of fn at point against central differences
// with the given step. Relative error per coordinate is
// |analytic - numeric| / max(|analytic|, 1e-8). Every evaluation rebuilds the
// graph with the same options, so dropout masks repeat. Throws GraphError
// if two evaluations at the same point disagree.
GradientCheck finite_diff_check(const ScalarFn& fn, const Tensor& point, double step,
                                GraphOptions options = {});

}  // namespace metaxp::ad
