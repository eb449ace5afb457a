// SPDX-License-Identifier: Apache-2.0
#include "metaxp/finite_diff.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

#include "metaxp/error.hpp"

namespace metaxp::ad {

namespace {

double evaluate(const ScalarFn& fn, const Tensor& point, GraphOptions options) {
  Graph g(options.mode, options.dropout_seed);
  Var x = g.leaf(point, false);
  Var y = fn(g, x);
  return y.value().item();
}

}  // namespace

GradientCheck finite_diff_check(const ScalarFn& fn, const Tensor& point, double step, GraphOptions options) {
  if (!(step > 0.0)) throw GraphError("finite_diff_check: step must be positive");

  const double first = evaluate(fn, point, options);
  const double second = evaluate(fn, point, options);
  if (std::bit_cast<std::uint64_t>(first) != std::bit_cast<std::uint64_t>(second)) {
    throw GraphError("finite_diff_check: function is not deterministic");
  }

  GradientCheck result;
  {
    Graph g(options.mode, options.dropout_seed);
    Var x = g.leaf(point, true);
    Var y = fn(g, x);
    g.backward(y);
    auto grad = g.grad(x);
    result.analytic.assign(point.size(), 0.0);
    std::copy(grad.begin(), grad.end(), result.analytic.begin());
  }

  result.numeric.resize(point.size());
  Tensor probe = point;
  for (std::size_t i = 0; i < point.size(); ++i) {
    const double x0 = point[i];
    probe[i] = x0 + step;
    const double up = evaluate(fn, probe, options);
    probe[i] = x0 - step;
    const double down = evaluate(fn, probe, options);
    probe[i] = x0;
    result.numeric[i] = (up - down) / (2.0 * step);
    const double err =
        std::abs(result.analytic[i] - result.numeric[i]) / std::max(std::abs(result.analytic[i]), 1e-8);
    result.max_relative_error = std::max(result.max_relative_error, err);
  }
  return result;
}

}  // namespace metaxp::ad
