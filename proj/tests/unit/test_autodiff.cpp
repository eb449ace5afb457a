// SPDX-License-Identifier: Apache-2.0
#include <bit>
#include <cmath>
#include <cstring>
#include <limits>

#include "doctest.h"
#include "helpers.hpp"
#include "metaxp/error.hpp"
#include "metaxp/finite_diff.hpp"
#include "metaxp/graph.hpp"
#include "metaxp/losses.hpp"
#include "metaxp/ops.hpp"

using namespace metaxp;
using namespace metaxp::ad;

namespace {

bool bit_equal(std::span<const double> a, std::span<const double> b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

}  // namespace

TEST_CASE("tensor shape and data agree") {
  Tensor t({2, 3, 4});
  CHECK(t.size() == 24);
  CHECK(t.rows() == 2);
  CHECK(t.cols() == 12);
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
  CHECK_THROWS_AS(Tensor({0, 2}), ShapeError);
  CHECK(Tensor::scalar(3.5).item() == 3.5);
  CHECK_THROWS_AS(t.item(), ShapeError);
}

TEST_CASE("matmul by the identity returns the vector") {
  Graph g;
  Var eye = g.constant(Tensor::matrix(2, 2, {1, 0, 0, 1}));
  Var v = g.constant(Tensor::matrix(2, 1, {3.25, -7.5}));
  Var out = matmul(eye, v);
  CHECK(out.value() == v.value());
}

TEST_CASE("softmax of equal scores is uniform") {
  Graph g;
  Var s = softmax(g.constant(Tensor::matrix(1, 2, {0, 0})));
  CHECK(s.value()[0] == 0.5);
  CHECK(s.value()[1] == 0.5);
}

TEST_CASE("log_softmax matches arbitrary-precision reference") {
  // mpmath, 40 digits: x - log(e + e^2 + e^3)
  const double expected[3] = {-2.407605964444380304482920, -1.407605964444380304482920,
                              -0.4076059644443803044829199};
  Graph g;
  Var out = log_softmax(g.constant(Tensor::matrix(1, 3, {1, 2, 3})));
  double total = 0.0;
  for (int i = 0; i < 3; ++i) {
    CHECK(out.value()[i] == doctest::Approx(expected[i]).epsilon(1e-15));
    total += std::exp(out.value()[i]);
  }
  CHECK(total == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("gradient of x*x at 3 is 6") {
  Graph g;
  Var x = g.leaf(Tensor::scalar(3.0), true);
  Var y = mul(x, x);
  g.backward(y);
  CHECK(g.grad(x)[0] == 6.0);
}

TEST_CASE("sum of softmax has zero gradient") {
  Rng rng = make_rng(11);
  Graph g;
  Var x = g.leaf(testutil::random_tensor(rng, {1, 5}, -2, 2), true);
  g.backward(reduce_sum(softmax(x)));
  for (double v : g.grad(x)) CHECK(std::abs(v) < 1e-15);
}

TEST_CASE("random three-layer MLP passes the finite-difference check") {
  Rng rng = make_rng(12);
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor w1 = testutil::random_tensor(rng, {4, 6});
    const Tensor w2 = testutil::random_tensor(rng, {6, 5});
    const Tensor w3 = testutil::random_tensor(rng, {5, 1});
    const Tensor b1 = testutil::random_tensor(rng, {6});
    const Tensor point = testutil::random_tensor(rng, {3, 4});
    auto fn = [&](Graph& g, Var x) {
      Var h = relu(add(matmul(x, g.constant(w1)), g.constant(b1)));
      h = relu(matmul(h, g.constant(w2)));
      return reduce_sum(matmul(h, g.constant(w3)));
    };
    CHECK(finite_diff_check(fn, point, 1e-5).max_relative_error < 1e-4);
  }
}

TEST_CASE("finite_diff_check is exact on a linear function") {
  Rng rng = make_rng(13);
  const Tensor w = testutil::random_tensor(rng, {1, 6});
  auto fn = [&](Graph& g, Var x) { return reduce_sum(mul(x, g.constant(w))); };
  const auto check = finite_diff_check(fn, testutil::random_tensor(rng, {1, 6}), 1e-5);
  CHECK(check.max_relative_error < 1e-10);
}

TEST_CASE("finite_diff_check of a constant function gives zero on both sides") {
  auto fn = [](Graph& g, Var x) { return add(scale(reduce_sum(x), 0.0), g.constant(Tensor::scalar(2.0))); };
  Rng rng = make_rng(14);
  const auto check = finite_diff_check(fn, testutil::random_tensor(rng, {2, 2}), 1e-5);
  for (double v : check.analytic) CHECK(v == 0.0);
  for (double v : check.numeric) CHECK(v == 0.0);
}

TEST_CASE("finite_diff_check rejects a non-deterministic function") {
  int calls = 0;
  auto fn = [&](Graph& g, Var x) { return add(reduce_sum(x), g.constant(Tensor::scalar(++calls))); };
  CHECK_THROWS_AS(finite_diff_check(fn, Tensor::matrix(1, 2, {1, 2}), 1e-5), GraphError);
  CHECK_THROWS_AS(finite_diff_check(fn, Tensor::matrix(1, 2, {1, 2}), 0.0), GraphError);
}

TEST_CASE("CTC loss gradient with respect to logits on T=4, C=3") {
  Rng rng = make_rng(15);
  const std::vector<std::size_t> labels{1, 2};
  auto fn = [&](Graph&, Var x) { return loss::ctc_loss(log_softmax(x), labels); };
  for (int trial = 0; trial < 5; ++trial) {
    CHECK(finite_diff_check(fn, testutil::random_tensor(rng, {4, 3}, -2, 2), 1e-5).max_relative_error < 1e-4);
  }
}

TEST_CASE("shape mismatch names the op and both shapes") {
  Graph g;
  Var a = g.constant(Tensor({2, 3}));
  Var b = g.constant(Tensor({2, 3}));
  try {
    matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string what = e.what();
    CHECK(what.find("matmul") != std::string::npos);
    CHECK(what.find("[2x3]") != std::string::npos);
  }
}

TEST_CASE("non-finite graph inputs are rejected") {
  Graph g;
  CHECK_THROWS_AS(g.leaf(Tensor::scalar(std::numeric_limits<double>::quiet_NaN()), true), NonFiniteError);
  CHECK_THROWS_AS(g.constant(Tensor::matrix(1, 2, {1.0, std::numeric_limits<double>::infinity()})),
                  NonFiniteError);
}

TEST_CASE("backward preconditions") {
  SUBCASE("before forward") {
    Graph g;
    CHECK_THROWS_AS(g.backward(Var{}), GraphError);
    Evaluation empty;
    CHECK_THROWS_AS(backward(empty), GraphError);
  }
  SUBCASE("non-scalar seed") {
    Graph g;
    Var x = g.leaf(Tensor::matrix(1, 2, {1, 2}), true);
    CHECK_THROWS_AS(g.backward(scale(x, 2.0)), GraphError);
  }
  SUBCASE("variable from another graph") {
    Graph g1, g2;
    Var a = g1.leaf(Tensor::scalar(1.0), true);
    Var b = g2.leaf(Tensor::scalar(1.0), true);
    CHECK_THROWS_AS(add(a, b), GraphError);
  }
}

TEST_CASE("named-input forward and backward") {
  NamedTensors inputs;
  Tensor w = Tensor::matrix(1, 2, {2.0, -1.0});
  w.set_requires_grad(true);
  inputs.emplace("w", w);
  inputs.emplace("x", Tensor::matrix(1, 2, {3.0, 4.0}));
  auto eval = forward([](Graph&, Bindings& b) { return reduce_sum(mul(b.get("w"), b.get("x"))); }, inputs);
  CHECK(eval.value().item() == 2.0);
  auto grads = backward(eval);
  REQUIRE(grads.count("w") == 1);
  CHECK(grads.count("x") == 0);
  CHECK(grads["w"] == std::vector<double>{3.0, 4.0});
  CHECK_THROWS_AS(forward([](Graph&, Bindings& b) { return b.get("missing"); }, inputs), GraphError);
}

TEST_CASE("backward visits nodes in reverse creation order") {
  Graph g;
  Var x = g.leaf(Tensor::scalar(2.0), true);
  Var y = scale(x, 3.0);
  Var z = mul(y, x);
  CHECK(g.inputs(z)[0] == y.id);
  CHECK(g.inputs(z)[1] == x.id);
  for (std::uint32_t id = 0; id < g.size(); ++id) {
    for (auto in : g.inputs(Var{&g, id})) CHECK(in < id);
  }
  g.backward(z);
  CHECK(g.grad(x)[0] == 12.0);
}

TEST_CASE("train-mode graphs are bit-identical for the same seed") {
  Rng rng = make_rng(16);
  const Tensor input = testutil::random_tensor(rng, {5, 7});
  const Tensor w = testutil::random_tensor(rng, {7, 4});
  auto run = [&](std::uint64_t seed, std::vector<double>& grad) {
    Graph g(Mode::Train, seed);
    Var x = g.leaf(input, true);
    Var h = dropout(relu(matmul(x, g.constant(w))), 0.3);
    Var out = reduce_mean(log_softmax(h));
    g.backward(out);
    grad.assign(g.grad(x).begin(), g.grad(x).end());
    return out.value().item();
  };
  std::vector<double> g1, g2, g3;
  const double a = run(5, g1), b = run(5, g2);
  run(6, g3);
  CHECK(std::bit_cast<std::uint64_t>(a) == std::bit_cast<std::uint64_t>(b));
  CHECK(bit_equal(g1, g2));
  CHECK_FALSE(bit_equal(g1, g3));
}

TEST_CASE("dropout is the identity outside training") {
  Graph g(Mode::Eval, 1);
  Var x = g.constant(Tensor::matrix(1, 3, {1, 2, 3}));
  Var y = dropout(x, 0.5);
  CHECK(y.id == x.id);
}

TEST_CASE("backward is linear in the loss") {
  Rng rng = make_rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor point = testutil::random_tensor(rng, {3, 4});
    const Tensor w = testutil::random_tensor(rng, {4, 4});
    const double a = uniform(rng, -2, 2), b = uniform(rng, -2, 2);
    auto f = [&](Var x) { return reduce_sum(softmax(matmul(x, x.graph->constant(w)))); };
    auto gfn = [&](Var x) { return reduce_mean(mul(x, x)); };
    auto grad_of = [&](auto build) {
      Graph g;
      Var x = g.leaf(point, true);
      g.backward(build(x));
      return std::vector<double>(g.grad(x).begin(), g.grad(x).end());
    };
    const auto gf = grad_of(f);
    const auto gg = grad_of(gfn);
    const auto combined = grad_of([&](Var x) { return add(scale(f(x), a), scale(gfn(x), b)); });
    for (std::size_t i = 0; i < combined.size(); ++i) {
      const double expected = a * gf[i] + b * gg[i];
      CHECK(std::abs(combined[i] - expected) <= 1e-10 * std::max(1.0, std::abs(expected)));
    }
  }
}

TEST_CASE("op results and gradients on small fixed inputs") {
  Graph g;
  Var x = g.leaf(Tensor::matrix(2, 3, {1, -2, 3, -4, 5, -6}), true);
  SUBCASE("transpose") {
    Var t = transpose(x);
    CHECK(t.shape() == Shape{3, 2});
    CHECK(t.value().at(2, 1) == -6);
  }
  SUBCASE("slice and concat") {
    Var left = slice(x, 1, 0, 1);
    Var right = slice(x, 1, 1, 3);
    std::vector<Var> parts{left, right};
    Var back = concat(parts, 1);
    CHECK(back.value() == x.value());
    g.backward(reduce_sum(slice(x, 0, 1, 2)));
    CHECK(std::vector<double>(g.grad(x).begin(), g.grad(x).end()) == std::vector<double>{0, 0, 0, 1, 1, 1});
  }
  SUBCASE("relu") {
    g.backward(reduce_sum(relu(x)));
    CHECK(std::vector<double>(g.grad(x).begin(), g.grad(x).end()) == std::vector<double>{1, 0, 1, 0, 1, 0});
  }
  SUBCASE("embedding accumulates repeated ids") {
    Var table = g.leaf(Tensor::matrix(3, 2, {1, 2, 3, 4, 5, 6}), true);
    const std::vector<std::size_t> ids{2, 0, 2};
    Var rows = embedding(table, ids);
    CHECK(rows.value().at(0, 1) == 6);
    g.backward(reduce_sum(rows));
    CHECK(std::vector<double>(g.grad(table).begin(), g.grad(table).end()) ==
          std::vector<double>{1, 1, 0, 0, 2, 2});
    const std::vector<std::size_t> bad{3};
    CHECK_THROWS_AS(embedding(table, bad), ShapeError);
  }
  SUBCASE("layer norm of zeros is finite") {
    Var z = g.constant(Tensor({2, 4}));
    Var n = layer_norm(z, g.constant(Tensor({4}, 1.0)), g.constant(Tensor({4})));
    CHECK(n.value().all_finite());
  }
}
