// SPDX-License-Identifier: Apache-2.0
#pragma once

// Define-by-run reverse-mode autodiff. A Graph records every operation in
// creation order as it executes; backward() walks that record in exact
// reverse order. Graphs are rebuilt for every forward pass.

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "metaxp/tensor.hpp"

namespace metaxp::ad {

enum class Mode { Eval, Train };

enum class OpKind {
  Leaf,
  Constant,
  MatMul,
  Add,
  Mul,
  Scale,
  Relu,
  Softmax,
  LogSoftmax,
  LayerNorm,
  Dropout,
  Embedding,
  Concat,
  Slice,
  ReduceSum,
  ReduceMean,
  Transpose,
  Custom,
};

const char* op_name(OpKind kind);

class Graph;

// Handle to a node inside a Graph. Cheap to copy; only valid while the
// owning Graph is alive.
struct Var {
  Graph* graph = nullptr;
  std::uint32_t id = 0;

  bool valid() const { return graph != nullptr; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

class Graph {
 public:
  // Propagates gradient from node `self` to its inputs.
  using BackwardFn = std::function<void(Graph&, std::uint32_t self)>;

  explicit Graph(Mode mode = Mode::Eval, std::uint64_t dropout_seed = 0);
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Mode mode() const { return mode_; }
  bool training() const { return mode_ == Mode::Train; }
  std::mt19937_64& rng() { return rng_; }

  // Input nodes. Both reject non-finite data.
  Var leaf(Tensor value, bool requires_grad);
  Var constant(Tensor value);
  // Leaf that reads `value` in place instead of copying it. The tensor must
  // outlive the graph and stay unchanged while the graph is in use. Not
  // checked for finiteness; a non-finite entry shows up in the outputs.
  Var borrowed_leaf(const Tensor& value, bool requires_grad);

  const Tensor& value(Var v) const;
  OpKind kind(Var v) const;
  std::span<const std::uint32_t> inputs(Var v) const;
  std::size_t size() const { return nodes_.size(); }

  // Gradient of the last backward() root with respect to v; empty when v
  // received no gradient.
  std::span<const double> grad(Var v) const;

  // Seeds d(root)/d(root) = 1 and propagates. Throws GraphError if root is
  // not a scalar node of this graph or nothing has been recorded yet.
  void backward(Var root);
  bool differentiated() const { return differentiated_; }

  // Op-author interface.
  Var record(OpKind kind, std::vector<std::uint32_t> inputs, Tensor value, BackwardFn backward);
  bool needs_grad(std::uint32_t id) const { return nodes_[id].needs_grad; }
  std::span<const double> grad_of(std::uint32_t id) const { return nodes_[id].grad; }
  // Zero-initialised on first request.
  std::span<double> grad_buffer(std::uint32_t id);
  const Tensor& value_of(std::uint32_t id) const { return nodes_[id].get(); }

 private:
  struct Node {
    OpKind kind;
    bool needs_grad;
    std::vector<std::uint32_t> inputs;
    Tensor value;
    std::vector<double> grad;
    BackwardFn backward;
    const Tensor* borrowed = nullptr;

    const Tensor& get() const { return borrowed ? *borrowed : value; }
  };

  void check_owner(Var v, const char* what) const;

  Mode mode_;
  std::mt19937_64 rng_;
  std::vector<Node> nodes_;
  bool differentiated_ = false;
};

// Named-input evaluation: the graph is built by `program` from the bound
// inputs each call.
using NamedTensors = std::map<std::string, Tensor>;

class Bindings {
 public:
  Bindings(Graph& graph, const NamedTensors& inputs);
  // Throws GraphError naming the missing input.
  Var get(const std::string& name);
  const std::map<std::string, Var>& bound() const { return bound_; }

 private:
  Graph& graph_;
  const NamedTensors& inputs_;
  std::map<std::string, Var> bound_;
};

using Program = std::function<Var(Graph&, Bindings&)>;

struct Evaluation {
  std::unique_ptr<Graph> graph;
  Var output;
  std::map<std::string, Var> leaves;

  const Tensor& value() const { return output.value(); }
};

struct GraphOptions {
  Mode mode = Mode::Eval;
  std::uint64_t dropout_seed = 0;
};

Evaluation forward(const Program& program, const NamedTensors& inputs, GraphOptions options = {});

// Gradients for every requires_grad input that the program read.
std::map<std::string, std::vector<double>> backward(Evaluation& evaluation);

}  // namespace metaxp::ad
