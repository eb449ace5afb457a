// SPDX-License-Identifier: Apache-2.0
#include "metaxp/graph.hpp"

#include <algorithm>

#include "metaxp/error.hpp"

namespace metaxp::ad {

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Leaf: return "leaf";
    case OpKind::Constant: return "constant";
    case OpKind::MatMul: return "matmul";
    case OpKind::Add: return "add";
    case OpKind::Mul: return "mul";
    case OpKind::Scale: return "scale";
    case OpKind::Relu: return "relu";
    case OpKind::Softmax: return "softmax";
    case OpKind::LogSoftmax: return "log_softmax";
    case OpKind::LayerNorm: return "layer_norm";
    case OpKind::Dropout: return "dropout";
    case OpKind::Embedding: return "embedding";
    case OpKind::Concat: return "concat";
    case OpKind::Slice: return "slice";
    case OpKind::ReduceSum: return "reduce_sum";
    case OpKind::ReduceMean: return "reduce_mean";
    case OpKind::Transpose: return "transpose";
    case OpKind::Custom: return "custom";
  }
  return "unknown";
}

const Tensor& Var::value() const { return graph->value(*this); }

Graph::Graph(Mode mode, std::uint64_t dropout_seed) : mode_(mode), rng_(dropout_seed) {
  nodes_.reserve(256);
}

void Graph::check_owner(Var v, const char* what) const {
  if (v.graph != this || v.id >= nodes_.size()) {
    throw GraphError(std::string(what) + ": variable does not belong to this graph");
  }
}

Var Graph::leaf(Tensor value, bool requires_grad) {
  if (!value.all_finite()) throw NonFiniteError("non-finite value in graph input");
  value.set_requires_grad(requires_grad);
  return record(OpKind::Leaf, {}, std::move(value), nullptr);
}

Var Graph::borrowed_leaf(const Tensor& value, bool requires_grad) {
  const auto id = static_cast<std::uint32_t>(nodes_.size());
  nodes_.push_back(Node{OpKind::Leaf, requires_grad, {}, Tensor{}, {}, BackwardFn{}, &value});
  return Var{this, id};
}

Var Graph::constant(Tensor value) {
  if (!value.all_finite()) throw NonFiniteError("non-finite value in graph constant");
  return record(OpKind::Constant, {}, std::move(value), nullptr);
}

Var Graph::record(OpKind kind, std::vector<std::uint32_t> inputs, Tensor value, BackwardFn backward) {
  bool needs = false;
  if (kind == OpKind::Leaf) {
    needs = value.requires_grad();
  } else {
    for (auto id : inputs) needs = needs || nodes_[id].needs_grad;
  }
  const auto id = static_cast<std::uint32_t>(nodes_.size());
  nodes_.push_back(Node{kind, needs, std::move(inputs), std::move(value), {},
                        needs ? std::move(backward) : BackwardFn{}});
  return Var{this, id};
}

const Tensor& Graph::value(Var v) const {
  check_owner(v, "value");
  return nodes_[v.id].get();
}

OpKind Graph::kind(Var v) const {
  check_owner(v, "kind");
  return nodes_[v.id].kind;
}

std::span<const std::uint32_t> Graph::inputs(Var v) const {
  check_owner(v, "inputs");
  return nodes_[v.id].inputs;
}

std::span<const double> Graph::grad(Var v) const {
  check_owner(v, "grad");
  return nodes_[v.id].grad;
}

std::span<double> Graph::grad_buffer(std::uint32_t id) {
  auto& node = nodes_[id];
  if (node.grad.empty()) node.grad.assign(node.get().size(), 0.0);
  return node.grad;
}

void Graph::backward(Var root) {
  if (nodes_.empty() || root.graph == nullptr) throw GraphError("backward before forward");
  check_owner(root, "backward");
  if (nodes_[root.id].get().size() != 1) {
    throw GraphError("backward seed must be a scalar, got shape " +
                     shape_string(nodes_[root.id].get().shape()));
  }
  for (auto& node : nodes_) node.grad.clear();
  differentiated_ = true;
  if (!nodes_[root.id].needs_grad) return;
  grad_buffer(root.id)[0] = 1.0;
  for (std::uint32_t id = root.id + 1; id-- > 0;) {
    auto& node = nodes_[id];
    if (!node.needs_grad || node.grad.empty() || !node.backward) continue;
    node.backward(*this, id);
  }
}

Bindings::Bindings(Graph& graph, const NamedTensors& inputs) : graph_(graph), inputs_(inputs) {}

Var Bindings::get(const std::string& name) {
  if (auto it = bound_.find(name); it != bound_.end()) return it->second;
  auto it = inputs_.find(name);
  if (it == inputs_.end()) throw GraphError("unbound input: " + name);
  Var v = graph_.leaf(it->second, it->second.requires_grad());
  bound_.emplace(name, v);
  return v;
}

Evaluation forward(const Program& program, const NamedTensors& inputs, GraphOptions options) {
  Evaluation eval;
  eval.graph = std::make_unique<Graph>(options.mode, options.dropout_seed);
  Bindings bindings(*eval.graph, inputs);
  eval.output = program(*eval.graph, bindings);
  if (eval.output.graph != eval.graph.get()) throw GraphError("program returned a foreign variable");
  eval.leaves = bindings.bound();
  return eval;
}

std::map<std::string, std::vector<double>> backward(Evaluation& evaluation) {
  if (!evaluation.graph) throw GraphError("backward before forward");
  evaluation.graph->backward(evaluation.output);
  std::map<std::string, std::vector<double>> grads;
  for (const auto& [name, var] : evaluation.leaves) {
    if (!var.value().requires_grad()) continue;
    auto g = evaluation.graph->grad(var);
    if (g.empty()) {
      grads.emplace(name, std::vector<double>(var.value().size(), 0.0));
    } else {
      grads.emplace(name, std::vector<double>(g.begin(), g.end()));
    }
  }
  return grads;
}

}  // namespace metaxp::ad
