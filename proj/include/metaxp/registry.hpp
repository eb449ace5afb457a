// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "metaxp/graph.hpp"
#include "metaxp/tensor.hpp"

namespace metaxp::asr {

// Named model parameters in declaration order, with a freeze mask and an
// optional immutable snapshot of the values at the time it was taken.
// Copies share the snapshot.
class ParameterRegistry {
 public:
  struct Entry {
    std::string name;
    Tensor value;
    bool frozen = false;
  };

  void add(std::string name, Tensor value);

  std::size_t size() const { return entries_.size(); }
  std::span<const Entry> entries() const { return entries_; }
  const Entry& entry(std::size_t i) const { return entries_[i]; }
  Tensor& value(std::size_t i) { return entries_[i].value; }
  const Tensor& value(std::size_t i) const { return entries_[i].value; }

  std::optional<std::size_t> find(const std::string& name) const;
  std::size_t index_of(const std::string& name) const;  // throws ConfigError
  const Tensor& get(const std::string& name) const { return entries_[index_of(name)].value; }
  Tensor& get(const std::string& name) { return entries_[index_of(name)].value; }
  std::vector<std::string> names() const;

  void set_frozen(const std::set<std::string>& names);
  void clear_frozen();
  bool is_frozen(std::size_t i) const { return entries_[i].frozen; }
  std::set<std::string> frozen_names() const;

  std::size_t parameter_count() const;
  std::size_t trainable_count() const;

  void take_snapshot();
  void restore_snapshot(std::vector<Tensor> snapshot);
  void clear_snapshot() { snapshot_.reset(); }
  bool has_snapshot() const { return snapshot_ != nullptr; }
  // Throws ConfigError when no snapshot was taken.
  const std::vector<Tensor>& snapshot() const;

  // Bytewise equality of names, values and freeze flags.
  bool same_values(const ParameterRegistry& other) const;

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
  std::shared_ptr<const std::vector<Tensor>> snapshot_;
};

// One gradient buffer per registry entry; empty for entries that received
// no gradient (frozen, or not reached by the loss).
using GradientSet = std::vector<std::vector<double>>;

// Binds registry entries into a graph on first use. Frozen entries become
// plain leaves with no gradient slot.
class BoundParameters {
 public:
  BoundParameters(ad::Graph& graph, const ParameterRegistry& registry, bool differentiate);

  ad::Var get(const std::string& name);
  ad::Var get(std::size_t index);
  ad::Graph& graph() { return graph_; }
  const ParameterRegistry& registry() const { return registry_; }

  // After graph.backward(): adds the gradient of each bound entry into out
  // (resized to registry.size() on first use).
  void accumulate_gradients(GradientSet& out) const;

 private:
  ad::Graph& graph_;
  const ParameterRegistry& registry_;
  bool differentiate_;
  std::vector<std::optional<ad::Var>> bound_;
};

}  // namespace metaxp::asr
