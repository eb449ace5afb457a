// SPDX-License-Identifier: Apache-2.0
#include "metaxp/registry.hpp"

#include "metaxp/error.hpp"
#include "metaxp/kernels.hpp"

namespace metaxp::asr {

void ParameterRegistry::add(std::string name, Tensor value) {
  if (index_.contains(name)) throw ConfigError("duplicate parameter name: " + name);
  index_.emplace(name, entries_.size());
  entries_.push_back(Entry{std::move(name), std::move(value), false});
}

std::optional<std::size_t> ParameterRegistry::find(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::size_t ParameterRegistry::index_of(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
  return it->second;
}

std::vector<std::string> ParameterRegistry::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.name);
  return out;
}

void ParameterRegistry::set_frozen(const std::set<std::string>& names) {
  for (const auto& n : names) index_of(n);
  for (auto& e : entries_) e.frozen = names.contains(e.name);
}

void ParameterRegistry::clear_frozen() {
  for (auto& e : entries_) e.frozen = false;
}

std::set<std::string> ParameterRegistry::frozen_names() const {
  std::set<std::string> out;
  for (const auto& e : entries_) {
    if (e.frozen) out.insert(e.name);
  }
  return out;
}

std::size_t ParameterRegistry::parameter_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.size();
  return n;
}

std::size_t ParameterRegistry::trainable_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) {
    if (!e.frozen) n += e.value.size();
  }
  return n;
}

void ParameterRegistry::take_snapshot() {
  std::vector<Tensor> copy;
  copy.reserve(entries_.size());
  for (const auto& e : entries_) copy.push_back(e.value);
  snapshot_ = std::make_shared<const std::vector<Tensor>>(std::move(copy));
}

void ParameterRegistry::restore_snapshot(std::vector<Tensor> snapshot) {
  if (snapshot.size() != entries_.size()) throw ConfigError("snapshot does not match registry");
  for (std::size_t i = 0; i < snapshot.size(); ++i) {
    if (snapshot[i].shape() != entries_[i].value.shape()) {
      throw ConfigError("snapshot shape mismatch for " + entries_[i].name);
    }
  }
  snapshot_ = std::make_shared<const std::vector<Tensor>>(std::move(snapshot));
}

const std::vector<Tensor>& ParameterRegistry::snapshot() const {
  if (!snapshot_) throw ConfigError("no parameter snapshot taken");
  return *snapshot_;
}

bool ParameterRegistry::same_values(const ParameterRegistry& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& a = entries_[i];
    const auto& b = other.entries_[i];
    if (a.name != b.name || a.frozen != b.frozen || !(a.value == b.value)) return false;
  }
  return true;
}

BoundParameters::BoundParameters(ad::Graph& graph, const ParameterRegistry& registry, bool differentiate)
    : graph_(graph), registry_(registry), differentiate_(differentiate), bound_(registry.size()) {}

ad::Var BoundParameters::get(const std::string& name) { return get(registry_.index_of(name)); }

ad::Var BoundParameters::get(std::size_t index) {
  auto& slot = bound_[index];
  if (!slot) {
    const bool trainable = differentiate_ && !registry_.is_frozen(index);
    slot = graph_.borrowed_leaf(registry_.value(index), trainable);
  }
  return *slot;
}

void BoundParameters::accumulate_gradients(GradientSet& out) const {
  if (out.size() != registry_.size()) out.resize(registry_.size());
  for (std::size_t i = 0; i < bound_.size(); ++i) {
    if (!bound_[i]) continue;
    auto g = graph_.grad(*bound_[i]);
    if (g.empty()) continue;
    auto& dst = out[i];
    if (dst.empty()) dst.assign(g.size(), 0.0);
    kernels::axpy(1.0, g, dst);
  }
}

}  // namespace metaxp::asr
