#pragma once

#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "miro/core/errors.hpp"
#include "miro/diff/tensor.hpp"

namespace miro {

// Ordered collection of named trainable tensors with matching gradients.
// Insertion order is preserved; it defines checkpoint layout and optimizer
// traversal order.
template <typename T>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;
  };

  Tensor<T>& add(const std::string& name, Tensor<T> value) {
    if (index_.contains(name)) {
      throw ContractError("duplicate parameter name '" + name + "'");
    }
    index_.emplace(name, entries_.size());
    Tensor<T> grad(value.shape());
    entries_.push_back(Entry{name, std::move(value), std::move(grad)});
    return entries_.back().value;
  }

  bool contains(const std::string& name) const { return index_.contains(name); }

  Tensor<T>& value(const std::string& name) { return entry(name).value; }
  const Tensor<T>& value(const std::string& name) const { return entry(name).value; }
  Tensor<T>& grad(const std::string& name) { return entry(name).grad; }
  const Tensor<T>& grad(const std::string& name) const { return entry(name).grad; }

  Entry& entry(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
    return entries_[it->second];
  }
  const Entry& entry(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
    return entries_[it->second];
  }

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  std::size_t numel() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
  }

  void zero_grads() {
    for (auto& e : entries_) e.grad.fill(T{0});
  }

  double grad_norm() const {
    double sq = 0.0;
    for (const auto& e : entries_) {
      for (T g : e.grad.values()) sq += static_cast<double>(g) * g;
    }
    return std::sqrt(sq);
  }

  bool all_finite() const {
    for (const auto& e : entries_) {
      if (!e.value.all_finite()) return false;
    }
    return true;
  }

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& e : entries_) out.add(e.name, e.value.template cast<U>());
    return out;
  }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace miro
