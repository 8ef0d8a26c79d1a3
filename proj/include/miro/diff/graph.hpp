#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "miro/core/errors.hpp"
#include "miro/diff/param_store.hpp"
#include "miro/diff/tensor.hpp"

namespace miro {

template <typename T>
class Graph;

// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
template <typename T>
struct Var {
  Graph<T>* graph = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const { return graph->value(id); }
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }
  std::size_t dim(std::size_t i) const { return value().dim(i); }
};

// Reverse-mode tape. Nodes are appended in evaluation order, so the id order
// is a topological order and backward is a single descending sweep.
//
// A graph built with record = false keeps values only; use it for pure
// forward evaluation (planning, acting).
template <typename T>
class Graph {
 public:
  // Receives the gradient of the node's output; adds into input gradients
  // through Graph::grad_for.
  using Backward = std::function<void(Graph&, const Tensor<T>&)>;

  explicit Graph(bool record = true) : record_(record) {}

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const { return record_; }

  Var<T> constant(Tensor<T> value) {
    Node node;
    node.op = "constant";
    node.owned = std::move(value);
    return push(std::move(node));
  }

  // Leaf bound to a stored parameter. The tensor is referenced, not copied;
  // the store must not be mutated while the graph is alive.
  Var<T> param(ParamStore<T>& store, const std::string& name) {
    auto& entry = store.entry(name);
    if (auto it = param_ids_.find(&entry.value); it != param_ids_.end()) {
      return Var<T>{this, it->second};
    }
    Node node;
    node.op = "param";
    node.ref = &entry.value;
    node.requires_grad = record_;
    node.store_grad = &entry.grad;
    node.store = &store;
    Var<T> v = push(std::move(node));
    param_ids_.emplace(&entry.value, v.id);
    return v;
  }

  // Read-only parameter leaf; never receives gradients.
  Var<T> param(const ParamStore<T>& store, const std::string& name) {
    const auto& entry = store.entry(name);
    if (auto it = param_ids_.find(&entry.value); it != param_ids_.end()) {
      return Var<T>{this, it->second};
    }
    Node node;
    node.op = "param";
    node.ref = &entry.value;
    Var<T> v = push(std::move(node));
    param_ids_.emplace(&entry.value, v.id);
    return v;
  }

  // Appends an op result. The backward closure is kept only when recording
  // and at least one input carries gradient.
  Var<T> record(const char* op, Tensor<T> value, std::vector<std::size_t> inputs,
                Backward backward) {
    if (!value.all_finite()) {
      throw NumericError(std::string("non-finite value produced by op '") + op + "'");
    }
    Node node;
    node.op = op;
    node.owned = std::move(value);
    if (record_) {
      for (std::size_t in : inputs) {
        if (nodes_[in].requires_grad) {
          node.requires_grad = true;
          break;
        }
      }
      if (node.requires_grad) {
        node.inputs = std::move(inputs);
        node.backward = std::move(backward);
      }
    }
    return push(std::move(node));
  }

  const Tensor<T>& value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.ref ? *n.ref : n.owned;
  }

  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  const std::string& op_name(std::size_t id) const { return nodes_[id].op; }
  std::size_t size() const { return nodes_.size(); }

  // Gradient accumulator of a node, zero-initialized on first use.
  Tensor<T>& grad_for(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.has_grad) {
      n.grad = Tensor<T>(value(id).shape());
      n.has_grad = true;
    }
    return n.grad;
  }

  // Propagates d(loss)/d(node) to every parameter leaf and adds the result
  // into the bound ParamStore gradients. Gradients accumulate; callers zero
  // the store first. Returns the number of ops whose adjoint ran.
  std::size_t backward(Var<T> loss) {
    if (loss.graph != this) throw ContractError("loss belongs to another graph");
    if (!record_) throw ContractError("backward on a non-recording graph");
    if (value(loss.id).size() != 1) {
      throw ContractError("backward needs a scalar loss, got shape " +
                          shape_str(value(loss.id).shape()));
    }
    trace_.clear();
    grad_for(loss.id).fill(T{1});
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || !n.has_grad) continue;
      if (n.backward) {
        trace_.push_back(i);
        n.backward(*this, n.grad);
        for (std::size_t in : n.inputs) {
          const Node& src = nodes_[in];
          if (src.has_grad && !src.grad.all_finite()) {
            throw NumericError("non-finite gradient produced by op '" + n.op + "'");
          }
        }
      } else if (n.store_grad) {
        *n.store_grad += n.grad;
      }
    }
    return trace_.size();
  }

  std::size_t backward(Var<T> loss, ParamStore<T>& store) {
    for (const Node& n : nodes_) {
      if (n.store && n.store != &store) {
        throw ContractError("graph references parameters of another store");
      }
    }
    return backward(loss);
  }

  // Node ids whose adjoint ran during the last backward, in visit order.
  const std::vector<std::size_t>& backward_trace() const { return trace_; }

 private:
  struct Node {
    std::string op;
    Tensor<T> owned;
    const Tensor<T>* ref = nullptr;
    Tensor<T> grad;
    bool has_grad = false;
    bool requires_grad = false;
    std::vector<std::size_t> inputs;
    Backward backward;
    Tensor<T>* store_grad = nullptr;
    const ParamStore<T>* store = nullptr;
  };

  Var<T> push(Node node) {
    nodes_.push_back(std::move(node));
    return Var<T>{this, nodes_.size() - 1};
  }

  bool record_;
  std::vector<Node> nodes_;
  std::unordered_map<const Tensor<T>*, std::size_t> param_ids_;
  std::vector<std::size_t> trace_;
};

}  // namespace miro
