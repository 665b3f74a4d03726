#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "deesco/errors.hpp"
#include "deesco/rng.hpp"

namespace deesco {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << 'x';
    os << s[i];
  }
  os << ']';
  return os.str();
}

/// One value node of the autodiff graph. Ops record parents and a backward
/// closure on the forward pass; backward() replays the recording in reverse
/// topological order. Values are immutable once the producing op returns;
/// only leaves are mutated (by the optimizer, between steps).
struct TensorNode {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // allocated lazily during backward
  bool requires_grad = false;
  const char* op = "leaf";  // provenance, for diagnostics
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backprop;
};

/// Shared handle to a TensorNode.
class Tensor {
 public:
  Tensor() = default;

  static Tensor wrap(std::shared_ptr<TensorNode> n) {
    Tensor t;
    t.node_ = std::move(n);
    return t;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return full(std::move(shape), 0.0, requires_grad);
  }

  static Tensor full(Shape shape, double value, bool requires_grad = false) {
    auto n = std::make_shared<TensorNode>();
    n->values.assign(shape_numel(shape), value);
    n->shape = std::move(shape);
    n->requires_grad = requires_grad;
    return wrap(std::move(n));
  }

  static Tensor from_values(Shape shape, std::vector<double> values,
                            bool requires_grad = false) {
    if (shape_numel(shape) != values.size())
      throw ShapeError("from_values: " + shape_str(shape) + " does not hold " +
                       std::to_string(values.size()) + " values");
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    n->values = std::move(values);
    n->requires_grad = requires_grad;
    return wrap(std::move(n));
  }

  static Tensor scalar(double value, bool requires_grad = false) {
    return from_values({}, {value}, requires_grad);
  }

  static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0,
                      bool requires_grad = false) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = stddev * rng.normal();
    return from_values(std::move(shape), std::move(v), requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape[i]; }
  std::size_t numel() const { return node_->values.size(); }
  bool requires_grad() const { return node_->requires_grad; }

  std::span<const double> values() const { return node_->values; }
  /// Mutable access; meant for leaves (parameter updates, data staging).
  std::span<double> raw_values() { return node_->values; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> raw_grad() { return node_->grad; }
  void clear_grad() { node_->grad.clear(); }

  double at(std::size_t i) const { return node_->values[i]; }

  /// Value of a single-element tensor.
  double item() const {
    if (numel() != 1)
      throw UsageError("item(): tensor has " + std::to_string(numel()) +
                       " elements");
    return node_->values[0];
  }

  const std::shared_ptr<TensorNode>& node() const { return node_; }

 private:
  std::shared_ptr<TensorNode> node_;
};

/// Named trainable tensor (requires_grad true). Names are slash-separated
/// paths, unique within a model; the checkpoint format round-trips them
/// bit-exactly.
struct Parameter {
  std::string name;
  Tensor tensor;
};

namespace detail {

/// Post-order over the subgraph reachable from root via parent edges.
/// Parents appear before children; root is last. Valid because the graph is
/// acyclic by construction (ops only reference already-built tensors).
inline std::vector<TensorNode*> reachable_postorder(TensorNode* root) {
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> visited;
  std::vector<std::pair<TensorNode*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& top = stack.back();
    TensorNode* n = top.first;
    if (top.second < n->parents.size()) {
      TensorNode* p = n->parents[top.second++].get();
      if (visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  return order;
}

/// Interior nodes start each sweep from zero; leaf grads persist so repeated
/// sweeps accumulate into parameters (cleared explicitly by the optimizer).
inline void ensure_grads(const std::vector<TensorNode*>& order) {
  for (auto* n : order) {
    if (!n->requires_grad) continue;
    if (n->backprop)
      n->grad.assign(n->values.size(), 0.0);
    else if (n->grad.size() != n->values.size())
      n->grad.assign(n->values.size(), 0.0);
  }
}

}  // namespace detail

/// Reverse-mode sweep from a scalar loss. Populates grad on every
/// requires_grad ancestor; fan-out contributions accumulate additively.
inline void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw UsageError("backward: loss must be a scalar tensor");
  TensorNode* root = loss.node().get();
  auto order = detail::reachable_postorder(root);
  detail::ensure_grads(order);
  if (!root->requires_grad) return;  // loss of constants: nothing to do
  root->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode* n = *it;
    if (n->requires_grad && n->backprop) n->backprop(*n);
  }
}

/// Backward over a randomized (but valid) reverse-topological schedule.
/// Exists so tests can assert that traversal order does not change gradients.
inline void backward_shuffled(const Tensor& loss, std::uint64_t order_seed) {
  if (!loss.defined() || loss.numel() != 1)
    throw UsageError("backward: loss must be a scalar tensor");
  TensorNode* root = loss.node().get();
  auto order = detail::reachable_postorder(root);
  detail::ensure_grads(order);
  if (!root->requires_grad) return;
  root->grad[0] += 1.0;

  // Kahn over the reversed DAG: a node is ready once all consumers ran.
  std::unordered_map<TensorNode*, std::size_t> pending;
  for (auto* n : order)
    for (auto& p : n->parents) pending[p.get()]++;
  Rng rng(order_seed);
  std::vector<TensorNode*> ready{root};
  while (!ready.empty()) {
    std::size_t pick = static_cast<std::size_t>(rng.next_below(ready.size()));
    std::swap(ready[pick], ready.back());
    TensorNode* n = ready.back();
    ready.pop_back();
    if (n->requires_grad && n->backprop) n->backprop(*n);
    for (auto& p : n->parents) {
      auto it = pending.find(p.get());
      if (--it->second == 0) ready.push_back(p.get());
    }
  }
}

namespace detail {

/// Record an op node. When no parent requires grad the recording is pruned:
/// the output is a plain constant and keeps the tape from growing.
inline Tensor make_op(const char* name, Shape shape, std::vector<double> values,
                      std::vector<Tensor> parents,
                      std::function<void(TensorNode&)> backprop) {
  if (shape_numel(shape) != values.size())
    throw ShapeError(std::string(name) + ": internal shape/value mismatch");
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->values = std::move(values);
  n->op = name;
  bool rg = false;
  for (const auto& p : parents)
    if (p.defined() && p.node()->requires_grad) rg = true;
  n->requires_grad = rg;
  if (rg) {
    n->parents.reserve(parents.size());
    for (const auto& p : parents) n->parents.push_back(p.node());
    n->backprop = std::move(backprop);
  }
  return Tensor::wrap(std::move(n));
}

inline bool wants_grad(const TensorNode* n) { return n->requires_grad; }

}  // namespace detail

}  // namespace deesco
