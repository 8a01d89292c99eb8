#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "deshadow/tensor.hpp"

namespace deshadow::ag {

/// Thread-local switch: when off, ops do not record parents or backward
/// closures, so intermediate tensors free as soon as they go out of scope.
inline bool& grad_enabled() {
  thread_local bool on = true;
  return on;
}

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(grad_enabled()) { grad_enabled() = false; }
  ~NoGradGuard() { grad_enabled() = prev; }
};

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  bool has_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;
  const char* op = "leaf";
};

/// Handle to a node in the computation graph.
template <typename T>
class Value {
 public:
  Value() = default;
  explicit Value(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}

  const Tensor<T>& tensor() const { return node_->value; }
  const std::vector<int>& shape() const { return node_->value.shape(); }
  bool defined() const { return node_ != nullptr; }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const Tensor<T>& grad() const { return node_->grad; }
  bool has_grad() const { return node_ && node_->has_grad; }
  std::shared_ptr<Node<T>>& node() { return node_; }
  const std::shared_ptr<Node<T>>& node() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

template <typename T>
Value<T> leaf(Tensor<T> t, bool requires_grad = false) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(t);
  n->requires_grad = requires_grad && grad_enabled();
  return Value<T>(std::move(n));
}

template <typename T>
Value<T> constant(Tensor<T> t) {
  return leaf(std::move(t), false);
}

template <typename T>
void add_grad(Node<T>& n, Tensor<T> g) {
  if (!n.has_grad) {
    n.grad = std::move(g);
    n.has_grad = true;
  } else {
    for (std::size_t i = 0; i < g.numel(); ++i) n.grad[i] += g[i];
  }
}

/// Builds an op node. Parents and the backward closure are recorded only when
/// the result actually needs gradients.
template <typename T>
Value<T> make_node(Tensor<T> value, std::vector<Value<T>> parents,
                   std::function<void(Node<T>&)> backward_fn, const char* op) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->op = op;
  bool req = false;
  for (const auto& p : parents) req = req || p.requires_grad();
  if (grad_enabled() && req) {
    n->requires_grad = true;
    n->parents.reserve(parents.size());
    for (auto& p : parents) n->parents.push_back(p.node());
    n->backward_fn = std::move(backward_fn);
  }
  return Value<T>(std::move(n));
}

/// Reverse-mode sweep from a scalar root. Gradients accumulate into every
/// reachable node with requires_grad, including leaves.
template <typename T>
void backward(const Value<T>& root) {
  if (root.tensor().numel() != 1) {
    throw ShapeError("backward: root must be a scalar");
  }
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [n, idx] = stack.back();
    if (idx < n->parents.size()) {
      Node<T>* p = n->parents[idx++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  add_grad(*root.node(), Tensor<T>::scalar(T(1)));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward_fn && n->has_grad) n->backward_fn(*n);
  }
}

}  // namespace deshadow::ag
