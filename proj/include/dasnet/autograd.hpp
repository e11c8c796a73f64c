#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "dasnet/tensor.hpp"

namespace dasnet {

template <typename S>
struct Node {
  Tensor<S> value;
  Tensor<S> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node<S>>> parents;
  // Reads this->grad and accumulates into the parents' grads.
  std::function<void(Node<S>&)> backward;

  void ensure_grad() {
    if (!grad.same_shape(value)) grad = Tensor<S>(value.shape());
  }
};

template <typename S>
using NodePtr = std::shared_ptr<Node<S>>;

namespace detail {
inline thread_local bool grad_enabled = true;
}

/// Scoped guard disabling graph construction (inference mode).
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_enabled) { detail::grad_enabled = false; }
  ~NoGradGuard() { detail::grad_enabled = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

inline bool grad_enabled() { return detail::grad_enabled; }

/// Handle to a node in the reverse-mode graph.
template <typename S>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<S> value, bool requires_grad = false)
      : node_(std::make_shared<Node<S>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  bool defined() const { return node_ != nullptr; }

  Tensor<S>& value() { return node_->value; }
  const Tensor<S>& value() const { return node_->value; }

  Tensor<S>& grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  const Tensor<S>& grad() const { return node_->grad; }

  void zero_grad() {
    node_->ensure_grad();
    node_->grad.zero();
  }

  bool requires_grad() const { return node_ && node_->requires_grad; }

  const NodePtr<S>& node() const { return node_; }

 private:
  NodePtr<S> node_;
};

/// Builds the result node of an op; wires the graph only when needed.
template <typename S>
Var<S> make_result(Tensor<S> value, std::vector<NodePtr<S>> parents,
                   std::function<void(Node<S>&)> backward_fn) {
  Var<S> out(std::move(value));
  if (!grad_enabled()) return out;
  bool needed = false;
  for (const auto& p : parents) {
    if (p && p->requires_grad) {
      needed = true;
      break;
    }
  }
  if (needed) {
    out.node()->requires_grad = true;
    out.node()->parents = std::move(parents);
    out.node()->backward = std::move(backward_fn);
  }
  return out;
}

/// Reverse-mode sweep from a scalar root.
template <typename S>
void backward(const Var<S>& root) {
  check(root.defined(), "backward on undefined Var");
  check(root.value().numel() == 1, "backward requires a scalar root");
  if (!root.node()->requires_grad) return;

  // Iterative post-order DFS over grad-requiring nodes.
  std::vector<Node<S>*> order;
  std::unordered_set<Node<S>*> seen;
  struct Frame {
    Node<S>* node;
    std::size_t next_parent;
  };
  std::vector<Frame> stack{{root.node().get(), 0}};
  seen.insert(root.node().get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      Node<S>* p = f.node->parents[f.next_parent++].get();
      if (p && p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }

  root.node()->ensure_grad();
  root.node()->grad[0] = S(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<S>* n = *it;
    if (!n->backward) continue;
    for (auto& p : n->parents) {
      if (p && p->requires_grad) p->ensure_grad();
    }
    n->backward(*n);
  }
}

}  // namespace dasnet
