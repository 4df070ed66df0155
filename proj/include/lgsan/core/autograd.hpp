#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "lgsan/core/tensor.hpp"

namespace lgsan {

// Reverse-mode tape. Every op allocates a Node holding the forward value;
// backward closures accumulate into parent grads. Nodes whose subtree has
// no grad-requiring leaf are pruned at construction, so inference under
// NoGradGuard builds no graph at all.

template <class S>
struct Node {
  Tensor<S> value;
  Tensor<S> grad;  // allocated lazily, same shape as value
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  Tensor<S>& ensure_grad() {
    if (grad.empty() && value.numel() > 0) grad = Tensor<S>(value.shape());
    return grad;
  }
};

struct GradMode {
  static bool& enabled() {
    thread_local bool on = true;
    return on;
  }
};

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(GradMode::enabled()) { GradMode::enabled() = false; }
  ~NoGradGuard() { GradMode::enabled() = prev; }
};

template <class S>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<S> value, bool requires_grad = false)
      : node_(std::make_shared<Node<S>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  static Var leaf(Tensor<S> value, bool requires_grad = false) {
    return Var(std::move(value), requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Tensor<S>& value() const { return node_->value; }
  Tensor<S>& value() { return node_->value; }
  const Tensor<S>& grad() const { return node_->grad; }
  Tensor<S>& grad() { return node_->ensure_grad(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool rg) { node_->requires_grad = rg; }
  std::shared_ptr<Node<S>> node() const { return node_; }

  const Shape& shape() const { return node_->value.shape(); }
  Index dim(int i) const { return node_->value.dim(i); }
  int rank() const { return node_->value.rank(); }
  Index numel() const { return node_->value.numel(); }

  void zero_grad() {
    if (node_ && !node_->grad.empty()) node_->grad.set_zero();
  }

  // Build an op node. fn receives the result node; it reads node.grad and
  // accumulates into parents' grads (parents guaranteed to have grad storage).
  static Var make(Tensor<S> value, std::vector<Var> parents,
                  std::function<void(Node<S>&)> fn) {
    bool track = GradMode::enabled();
    bool any_rg = false;
    if (track)
      for (const auto& p : parents) any_rg = any_rg || p.requires_grad();
    if (!track || !any_rg) return Var(std::move(value), false);
    Var out(std::move(value), true);
    out.node_->backward_fn = std::move(fn);
    out.node_->parents.reserve(parents.size());
    for (auto& p : parents) out.node_->parents.push_back(p.node());
    return out;
  }

 private:
  std::shared_ptr<Node<S>> node_;
};

// Backpropagate from a scalar (or any tensor, seeded with ones).
template <class S>
void backward(const Var<S>& root) {
  auto root_node = root.node();
  if (!root_node || !root_node->requires_grad) return;

  // iterative topological sort
  std::vector<Node<S>*> order;
  std::unordered_set<Node<S>*> visited;
  std::vector<std::pair<Node<S>*, size_t>> stack;
  stack.push_back({root_node.get(), 0});
  while (!stack.empty()) {
    auto& [n, i] = stack.back();
    if (i == 0 && visited.count(n)) {
      stack.pop_back();
      continue;
    }
    if (i < n->parents.size()) {
      Node<S>* p = n->parents[i].get();
      ++i;
      if (p->requires_grad && !visited.count(p)) stack.push_back({p, 0});
    } else {
      visited.insert(n);
      order.push_back(n);
      stack.pop_back();
    }
  }

  root_node->ensure_grad().fill(S(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<S>* n = *it;
    if (n->backward_fn) {
      for (auto& p : n->parents)
        if (p->requires_grad) p->ensure_grad();
      n->backward_fn(*n);
    }
  }
}

}  // namespace lgsan
