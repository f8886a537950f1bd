#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "reatt/tensor.hpp"

namespace reatt {

template <typename T>
struct Node;

template <typename T>
using Var = std::shared_ptr<Node<T>>;

// One value in the dynamic computation graph. Nodes are created in forward
// order; `seq` gives a valid reverse topological order for backprop.
template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // empty until a backward pass reaches this node
  bool requires_grad = false;
  uint64_t seq = 0;
  std::vector<Var<T>> parents;
  std::function<void(Node<T>&)> backprop;  // reads this->grad, accumulates into parents

  void accumulate(const Tensor<T>& g) {
    if (grad.empty()) grad = Tensor<T>::zeros(value.shape());
    T* dst = grad.data();
    const T* src = g.data();
    const int64_t n = grad.numel();
    for (int64_t i = 0; i < n; ++i) dst[i] += src[i];
  }

  void ensure_grad() {
    if (grad.empty()) grad = Tensor<T>::zeros(value.shape());
  }
};

namespace detail {
bool& grad_mode_flag();
uint64_t next_seq();
}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode_flag(); }

// RAII guard that disables graph construction (inference / bypass passes).
struct NoGradGuard {
  NoGradGuard() : prev_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

template <typename T>
Var<T> make_leaf(Tensor<T> value, bool requires_grad) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  n->seq = detail::next_seq();
  return n;
}

template <typename T>
Var<T> make_constant(Tensor<T> value) {
  return make_leaf(std::move(value), false);
}

// Creates an interior node. If grad mode is off or no parent needs gradients,
// the node is emitted as a constant and the closure is dropped.
template <typename T>
Var<T> make_node(Tensor<T> value, std::vector<Var<T>> parents,
                 std::function<void(Node<T>&)> backprop) {
  bool needs = false;
  if (grad_enabled()) {
    for (const auto& p : parents)
      if (p && p->requires_grad) {
        needs = true;
        break;
      }
  }
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->seq = detail::next_seq();
  if (needs) {
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backprop = std::move(backprop);
  }
  return n;
}

// New leaf sharing the same value but cut off from the graph.
template <typename T>
Var<T> detach(const Var<T>& x) {
  return make_constant(x->value);
}

// Reverse pass from a scalar loss. Gradients of every node reachable from
// `loss` are recomputed from scratch (previous contents are discarded), so
// several independent backward passes can run over one shared graph.
template <typename T>
void backward(const Var<T>& loss);

extern template void backward<float>(const Var<float>&);
extern template void backward<double>(const Var<double>&);

}  // namespace reatt
