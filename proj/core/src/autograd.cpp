#include "reatt/autograd.hpp"

#include <algorithm>
#include <stdexcept>
#include <unordered_set>

namespace reatt {

namespace detail {

bool& grad_mode_flag() {
  thread_local bool flag = true;
  return flag;
}

uint64_t next_seq() {
  thread_local uint64_t counter = 0;
  return ++counter;
}

}  // namespace detail

template <typename T>
void backward(const Var<T>& loss) {
  if (!loss) throw std::invalid_argument("backward: null node");
  if (loss->value.numel() != 1) throw std::invalid_argument("backward: loss must be scalar");
  if (!loss->requires_grad) return;

  // Collect the grad-requiring ancestry of the loss.
  std::vector<Node<T>*> reached;
  std::unordered_set<Node<T>*> seen;
  std::vector<Node<T>*> stack{loss.get()};
  seen.insert(loss.get());
  while (!stack.empty()) {
    Node<T>* n = stack.back();
    stack.pop_back();
    reached.push_back(n);
    for (const auto& p : n->parents) {
      if (p && p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
    }
  }

  for (Node<T>* n : reached) n->grad = Tensor<T>();

  std::sort(reached.begin(), reached.end(),
            [](const Node<T>* a, const Node<T>* b) { return a->seq > b->seq; });

  loss->grad = Tensor<T>::full(loss->value.shape(), T(1));
  for (Node<T>* n : reached) {
    if (!n->backprop) continue;  // leaf
    if (n->grad.empty()) continue;  // not actually contributing to the loss
    n->backprop(*n);
  }
}

template void backward<float>(const Var<float>&);
template void backward<double>(const Var<double>&);

}  // namespace reatt
