#include "hpgan/autograd.hpp"

#include <unordered_set>

namespace hpgan::ag {

namespace {
thread_local bool g_grad_enabled = true;
}  // namespace

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_mode_enabled() { return g_grad_enabled; }

template <typename Scalar>
void backward(const Variable<Scalar>& root, const Tensor<Scalar>& seed) {
  using NodePtr = std::shared_ptr<Node<Scalar>>;
  require_shape(seed.shape, root.shape(), "backward seed");
  if (!root.requires_grad()) return;

  // Iterative post-order DFS gives a topological order (inputs before outputs).
  std::vector<NodePtr> order;
  std::unordered_set<Node<Scalar>*> visited;
  std::vector<std::pair<NodePtr, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      NodePtr child = node->inputs[next++];
      if (child->requires_grad && visited.insert(child.get()).second) {
        stack.emplace_back(std::move(child), 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  accumulate_grad(*root.node(), seed);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<Scalar>& node = **it;
    if (!node.backward) continue;  // leaf
    if (!node.grad.empty()) node.backward(node);
    node.backward = nullptr;
    node.inputs.clear();
    node.grad = Tensor<Scalar>();
  }
}

template <typename Scalar>
void backward(const Variable<Scalar>& root) {
  if (root.size() != 1) throw std::invalid_argument("backward: root must be a scalar");
  backward(root, Tensor<Scalar>::constant(root.shape(), Scalar(1)));
}

template void backward(const Variable<float>&);
template void backward(const Variable<double>&);
template void backward(const Variable<float>&, const Tensor<float>&);
template void backward(const Variable<double>&, const Tensor<double>&);

}  // namespace hpgan::ag
