#pragma once

#include "hpgan/tensor.hpp"

#include <functional>
#include <memory>
#include <vector>

namespace hpgan::ag {

template <typename Scalar>
struct Node {
  Tensor<Scalar> value;
  Tensor<Scalar> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(const Node&)> backward;
};

/// Handle to a node of the dynamically recorded computation graph. Copies share the node.
template <typename Scalar>
class Variable {
 public:
  Variable() = default;
  explicit Variable(Tensor<Scalar> value, bool requires_grad = false)
      : node_(std::make_shared<Node<Scalar>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }
  explicit Variable(std::shared_ptr<Node<Scalar>> node) : node_(std::move(node)) {}

  bool defined() const { return node_ != nullptr; }
  const Tensor<Scalar>& value() const { return node_->value; }
  Tensor<Scalar>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape; }
  Index dim(int i) const { return node_->value.dim(i); }
  Index size() const { return node_->value.size(); }
  Scalar item() const { return node_->value.data[0]; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool has_grad() const { return !node_->grad.empty(); }
  const Tensor<Scalar>& grad() const { return node_->grad; }
  void zero_grad() { node_->grad = Tensor<Scalar>(); }

  const std::shared_ptr<Node<Scalar>>& node() const { return node_; }

 private:
  std::shared_ptr<Node<Scalar>> node_;
};

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_mode_enabled();

template <typename Scalar>
void accumulate_grad(Node<Scalar>& node, const Tensor<Scalar>& g) {
  if (!node.requires_grad) return;
  if (node.grad.empty()) {
    node.grad = g;
  } else {
    node.grad.data += g.data;
  }
}

template <typename Scalar>
void accumulate_grad(Node<Scalar>& node, Tensor<Scalar>&& g) {
  if (!node.requires_grad) return;
  if (node.grad.empty()) {
    node.grad = std::move(g);
  } else {
    node.grad.data += g.data;
  }
}

template <typename Scalar>
void accumulate_grad(const Variable<Scalar>& v, Tensor<Scalar> g) {
  accumulate_grad(*v.node(), std::move(g));
}

template <typename Scalar>
using BackwardFn = std::function<void(const Node<Scalar>&)>;

/// Records an op result. The backward closure receives the result node (value and incoming
/// gradient) and calls accumulate_grad on the inputs; it is dropped when no input requires grad.
template <typename Scalar>
Variable<Scalar> make_result(Tensor<Scalar> value, const std::vector<Variable<Scalar>>& inputs,
                             BackwardFn<Scalar> backward) {
  auto node = std::make_shared<Node<Scalar>>();
  node->value = std::move(value);
  bool any = false;
  if (grad_mode_enabled()) {
    for (const auto& in : inputs) any = any || in.requires_grad();
  }
  if (any) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (const auto& in : inputs) node->inputs.push_back(in.node());
    node->backward = std::move(backward);
  }
  return Variable<Scalar>(std::move(node));
}

/// Reverse-mode sweep from a scalar root. Leaf gradients accumulate; interior graph is released.
template <typename Scalar>
void backward(const Variable<Scalar>& root);

/// Same as above with an explicit seed gradient of root's shape.
template <typename Scalar>
void backward(const Variable<Scalar>& root, const Tensor<Scalar>& seed);

}  // namespace hpgan::ag
