#pragma once

#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "unitrans/autodiff/tensor.hpp"

namespace unitrans {

template <typename T>
class Var;

// Recording is on by default; backward passes run with recording enabled only
// when a differentiable gradient graph was requested.
inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

inline bool grad_enabled() { return grad_mode_flag(); }

class GradModeGuard {
 public:
  explicit GradModeGuard(bool enabled) : previous_(grad_mode_flag()) { grad_mode_flag() = enabled; }
  ~GradModeGuard() { grad_mode_flag() = previous_; }
  GradModeGuard(const GradModeGuard&) = delete;
  GradModeGuard& operator=(const GradModeGuard&) = delete;

 private:
  bool previous_;
};

struct NoGrad : GradModeGuard {
  NoGrad() : GradModeGuard(false) {}
};

template <typename T>
using BackwardFn = std::function<std::vector<Var<T>>(const Var<T>& grad, const std::vector<bool>& needed)>;

template <typename T>
struct Node {
  Tensor<T> value;
  bool requires_grad = false;
  std::vector<Var<T>> inputs;
  BackwardFn<T> backward;
  const char* op = "leaf";
};

// Handle to a node of the computation graph. Copies share the node.
template <typename T>
class Var {
 public:
  Var() = default;

  static Var constant(Tensor<T> value) {
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    return Var(std::move(node));
  }

  static Var leaf(Tensor<T> value, bool requires_grad = true) {
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    node->requires_grad = requires_grad;
    return Var(std::move(node));
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::int64_t dim(std::size_t i) const { return node_->value.dim(i); }
  std::size_t rank() const { return node_->value.rank(); }
  std::int64_t size() const { return node_->value.size(); }
  T item() const { return node_->value.item(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const char* op() const { return node_->op; }

  Var detach() const { return constant(node_->value); }

  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }

 private:
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}
  template <typename U>
  friend Var<U> make_op(Tensor<U>, std::vector<Var<U>>, BackwardFn<U>, const char*);

  std::shared_ptr<Node<T>> node_;
};

// Wraps a freshly computed value as a graph node. The node records its inputs
// only if recording is on and at least one input carries gradient.
template <typename T>
Var<T> make_op(Tensor<T> value, std::vector<Var<T>> inputs, BackwardFn<T> backward, const char* op) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  node->op = op;
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (grad_enabled() && any) {
    node->requires_grad = true;
    node->inputs = std::move(inputs);
    node->backward = std::move(backward);
  }
  return Var<T>(std::move(node));
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);

// Gradients of a scalar `output` with respect to `inputs`. With `create_graph`
// the returned gradients are themselves differentiable graph nodes. Inputs the
// output does not depend on receive zero gradients.
template <typename T>
std::vector<Var<T>> grad(const Var<T>& output, const std::vector<Var<T>>& inputs, bool create_graph = false) {
  if (output.size() != 1) throw ShapeError("grad() needs a scalar output, got " + shape_str(output.shape()));

  std::vector<Var<T>> result(inputs.size());
  if (!output.requires_grad()) {
    for (std::size_t i = 0; i < inputs.size(); ++i) result[i] = Var<T>::constant(Tensor<T>(inputs[i].shape()));
    return result;
  }

  // Post-order over the recorded graph: inputs of a node precede the node.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{output.node(), 0}};
  visited.insert(output.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node<T>* child = node->inputs[next++].node();
      if (child->requires_grad && visited.insert(child).second) stack.push_back({child, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  std::unordered_set<Node<T>*> wanted;
  for (const auto& in : inputs)
    if (in.defined()) wanted.insert(in.node());
  std::unordered_set<Node<T>*> needed;
  for (Node<T>* node : order) {
    bool need = wanted.count(node) > 0;
    for (const auto& in : node->inputs) need = need || needed.count(in.node()) > 0;
    if (need) needed.insert(node);
  }

  std::unordered_map<Node<T>*, Var<T>> grads;
  grads[output.node()] = Var<T>::constant(Tensor<T>(output.shape(), T(1)));

  GradModeGuard mode(create_graph);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (!needed.count(node) || !node->backward) continue;
    auto found = grads.find(node);
    if (found == grads.end()) continue;
    Var<T> g = found->second;
    if (!wanted.count(node)) grads.erase(found);

    std::vector<bool> mask(node->inputs.size());
    bool any = false;
    for (std::size_t i = 0; i < mask.size(); ++i) {
      mask[i] = node->inputs[i].requires_grad() && needed.count(node->inputs[i].node()) > 0;
      any = any || mask[i];
    }
    if (!any) continue;
    auto input_grads = node->backward(g, mask);
    for (std::size_t i = 0; i < mask.size(); ++i) {
      if (!mask[i] || !input_grads[i].defined()) continue;
      Node<T>* target = node->inputs[i].node();
      auto slot = grads.find(target);
      if (slot == grads.end())
        grads.emplace(target, input_grads[i]);
      else
        slot->second = add(slot->second, input_grads[i]);
    }
  }

  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto found = grads.find(inputs[i].node());
    result[i] = found != grads.end() ? found->second : Var<T>::constant(Tensor<T>(inputs[i].shape()));
  }
  return result;
}

}  // namespace unitrans
