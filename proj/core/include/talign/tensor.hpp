#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "talign/errors.hpp"

// Reverse-mode automatic differentiation on dense row-major tensors.
//
// Every operation appends a node to an implicit DAG; a node owns its forward
// values, an optional gradient buffer, handles to its parents, and a closure
// that scatters the node's gradient into those parents. backward() walks the
// DAG once in reverse topological order from a scalar root.
//
// Gradient lifetime rules:
//   - parameter leaves (requires_grad) keep their gradient buffer across
//     backward() calls and accumulate into it, so per-sample backward passes
//     sum naturally over a batch;
//   - interior nodes get a fresh zero buffer on every backward() call.
//
// The scalar type is a template parameter: float matches the training and
// checkpoint precision, double is used for finite-difference validation.

namespace talign::ad {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1},
                         [](std::size_t a, std::size_t b) { return a * b; });
}

inline std::string shape_to_string(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> values;
  std::vector<T> grad;  // empty until first needed
  bool requires_grad = false;  // parameter leaf
  bool needs_grad = false;     // this node or an ancestor is a parameter
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  bool is_leaf() const { return parents.empty(); }
};

template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Tensor constant(Shape shape, std::vector<T> values) {
    return make_leaf(std::move(shape), std::move(values), false);
  }

  static Tensor parameter(Shape shape, std::vector<T> values) {
    return make_leaf(std::move(shape), std::move(values), true);
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const std::size_t n = shape_numel(shape);
    return make_leaf(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
  }

  static Tensor scalar(T v) { return constant(Shape{}, {v}); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t size() const { return node_->values.size(); }
  std::size_t rank() const { return node_->shape.size(); }
  bool requires_grad() const { return node_->requires_grad; }

  const std::vector<T>& values() const { return node_->values; }

  // Direct write access; used by initializers and the optimizer. Mutating a
  // non-leaf would desynchronize the graph, so it is rejected.
  std::vector<T>& mutable_values() {
    if (!node_->is_leaf()) {
      throw std::logic_error("Tensor: only leaf values may be mutated");
    }
    return node_->values;
  }

  // Gradient buffer; empty means "never written", which readers treat as
  // all-zero.
  const std::vector<T>& grad() const { return node_->grad; }

  void zero_grad() {
    node_->grad.assign(node_->values.size(), T(0));
  }

  T item() const {
    if (size() != 1) {
      throw ShapeError("Tensor::item", shape_to_string(shape()), "[1]");
    }
    return node_->values[0];
  }

  // Value snapshot severed from the graph: a fresh constant leaf.
  Tensor detach() const {
    return constant(node_->shape, node_->values);
  }

  const std::shared_ptr<Node<T>>& node() const { return node_; }

 private:
  static Tensor make_leaf(Shape shape, std::vector<T> values, bool requires_grad) {
    if (shape_numel(shape) != values.size()) {
      throw ShapeError("Tensor: value count does not match shape",
                       "[" + std::to_string(values.size()) + "]",
                       shape_to_string(shape));
    }
    auto n = std::make_shared<Node<T>>();
    n->shape = std::move(shape);
    n->values = std::move(values);
    n->requires_grad = requires_grad;
    n->needs_grad = requires_grad;
    return Tensor(std::move(n));
  }

  std::shared_ptr<Node<T>> node_;
};

// Builds an interior node. The backward closure receives the finished node;
// it must add into parent->grad only where parent->needs_grad is set (the
// buffers of such parents are guaranteed to be allocated when it runs).
template <typename T>
Tensor<T> make_op(Shape shape, std::vector<T> values,
                  std::vector<Tensor<T>> parents,
                  std::function<void(Node<T>&)> backward_fn) {
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->values = std::move(values);
  n->parents.reserve(parents.size());
  for (auto& p : parents) {
    n->needs_grad = n->needs_grad || p.node()->needs_grad;
    n->parents.push_back(p.node());
  }
  if (n->needs_grad) {
    n->backward_fn = std::move(backward_fn);
  }
  return Tensor<T>(std::move(n));
}

// Reverse pass from a scalar root. Populates gradients of every parameter
// leaf reachable from the root; does nothing if the root does not depend on
// any parameter.
template <typename T>
void backward(const Tensor<T>& root) {
  if (root.size() != 1) {
    throw std::invalid_argument("backward: root must be a scalar, got shape " +
                                shape_to_string(root.shape()));
  }
  Node<T>* r = root.node().get();
  if (!r->needs_grad) return;

  // Iterative post-order DFS; order ends up child-before-parent, so the
  // reverse sweep below visits every node before its parents' turns.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(r, 0);
  visited.insert(r);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* p = node->parents[next++].get();
      if (p->needs_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node<T>* n : order) {
    if (n->is_leaf() && n->requires_grad) {
      if (n->grad.size() != n->values.size()) n->grad.assign(n->values.size(), T(0));
    } else {
      n->grad.assign(n->values.size(), T(0));
    }
  }

  r->grad[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward_fn) n->backward_fn(*n);
  }
}

}  // namespace talign::ad
