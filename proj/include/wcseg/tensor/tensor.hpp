#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "wcseg/error.hpp"

namespace wcseg {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until a backward pass touches it
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this->grad and accumulates into inputs[k]->grad.
  std::function<void(Node&)> backward;
  const char* op = "leaf";

  bool is_leaf() const { return inputs.empty(); }
  std::vector<T>& ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    return grad;
  }
};

inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

inline bool grad_enabled() { return detail::grad_mode_flag(); }

/// Dense row-major tensor with value semantics for shape and shared ownership of
/// its storage. Copies of a Tensor alias the same node; use clone() for a deep copy.
template <typename T>
class Tensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0), bool requires_grad = false)
      : node_(std::make_shared<detail::Node<T>>()) {
    node_->value.assign(shape_numel(shape), fill);
    node_->shape = std::move(shape);
    node_->requires_grad = requires_grad;
  }

  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false)
      : node_(std::make_shared<detail::Node<T>>()) {
    if (values.size() != shape_numel(shape))
      throw ValidationError("tensor: " + std::to_string(values.size()) +
                            " values do not fill shape " + shape_str(shape));
    node_->shape = std::move(shape);
    node_->value = std::move(values);
    node_->requires_grad = requires_grad;
  }

  static Tensor scalar(T v, bool requires_grad = false) {
    return Tensor(Shape{1}, std::vector<T>{v}, requires_grad);
  }

  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t numel() const { return node_->value.size(); }

  std::span<T> data() { return node_->value; }
  std::span<const T> data() const { return node_->value; }
  T* raw() { return node_->value.data(); }
  const T* raw() const { return node_->value.data(); }

  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  // Empty span when no gradient has been accumulated yet.
  std::span<T> grad() { return node_->grad; }
  std::span<const T> grad() const { return node_->grad; }
  void zero_grad() { node_->grad.assign(node_->value.size(), T(0)); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  T item() const {
    if (numel() != 1) throw ValidationError("item() on tensor of shape " + shape_str(shape()));
    return node_->value[0];
  }

  T& operator[](std::size_t i) { return node_->value[i]; }
  const T& operator[](std::size_t i) const { return node_->value[i]; }

  // 4-D accessor (N, C, H, W).
  T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    const auto& s = node_->shape;
    return node_->value[((n * s[1] + c) * s[2] + h) * s[3] + w];
  }
  const T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    const auto& s = node_->shape;
    return node_->value[((n * s[1] + c) * s[2] + h) * s[3] + w];
  }

  // New leaf holding a copy of the values.
  Tensor clone(bool requires_grad = false) const {
    return Tensor(node_->shape, node_->value, requires_grad);
  }

  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

namespace detail {

// Builds an op output. Graph edges are recorded only when grad mode is on and at
// least one input participates in differentiation.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> values,
                      std::vector<std::shared_ptr<Node<T>>> inputs,
                      std::function<void(Node<T>&)> backward, const char* op) {
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->op = op;
  bool track = grad_enabled();
  if (track) {
    track = false;
    for (const auto& in : inputs) track = track || in->requires_grad;
  }
  if (track) {
    node->requires_grad = true;
    node->inputs = std::move(inputs);
    node->backward = std::move(backward);
  }
  return Tensor<T>(std::move(node));
}

}  // namespace detail

/// Topologically ordered view of the nodes that feed a root tensor.
template <typename T>
class Graph {
 public:
  using NodeT = detail::Node<T>;

  static Graph trace(const Tensor<T>& root) {
    Graph g;
    g.root_ = root.node();
    if (!root.requires_grad()) return g;
    enum class Mark : unsigned char { kOpen, kDone };
    std::unordered_map<const NodeT*, Mark> marks;
    // Iterative post-order DFS; an edge back into an open node is a cycle.
    std::vector<std::pair<NodeT*, std::size_t>> stack;
    stack.emplace_back(root.node().get(), 0);
    marks[root.node().get()] = Mark::kOpen;
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->inputs.size()) {
        NodeT* child = node->inputs[next++].get();
        if (!child->requires_grad) continue;
        auto it = marks.find(child);
        if (it == marks.end()) {
          marks[child] = Mark::kOpen;
          stack.emplace_back(child, 0);
        } else if (it->second == Mark::kOpen) {
          throw ValidationError("graph: cycle detected at op '" + std::string(child->op) + "'");
        }
      } else {
        marks[node] = Mark::kDone;
        g.order_.push_back(node);
        stack.pop_back();
      }
    }
    return g;
  }

  // Inputs precede consumers.
  const std::vector<NodeT*>& nodes() const { return order_; }
  std::size_t size() const { return order_.size(); }

  void backward() {
    if (!root_ || !root_->requires_grad) return;
    if (root_->value.size() != 1)
      throw ValidationError("backward: loss must be a scalar, got shape " + shape_str(root_->shape));
    for (NodeT* n : order_)
      if (!n->is_leaf()) n->grad.assign(n->value.size(), T(0));
    root_->ensure_grad()[0] += T(1);
    for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
      NodeT* n = *it;
      if (n->backward) n->backward(*n);
    }
  }

 private:
  std::shared_ptr<NodeT> root_;
  std::vector<NodeT*> order_;
};

/// Accumulates d(loss)/d(leaf) into every reachable leaf that requires grad.
template <typename T>
void backward(const Tensor<T>& loss) {
  Graph<T>::trace(loss).backward();
}

}  // namespace wcseg
