#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "diffuma/errors.hpp"

namespace diffuma {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace detail {

inline bool env_check_finite() {
  static const bool enabled = [] {
    const char* v = std::getenv("DIFFUMA_CHECK_FINITE");
    return v != nullptr && std::string(v) == "1";
  }();
  return enabled;
}

inline std::uint64_t next_node_id() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

inline thread_local bool grad_mode_enabled = true;

}  // namespace detail

/// Disables graph recording on this thread for its lifetime (evaluation, optimizer updates).
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode_enabled) { detail::grad_mode_enabled = false; }
  ~NoGradGuard() { detail::grad_mode_enabled = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

inline bool grad_enabled() { return detail::grad_mode_enabled; }

template <typename T>
struct Node {
  using BackwardFn = std::function<void(const std::vector<T>& out_grad)>;

  std::uint64_t id = detail::next_node_id();
  std::string op = "leaf";
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward;

  bool is_leaf() const { return inputs.empty(); }

  std::vector<T>& grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

/// Dense row-major tensor handle. Copies share the underlying node; values written by an op
/// are never modified afterwards except for leaf parameters updated between training steps.
template <typename T>
class Tensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<Node<T>>;

  Tensor() = default;
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  static Tensor from_data(Shape shape, std::vector<T> data, bool requires_grad = false) {
    if (diffuma::numel(shape) != data.size()) {
      throw DimensionError("tensor data length " + std::to_string(data.size()) +
                           " does not match shape " + to_string(shape));
    }
    auto node = std::make_shared<Node<T>>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  static Tensor full(Shape shape, T value, bool requires_grad = false) {
    const auto n = diffuma::numel(shape);
    return from_data(std::move(shape), std::vector<T>(n, value), requires_grad);
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return full(std::move(shape), T(0), requires_grad);
  }

  static Tensor scalar(T value, bool requires_grad = false) {
    return from_data({}, {value}, requires_grad);
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t ndim() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t numel() const { return node_->data.size(); }
  std::uint64_t id() const { return node_->id; }
  const std::string& op() const { return node_->op; }

  std::span<const T> data() const { return node_->data; }
  const std::vector<T>& values() const { return node_->data; }
  /// In-place access; only meant for leaves (parameter init, optimizer updates, test setup).
  std::span<T> mutable_data() { return node_->data; }
  T item() const {
    if (numel() != 1) throw DimensionError("item() on tensor of shape " + to_string(shape()));
    return node_->data[0];
  }
  T operator[](std::size_t i) const { return node_->data[i]; }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool flag) {
    node_->requires_grad = flag;
    return *this;
  }
  bool has_grad() const { return !node_->grad.empty(); }
  /// Gradient, or an empty span if nothing has been accumulated.
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->grad_buffer(); }
  void zero_grad() { node_->grad.clear(); }

  /// Copy of the values with no graph history.
  Tensor detach() const { return from_data(shape(), node_->data, false); }

  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

namespace detail {

template <typename T>
void check_finite(const Node<T>& node) {
  for (const T v : node.data) {
    if (!std::isfinite(v)) {
      throw NumericalError("non-finite value produced by op '" + node.op + "' with shape " +
                           to_string(node.shape));
    }
  }
}

/// Creates the output of an op. The backward closure is dropped when no input needs a gradient
/// or grad mode is off, so evaluation never retains activations.
template <typename T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> data,
                      std::vector<std::shared_ptr<Node<T>>> inputs,
                      typename Node<T>::BackwardFn backward) {
  auto node = std::make_shared<Node<T>>();
  node->op = op;
  node->shape = std::move(shape);
  node->data = std::move(data);
  if (env_check_finite()) check_finite(*node);
  const bool any = std::any_of(inputs.begin(), inputs.end(),
                               [](const auto& in) { return in->requires_grad; });
  if (grad_enabled() && any) {
    node->requires_grad = true;
    node->inputs = std::move(inputs);
    node->backward = std::move(backward);
  }
  return Tensor<T>(std::move(node));
}

}  // namespace detail

/// Topologically ordered record of the ops reachable from one output.
template <typename T>
class Graph {
 public:
  struct Record {
    std::uint64_t id;
    std::string op;
    std::vector<std::uint64_t> inputs;
  };

  static Graph trace(const Tensor<T>& output) {
    Graph g;
    if (!output.defined() || !output.requires_grad()) return g;
    std::unordered_set<const Node<T>*> seen;
    // Iterative post-order DFS so deep recurrences do not blow the stack.
    std::vector<std::pair<std::shared_ptr<Node<T>>, std::size_t>> stack;
    stack.emplace_back(output.node(), 0);
    seen.insert(output.node().get());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->inputs.size()) {
        auto child = node->inputs[next++];
        if (child->requires_grad && seen.insert(child.get()).second) stack.emplace_back(child, 0);
        continue;
      }
      g.nodes_.push_back(node);
      stack.pop_back();
    }
    g.output_ = output.node();
    return g;
  }

  std::vector<Record> records() const {
    std::vector<Record> out;
    out.reserve(nodes_.size());
    for (const auto& n : nodes_) {
      Record r{n->id, n->op, {}};
      for (const auto& in : n->inputs) r.inputs.push_back(in->id);
      out.push_back(std::move(r));
    }
    return out;
  }

  std::size_t size() const { return nodes_.size(); }

  /// Leaves that require a gradient, in discovery order.
  std::vector<Tensor<T>> leaves() const {
    std::vector<Tensor<T>> out;
    for (const auto& n : nodes_)
      if (n->is_leaf()) out.emplace_back(n);
    return out;
  }

  /// Accumulates d(output)/d(leaf) into every reachable leaf. Interior gradients are scratch and
  /// reset per call, so calling twice without zero_grad() doubles the leaf gradients.
  std::vector<Tensor<T>> backward() const {
    if (nodes_.empty()) return {};
    if (output_->data.size() != 1) {
      throw DimensionError("backward() needs a scalar output, got shape " +
                           to_string(output_->shape));
    }
    for (const auto& n : nodes_)
      if (!n->is_leaf()) n->grad.clear();
    output_->grad_buffer()[0] += T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      auto& n = **it;
      if (n.is_leaf() || n.grad.empty() || !n.backward) continue;
      n.backward(n.grad);
    }
    for (const auto& n : nodes_)
      if (!n->is_leaf()) std::vector<T>().swap(n->grad);
    return leaves();
  }

 private:
  std::vector<std::shared_ptr<Node<T>>> nodes_;
  std::shared_ptr<Node<T>> output_;
};

/// Reverse-mode sweep from a scalar output; returns the leaves whose gradients were filled.
template <typename T>
std::vector<Tensor<T>> backward(const Tensor<T>& output) {
  if (output.defined() && output.numel() != 1) {
    throw DimensionError("backward() needs a scalar output, got shape " +
                         to_string(output.shape()));
  }
  return Graph<T>::trace(output).backward();
}

}  // namespace diffuma
