#pragma once

// Dense float64 tensors with a define-by-run reverse-mode tape.
//
// A Tensor is a cheap handle onto a graph node. Ops build new nodes that keep
// their inputs alive; backward() sorts the reachable nodes into a Tape and
// replays the recorded adjoints in reverse. A graph is single-owner: it may
// be moved between threads but never mutated concurrently.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace mvp {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first written
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this->grad and accumulates into parents' grads.
  std::function<void(Node&)> backward;

  bool is_leaf() const noexcept { return !backward; }
  std::vector<double>& ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

void check_finite(const Node& node);

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data,
                       bool requires_grad = false);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }
  /// Leading extent (rank >= 1).
  std::size_t rows() const { return node_->shape.front(); }
  /// Trailing extent.
  std::size_t cols() const { return node_->shape.back(); }

  std::span<const double> data() const { return node_->value; }
  /// Raw write access. Only meaningful on leaves (parameters, inputs).
  std::span<double> mutable_data() { return node_->value; }
  double at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }
  double item() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag) { node_->requires_grad = flag; }
  bool is_leaf() const { return node_->is_leaf(); }
  bool has_grad() const { return !node_->grad.empty(); }
  /// Empty span when no gradient has been accumulated.
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() { return node_->ensure_grad(); }
  void zero_grad();

  /// Same values, fresh leaf, no history.
  Tensor detach() const;
  /// Deep copy including requires_grad, excluding grad and history.
  Tensor clone() const;

  const char* op_name() const { return node_->op; }
  const std::shared_ptr<detail::Node>& node() const { return node_; }
  static Tensor from_node(std::shared_ptr<detail::Node> node) {
    Tensor t;
    t.node_ = std::move(node);
    return t;
  }

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Topologically ordered record of the ops reachable from a root.
/// Every node appears after all of its parents and exactly once.
class Tape {
 public:
  static Tape record(const Tensor& root);

  std::size_t size() const noexcept { return nodes_.size(); }
  std::span<const std::shared_ptr<detail::Node>> nodes() const { return nodes_; }
  /// Index of a node in the order, or size() when absent.
  std::size_t position(const detail::Node* node) const;

  /// Seeds d(root)/d(root) = 1 and replays adjoints in reverse order.
  /// Intermediate grads are reset first, leaves accumulate.
  void backward();

 private:
  std::vector<std::shared_ptr<detail::Node>> nodes_;
};

/// Reverse-mode sweep from a scalar loss. Throws ContractError on a non-scalar.
void backward(const Tensor& loss);

/// While alive, ops on this thread compute values only and record nothing.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

  static bool active();

 private:
  bool previous_;
};

}  // namespace mvp
