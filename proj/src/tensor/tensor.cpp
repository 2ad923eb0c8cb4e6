#include "mvp/tensor/tensor.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "mvp/errors.hpp"

namespace mvp {

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace detail {

void check_finite(const Node& node) {
#if !defined(NDEBUG) || defined(MVP_CHECK_FINITE)
  for (double v : node.value) {
    assert(std::isfinite(v) && "non-finite tensor value");
    if (!std::isfinite(v)) throw std::domain_error(std::string("non-finite value produced by ") + node.op);
  }
#else
  (void)node;
#endif
}

}  // namespace detail

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad) {
  if (shape.empty()) throw DimensionError("tensor shape must have rank >= 1");
  for (auto extent : shape) {
    if (extent == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
  }
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("shape " + shape_str(shape) + " does not match " +
                         std::to_string(data.size()) + " values");
  }
  node_ = std::make_shared<detail::Node>();
  node_->shape = std::move(shape);
  node_->value = std::move(data);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor({1}, {value}, requires_grad); }

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> data, bool requires_grad) {
  return Tensor({rows, cols}, std::move(data), requires_grad);
}

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

void Tensor::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detach() const { return Tensor(shape(), node_->value, false); }

Tensor Tensor::clone() const { return Tensor(shape(), node_->value, requires_grad()); }

Tape Tape::record(const Tensor& root) {
  Tape tape;
  if (!root.defined() || !root.requires_grad()) return tape;

  // Iterative post-order DFS: a node is emitted once all its parents are.
  std::unordered_set<const detail::Node*> visited;
  std::vector<std::pair<std::shared_ptr<detail::Node>, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      auto parent = node->parents[next++];
      if (parent->requires_grad && visited.insert(parent.get()).second) {
        stack.emplace_back(std::move(parent), 0);
      }
      continue;
    }
    tape.nodes_.push_back(node);
    stack.pop_back();
  }
  return tape;
}

std::size_t Tape::position(const detail::Node* node) const {
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].get() == node) return i;
  }
  return nodes_.size();
}

void Tape::backward() {
  if (nodes_.empty()) return;
  for (auto& node : nodes_) {
    if (!node->is_leaf()) node->grad.assign(node->value.size(), 0.0);
  }
  auto& root = nodes_.back();
  auto& seed = root->ensure_grad();
  for (auto& g : seed) g += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    auto& node = **it;
    if (node.backward) node.backward(node);
  }
}

namespace {
thread_local bool t_no_grad = false;
}  // namespace

NoGradGuard::NoGradGuard() : previous_(t_no_grad) { t_no_grad = true; }
NoGradGuard::~NoGradGuard() { t_no_grad = previous_; }
bool NoGradGuard::active() { return t_no_grad; }

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  Tape::record(loss).backward();
}

}  // namespace mvp
