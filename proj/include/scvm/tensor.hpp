#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace scvm {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

/// Raised when operand shapes are incompatible with an operation.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised on NaN/Inf values, failed gradient checks and diverged training.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised on file system and serialization failures.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename T>
struct Node;

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

/// One vertex of the define-by-run graph. `backward` reads `grad` of this
/// node and accumulates into the grads of `parents`.
template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;
  bool requires_grad = false;
  // Set by ops evaluated at a point where they are not differentiable
  // (e.g. tied maxima in max-pool).
  bool non_differentiable = false;
  const char* op = "leaf";
  std::vector<NodePtr<T>> parents;
  std::function<void(Node&)> backward;

  std::vector<T>& ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    return grad;
  }
};

/// Dense row-major tensor handle participating in reverse-mode
/// differentiation. Copies share the underlying node, like a
/// framework "variable"; use `detach()` for an independent value copy.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(NodePtr<T> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, T value);
  static Tensor from(Shape shape, std::vector<T> values);
  static Tensor scalar(T value);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t size() const { return node_->data.size(); }

  std::span<const T> data() const { return node_->data; }
  std::span<T> mutable_data() { return node_->data; }
  std::vector<T> to_vector() const { return node_->data; }

  bool has_grad() const { return node_->grad.size() == node_->data.size(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->ensure_grad(); }
  void zero_grad() { node_->grad.clear(); }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool on) {
    node_->requires_grad = on;
    return *this;
  }

  const char* op() const { return node_->op; }
  T item() const;
  T operator[](std::size_t flat_index) const { return node_->data[flat_index]; }
  T at(std::size_t row, std::size_t col) const;

  /// Fresh leaf holding a copy of the values, outside any graph.
  Tensor detach() const;

  /// Reverse-mode sweep from a scalar. Gradients accumulate into every
  /// reachable node that requires grad; order is a fixed reverse
  /// topological order so repeated runs produce identical sums.
  void backward() const;

  Node<T>* node() const { return node_.get(); }
  const NodePtr<T>& node_ptr() const { return node_; }

 private:
  NodePtr<T> node_;
};

/// While alive on a thread, ops record no graph (forward-only evaluation).
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

/// Builds an op output. The graph edge and backward closure are kept only
/// when at least one parent requires grad.
template <typename T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> data,
                      std::vector<Tensor<T>> parents,
                      std::function<void(Node<T>&)> backward);

struct GraphStats {
  std::size_t nodes = 0;        // every node reachable from the root
  std::size_t op_nodes = 0;     // nodes produced by an op
  std::size_t grad_leaves = 0;  // leaves that require grad (live parameters)
  bool non_differentiable = false;
};

template <typename T>
GraphStats graph_stats(const Tensor<T>& root);

}  // namespace scvm
