#include "scvm/tensor.hpp"

#include <algorithm>
#include <unordered_set>

namespace scvm {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape) {
  return full(std::move(shape), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value) {
  auto node = std::make_shared<Node<T>>();
  node->data.assign(numel(shape), value);
  node->shape = std::move(shape);
  return Tensor(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::from(Shape shape, std::vector<T> values) {
  if (numel(shape) != values.size()) {
    throw ShapeError("tensor: shape " + to_string(shape) + " does not hold " +
                     std::to_string(values.size()) + " values");
  }
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  return Tensor(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value) {
  return from({}, {value});
}

template <typename T>
T Tensor<T>::item() const {
  if (size() != 1) {
    throw ShapeError("item: tensor of shape " + to_string(shape()) + " is not a scalar");
  }
  return node_->data[0];
}

template <typename T>
T Tensor<T>::at(std::size_t row, std::size_t col) const {
  if (rank() != 2) throw ShapeError("at: expected a matrix, got " + to_string(shape()));
  return node_->data.at(row * dim(1) + col);
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return from(shape(), node_->data);
}

namespace {

template <typename T>
std::vector<Node<T>*> topo_order(Node<T>* root) {
  // Iterative post-order DFS; parents are visited in their stored order.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

}  // namespace

template <typename T>
void Tensor<T>::backward() const {
  if (size() != 1 || !shape().empty()) {
    throw ShapeError("backward: loss must be a scalar, got shape " + to_string(shape()));
  }
  if (!node_->requires_grad) return;
  auto order = topo_order(node_.get());
  node_->ensure_grad()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (node->backward) {
      node->ensure_grad();
      node->backward(*node);
    }
  }
}

namespace {
thread_local bool g_no_grad = false;
}  // namespace

NoGradGuard::NoGradGuard() : previous_(g_no_grad) { g_no_grad = true; }
NoGradGuard::~NoGradGuard() { g_no_grad = previous_; }
bool NoGradGuard::active() { return g_no_grad; }

template <typename T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> data,
                      std::vector<Tensor<T>> parents,
                      std::function<void(Node<T>&)> backward) {
  auto node = std::make_shared<Node<T>>();
  node->op = op;
  node->shape = std::move(shape);
  node->data = std::move(data);
  const bool tracked = !g_no_grad && std::any_of(parents.begin(), parents.end(),
                                   [](const Tensor<T>& p) { return p.requires_grad(); });
  if (tracked) {
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (auto& p : parents) node->parents.push_back(p.node_ptr());
    node->backward = std::move(backward);
  }
  return Tensor<T>(std::move(node));
}

template <typename T>
GraphStats graph_stats(const Tensor<T>& root) {
  GraphStats stats;
  std::unordered_set<Node<T>*> seen;
  std::vector<Node<T>*> stack{root.node()};
  seen.insert(root.node());
  while (!stack.empty()) {
    Node<T>* node = stack.back();
    stack.pop_back();
    ++stats.nodes;
    if (node->backward) ++stats.op_nodes;
    if (!node->backward && node->requires_grad) ++stats.grad_leaves;
    stats.non_differentiable = stats.non_differentiable || node->non_differentiable;
    for (auto& p : node->parents) {
      if (seen.insert(p.get()).second) stack.push_back(p.get());
    }
  }
  return stats;
}

template class Tensor<float>;
template class Tensor<double>;
template Tensor<float> make_result(const char*, Shape, std::vector<float>,
                                   std::vector<Tensor<float>>,
                                   std::function<void(Node<float>&)>);
template Tensor<double> make_result(const char*, Shape, std::vector<double>,
                                    std::vector<Tensor<double>>,
                                    std::function<void(Node<double>&)>);
template GraphStats graph_stats(const Tensor<float>&);
template GraphStats graph_stats(const Tensor<double>&);

}  // namespace scvm
