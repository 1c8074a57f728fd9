#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dhm/common.hpp"

namespace dhm {

/// One vertex of the reverse-mode graph. Leaves own parameters or inputs;
/// interior nodes keep their parents alive and know how to push their
/// gradient back into them.
template <class T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until something flows into it
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  std::span<T> grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), T(0));
    return grad;
  }
  bool is_leaf() const { return !backward_fn; }
};

/// While alive, newly created results do not record graph edges.
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

/// Dense row-major tensor with optional gradient tracking. Copies share the
/// underlying node.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return full(std::move(shape), T(0), requires_grad);
  }
  static Tensor full(Shape shape, T v, bool requires_grad = false) {
    std::vector<T> values(dhm::numel(shape), v);
    return from_values(std::move(shape), std::move(values), requires_grad);
  }
  static Tensor scalar(T v, bool requires_grad = false) {
    return from_values({}, {v}, requires_grad);
  }
  static Tensor from_values(Shape shape, std::vector<T> values, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t numel() const { return node_->value.size(); }

  std::span<const T> values() const { return node_->value; }
  /// Direct write access; meant for leaves (parameters, inputs).
  std::span<T> mutable_values() { return node_->value; }
  T item() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->grad_buffer(); }
  void zero_grad() { node_->grad.clear(); }
  bool is_leaf() const { return node_->is_leaf(); }
  const char* op() const { return node_->op; }

  /// Reverse sweep from a scalar root (seed 1).
  void backward() const;
  /// Reverse sweep with an explicit same-shape seed.
  void backward(std::span<const T> seed) const;

  /// Same values, cut from the graph.
  Tensor detach() const;

  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& shared_node() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Builds an interior node. When no parent needs a gradient (or a
/// NoGradGuard is active) the edges and closure are dropped.
template <class T>
Tensor<T> make_result(Shape shape, std::vector<T> value, const std::vector<Tensor<T>>& parents,
                      const char* op, std::function<void(Node<T>&)> backward_fn);

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace dhm
