#include "dhm/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

namespace dhm {

std::string to_string(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

namespace {
thread_local bool t_no_grad = false;
}

NoGradGuard::NoGradGuard() : previous_(t_no_grad) { t_no_grad = true; }
NoGradGuard::~NoGradGuard() { t_no_grad = previous_; }
bool NoGradGuard::active() { return t_no_grad; }

template <class T>
Tensor<T> Tensor<T>::from_values(Shape shape, std::vector<T> values, bool requires_grad) {
  if (values.size() != dhm::numel(shape))
    throw ShapeError("tensor buffer of " + std::to_string(values.size()) +
                     " values does not match shape " + to_string(shape));
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->value = std::move(values);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

template <class T>
T Tensor<T>::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
  return node_->value[0];
}

template <class T>
Tensor<T> Tensor<T>::detach() const {
  return from_values(shape(), node_->value, false);
}

namespace {

template <class T>
std::vector<Node<T>*> topo_order(Node<T>* root) {
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  // (node, next parent index) frames for an iterative post-order walk
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  seen.insert(root);
  while (!stack.empty()) {
    auto& [n, i] = stack.back();
    if (i < n->parents.size()) {
      Node<T>* p = n->parents[i++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  return order;
}

template <class T>
void run_backward(Node<T>* root, std::span<const T> seed) {
  if (!root->requires_grad)
    throw Error("backward() called on a tensor that is detached from any graph");
  if (seed.size() != root->value.size())
    throw ShapeError("backward seed of " + std::to_string(seed.size()) +
                     " values for root of shape " + to_string(root->shape));
  auto order = topo_order(root);
  for (auto* n : order)
    if (!n->is_leaf()) n->grad.clear();
  auto g = root->grad_buffer();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += seed[i];
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->is_leaf() || n->grad.empty()) continue;
    n->backward_fn(*n);
    std::vector<T>().swap(n->grad);
  }
}

}  // namespace

template <class T>
void Tensor<T>::backward() const {
  if (numel() != 1)
    throw ShapeError("backward() without seed requires a scalar root, got " +
                     to_string(shape()));
  const T one = T(1);
  run_backward(node_.get(), std::span<const T>(&one, 1));
}

template <class T>
void Tensor<T>::backward(std::span<const T> seed) const {
  run_backward(node_.get(), seed);
}

template <class T>
Tensor<T> make_result(Shape shape, std::vector<T> value, const std::vector<Tensor<T>>& parents,
                      const char* op, std::function<void(Node<T>&)> backward_fn) {
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->op = op;
  bool needs = false;
  if (!NoGradGuard::active())
    for (const auto& p : parents) needs = needs || p.requires_grad();
  if (needs) {
    n->requires_grad = true;
    n->parents.reserve(parents.size());
    for (const auto& p : parents) n->parents.push_back(p.shared_node());
    n->backward_fn = std::move(backward_fn);
  }
  return Tensor<T>(std::move(n));
}

template class Tensor<float>;
template class Tensor<double>;
template Tensor<float> make_result(Shape, std::vector<float>, const std::vector<Tensor<float>>&,
                                   const char*, std::function<void(Node<float>&)>);
template Tensor<double> make_result(Shape, std::vector<double>,
                                    const std::vector<Tensor<double>>&, const char*,
                                    std::function<void(Node<double>&)>);

}  // namespace dhm
