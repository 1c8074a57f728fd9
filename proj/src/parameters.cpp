#include "dhm/parameters.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace dhm {

template <class T>
Tensor<T> ParameterSet<T>::add(std::string name, Shape shape, std::vector<T> values) {
  if (contains(name)) throw Error("duplicate parameter name '" + name + "'");
  auto t = Tensor<T>::from_values(std::move(shape), std::move(values), true);
  items_.emplace_back(std::move(name), t);
  return t;
}

template <class T>
Tensor<T> ParameterSet<T>::add_constant(std::string name, Shape shape, T value) {
  std::vector<T> v(numel(shape), value);
  return add(std::move(name), std::move(shape), std::move(v));
}

template <class T>
Tensor<T> ParameterSet<T>::add_trunc_normal(std::string name, Shape shape, T stddev, Rng& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<T> v(numel(shape));
  for (auto& x : v) {
    double z;
    do z = nd(rng);
    while (std::abs(z) > 2.0);
    x = static_cast<T>(z * stddev);
  }
  return add(std::move(name), std::move(shape), std::move(v));
}

template <class T>
Tensor<T> ParameterSet<T>::add_uniform(std::string name, Shape shape, T bound, Rng& rng) {
  std::uniform_real_distribution<double> ud(-1.0, 1.0);
  std::vector<T> v(numel(shape));
  for (auto& x : v) x = static_cast<T>(ud(rng) * bound);
  return add(std::move(name), std::move(shape), std::move(v));
}

template <class T>
std::size_t ParameterSet<T>::element_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : items_) n += t.numel();
  return n;
}

template <class T>
bool ParameterSet<T>::contains(const std::string& name) const {
  return std::any_of(items_.begin(), items_.end(), [&](const Entry& e) { return e.first == name; });
}

template <class T>
Tensor<T> ParameterSet<T>::get(const std::string& name) const {
  for (const auto& [n, t] : items_)
    if (n == name) return t;
  throw Error("unknown parameter '" + name + "'");
}

template <class T>
void ParameterSet<T>::zero_grad() {
  for (auto& [_, t] : items_) t.zero_grad();
}

template class ParameterSet<float>;
template class ParameterSet<double>;

}  // namespace dhm
