#pragma once

#include <string>
#include <utility>
#include <vector>

#include "dhm/tensor.hpp"

namespace dhm {

/// Ordered registry of named trainable leaves. Registration order is the
/// checkpoint order.
template <class T>
class ParameterSet {
 public:
  using Entry = std::pair<std::string, Tensor<T>>;

  Tensor<T> add(std::string name, Shape shape, std::vector<T> values);
  Tensor<T> add_constant(std::string name, Shape shape, T value);
  /// N(0, std) truncated at +-2 std.
  Tensor<T> add_trunc_normal(std::string name, Shape shape, T stddev, Rng& rng);
  /// U(-bound, bound).
  Tensor<T> add_uniform(std::string name, Shape shape, T bound, Rng& rng);

  const std::vector<Entry>& items() const { return items_; }
  std::size_t size() const { return items_.size(); }
  std::size_t element_count() const;
  bool contains(const std::string& name) const;
  Tensor<T> get(const std::string& name) const;
  void zero_grad();

 private:
  std::vector<Entry> items_;
};

extern template class ParameterSet<float>;
extern template class ParameterSet<double>;

}  // namespace dhm
