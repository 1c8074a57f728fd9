#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dhm/parameters.hpp"

namespace dhm {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias-corrected moments. Moment buffers are kept in double
/// regardless of the parameter dtype.
template <class T>
class Adam {
 public:
  Adam(const ParameterSet<T>& params, AdamConfig config = {});

  /// Applies one update to every registered parameter and clears its grad.
  /// Throws if any parameter has no gradient, naming it.
  void step();

  std::uint64_t steps() const { return steps_; }
  const AdamConfig& config() const { return config_; }
  void set_learning_rate(double lr) { config_.learning_rate = lr; }

 private:
  std::vector<std::pair<std::string, Tensor<T>>> params_;
  std::vector<std::vector<double>> m_, v_;
  AdamConfig config_;
  std::uint64_t steps_ = 0;
};

extern template class Adam<float>;
extern template class Adam<double>;

}  // namespace dhm
