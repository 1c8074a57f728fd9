#include "dhm/optim.hpp"

#include <cmath>

namespace dhm {

template <class T>
Adam<T>::Adam(const ParameterSet<T>& params, AdamConfig config)
    : params_(params.items()), config_(config) {
  if (!(config_.learning_rate > 0) || !(config_.beta1 > 0 && config_.beta1 < 1) ||
      !(config_.beta2 > 0 && config_.beta2 < 1) || !(config_.eps > 0))
    throw Error("adam: invalid hyperparameters");
  for (const auto& [_, t] : params_) {
    m_.emplace_back(t.numel(), 0.0);
    v_.emplace_back(t.numel(), 0.0);
  }
}

template <class T>
void Adam<T>::step() {
  for (const auto& [name, t] : params_)
    if (!t.has_grad()) throw Error("adam: parameter '" + name + "' has no gradient");
  ++steps_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, double(steps_));
  const double c2 = 1.0 - std::pow(b2, double(steps_));
  for (std::size_t p = 0; p < params_.size(); ++p) {
    Tensor<T>& t = params_[p].second;
    auto g = t.grad();
    auto w = t.mutable_values();
    auto& m = m_[p];
    auto& v = v_[p];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i];
      m[i] = b1 * m[i] + (1.0 - b1) * gi;
      v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
      const double mhat = m[i] / c1, vhat = v[i] / c2;
      w[i] = static_cast<T>(w[i] - config_.learning_rate * mhat / (std::sqrt(vhat) + config_.eps));
    }
    t.zero_grad();
  }
}

template class Adam<float>;
template class Adam<double>;

}  // namespace dhm
