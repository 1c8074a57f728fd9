#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dhm/cassi.hpp"
#include "dhm/config.hpp"
#include "dhm/network.hpp"
#include "dhm/optim.hpp"

// Half-quadratic-splitting unfolding: Z0 from a convolution over the mask
// stack and measurement, then T rounds of closed-form data projection and
// learned denoising with shared weights.
namespace dhm::unfold {

/// X = Z + Psi^T ((y - Psi Z) / (eta + psi)); eta is a single positive value.
template <class T>
Tensor<T> data_projection(const Tensor<T>& z, const cassi::SensingOperator& op,
                          const Tensor<T>& y, const Tensor<T>& eta);

/// mean(sqrt((z - x)^2 + eps^2) - eps).
template <class T>
Tensor<T> charbonnier_loss(const Tensor<T>& z, const Tensor<T>& x, T eps);

/// (H, W*, bands + 1) input shared by the initializer and the learner:
/// shifted mask stack followed by the measurement plane.
template <class T>
Tensor<T> degradation_input(const cassi::SensingOperator& op, const Tensor<T>& y);

template <class T>
struct LearnerWeights {
  std::vector<Tensor<T>> conv_w, conv_b;  // two blocks of three 3x3 convolutions
  std::vector<Tensor<T>> fc_w, fc_b;      // three fully connected layers
  std::size_t max_stages = 0;             // last layer emits 2 * max_stages values
};

template <class T>
struct StageTrace {
  std::vector<Tensor<T>> x;  // X_1 .. X_T
  std::vector<Tensor<T>> z;  // Z_0 .. Z_T
};

template <class T>
struct StageParams {
  Tensor<T> eta;  // (T)
  Tensor<T> rho;  // (T)
};

template <class T>
class Model {
 public:
  explicit Model(const Config& cfg);

  const Config& config() const { return cfg_; }
  ParameterSet<T>& params() { return params_; }
  const ParameterSet<T>& params() const { return params_; }
  const net::Denoiser<T>& denoiser() const { return *denoiser_; }
  const std::optional<LearnerWeights<T>>& learner() const { return learner_; }
  const Tensor<T>& init_weight() const { return init_w_; }
  const Tensor<T>& init_bias() const { return init_b_; }

  Tensor<T> init_z0(const cassi::SensingOperator& op, const Tensor<T>& y) const;
  /// (eta, rho) for `stages` stages, each entry >= 1e-4.
  StageParams<T> learn_params(const cassi::SensingOperator& op, const Tensor<T>& y,
                              std::size_t stages) const;
  /// Z_T; `trace` receives every intermediate when non-null.
  Tensor<T> run_stages(const cassi::SensingOperator& op, const Tensor<T>& y, std::size_t stages,
                       StageTrace<T>* trace = nullptr) const;
  Tensor<T> run(const cassi::SensingOperator& op, const Tensor<T>& y) const {
    return run_stages(op, y, cfg_.stages);
  }

 private:
  Config cfg_;
  ParameterSet<T> params_;
  Tensor<T> init_w_, init_b_;
  std::optional<LearnerWeights<T>> learner_;
  std::optional<net::Denoiser<T>> denoiser_;
};

/// Unshifted reconstruction of one measurement, without gradient tracking.
template <class T>
HsiCube reconstruct(const Model<T>& model, const cassi::SensingOperator& op, const Plane& y);

struct TrainLog {
  std::vector<std::pair<std::size_t, double>> loss;      // (step, batch loss)
  std::vector<std::pair<std::size_t, double>> val_psnr;  // (step, mean dB)
};

/// Adam on the Charbonnier loss. Each step draws `batch` cubes, takes random
/// crops of `crop` pixels, simulates measurements with `mask` (cropped to
/// match) and the configured noise. Deterministic for a fixed seed.
template <class T>
TrainLog train(Model<T>& model, const std::vector<HsiCube>& train_set,
               const std::vector<HsiCube>& val_set, const Plane& mask,
               const std::function<void(const std::string&)>& log = {});

/// Mean PSNR (dB) of `reconstruct` over cubes at full size, noiseless unless
/// the config says otherwise; measurement noise drawn from `seed`.
template <class T>
double evaluate_psnr(const Model<T>& model, const std::vector<HsiCube>& cubes, const Plane& mask,
                     std::uint64_t seed);

/// Mean PSNR of the psi-normalized adjoint Psi^T (y / psi), unshifted.
double baseline_psnr(const Config& cfg, const std::vector<HsiCube>& cubes, const Plane& mask,
                     std::uint64_t seed);

}  // namespace dhm::unfold
