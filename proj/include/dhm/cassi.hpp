#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "dhm/cube.hpp"
#include "dhm/tensor.hpp"

// Coded-aperture snapshot model. Band w of a cube is translated right by
// shift_step * w into a canvas of width W* = W + shift_step * (bands - 1);
// the mask is translated the same way. The sensing matrix acts on that
// shifted volume:  y(i, j) = sum_w mask_s(i, j, w) * x_s(i, j, w).
namespace dhm::cassi {

std::size_t shifted_width(std::size_t width, std::size_t bands, std::size_t shift_step);

HsiCube shift_bands(const HsiCube& cube, std::size_t shift_step);
/// Inverse of shift_bands on the occupied support; `width` is the original W.
HsiCube unshift_bands(const HsiCube& shifted, std::size_t shift_step, std::size_t width);

struct NoiseModel {
  enum class Kind { none, gaussian, shot };
  Kind kind = Kind::none;
  double sigma = 0.0;          // gaussian
  unsigned bit_depth = 0;      // shot

  /// "none", "gaussian:SIGMA" or "shot:BITS".
  static NoiseModel parse(const std::string& spec);
  std::string to_string() const;
};

struct Measurement {
  Plane values;  // H x W*
  NoiseModel noise;
};

struct DenseMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;  // row-major

  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
  std::vector<double> matvec(const std::vector<double>& x) const;
  std::vector<double> tmatvec(const std::vector<double>& y) const;
};

class SensingOperator {
 public:
  SensingOperator(Plane mask, std::size_t shift_step, std::size_t bands);

  void set_mask(Plane mask);
  void set_shift_step(std::size_t shift_step);

  std::size_t height() const { return mask_.height; }
  std::size_t width() const { return mask_.width; }
  std::size_t bands() const { return bands_; }
  std::size_t shift_step() const { return shift_step_; }
  std::size_t shifted_width() const { return shifted_.width; }
  Shape volume_shape() const { return {height(), shifted_width(), bands_}; }

  const Plane& mask() const { return mask_; }
  /// H x W* x bands stack of translated masks.
  const HsiCube& shifted_mask() const { return shifted_; }
  /// psi(i, j) = sum_w mask_s(i, j, w)^2, the diagonal of Psi Psi^T.
  const Plane& psi() const { return psi_; }

  /// Psi applied to a shifted-domain volume (H x W* x bands).
  Plane project(const HsiCube& shifted) const;
  /// Psi^T y, an H x W* x bands volume.
  HsiCube adjoint(const Plane& y) const;

  /// Rows index measurement pixels (i * W* + j); columns index the shifted
  /// volume in its interleaved order ((i * W* + j) * bands + w).
  DenseMatrix materialize_dense(std::size_t cap = 4096) const;

 private:
  void rebuild();

  Plane mask_;
  std::size_t shift_step_;
  std::size_t bands_;
  HsiCube shifted_;
  Plane psi_;
};

/// Accepts an unshifted cube (width W, shifted here) or a shifted-domain
/// volume (width W*).
Measurement forward_project(const SensingOperator& op, const HsiCube& cube);
HsiCube adjoint_project(const SensingOperator& op, const Measurement& y);
inline const Plane& psi_diag(const SensingOperator& op) { return op.psi(); }
inline DenseMatrix materialize_dense(const SensingOperator& op, std::size_t cap = 4096) {
  return op.materialize_dense(cap);
}

Measurement add_noise(const Measurement& y, const NoiseModel& model, Rng& rng);

/// i.i.d. Bernoulli(p) binary mask.
Plane random_mask(std::size_t height, std::size_t width, Rng& rng, double p = 0.5);

/// forward_project followed by add_noise.
Measurement simulate(const SensingOperator& op, const HsiCube& cube, const NoiseModel& noise,
                     Rng& rng);

/// Psi^T (y / psi) with psi = 0 pixels left at zero.
HsiCube normalized_adjoint(const SensingOperator& op, const Plane& y);

// Differentiable wrappers on (H, W*, bands) / (H, W*) tensors.
template <class T> Tensor<T> project(const SensingOperator& op, const Tensor<T>& x);
template <class T> Tensor<T> adjoint(const SensingOperator& op, const Tensor<T>& y);

template <class T> Tensor<T> to_tensor(const HsiCube& c, bool requires_grad = false);
template <class T> Tensor<T> to_tensor(const Plane& p, bool requires_grad = false);
template <class T> HsiCube to_cube(const Tensor<T>& t);

}  // namespace dhm::cassi
