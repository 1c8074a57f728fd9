#pragma once

#include <cstddef>
#include <span>
#include <vector>

// Raw (non-differentiable) selective-scan kernels.
//
// Layouts, all row-major:
//   u, delta, y     : (G, L, D)
//   A               : (D, Ds)      continuous state matrix, strictly negative
//   B, C            : (G, L, Ds)
//   skip (nu)       : (D)
//   a_bar, b_bar, h : (G, L, D, Ds)
//
// Recurrence, independent across g and d:
//   h_k = a_bar_k * h_{k-1} + b_bar_k * u_k,   h_0 = 0
//   y_k = sum_s C_k[s] * h_k[s] + nu * u_k
namespace dhm::ssm {

struct ScanDims {
  std::size_t groups = 1;
  std::size_t length = 1;
  std::size_t channels = 1;
  std::size_t state = 1;

  std::size_t seq_elems() const { return groups * length * channels; }
  std::size_t state_elems() const { return seq_elems() * state; }
};

enum class ScanAlgo { sequential, parallel };

struct ScanOptions {
  ScanAlgo algo = ScanAlgo::sequential;
  std::size_t threads = 0;  // 0: dhm::thread_count()
  std::size_t chunks = 0;   // parallel only; 0 picks from threads and L
};

template <class T>
struct Discretized {
  std::vector<T> a_bar;
  std::vector<T> b_bar;
};

/// Zero-order hold: a_bar = exp(delta*A), b_bar = expm1(delta*A)/A * B.
/// Throws dhm::Error on non-positive delta or non-negative A.
template <class T>
Discretized<T> discretize_zoh(std::span<const T> a, std::span<const T> b,
                              std::span<const T> delta, const ScanDims& dims);

template <class T>
std::vector<T> selective_scan(std::span<const T> u, std::span<const T> a_bar,
                              std::span<const T> b_bar, std::span<const T> c,
                              std::span<const T> skip, const ScanDims& dims,
                              const ScanOptions& opts = {});

template <class T>
std::vector<T> selective_scan_seq(std::span<const T> u, std::span<const T> a_bar,
                                  std::span<const T> b_bar, std::span<const T> c,
                                  std::span<const T> skip, const ScanDims& dims) {
  return selective_scan<T>(u, a_bar, b_bar, c, skip, dims, {ScanAlgo::sequential, 1, 1});
}

template <class T>
std::vector<T> selective_scan_par(std::span<const T> u, std::span<const T> a_bar,
                                  std::span<const T> b_bar, std::span<const T> c,
                                  std::span<const T> skip, const ScanDims& dims,
                                  std::size_t threads = 0, std::size_t chunks = 0) {
  return selective_scan<T>(u, a_bar, b_bar, c, skip, dims, {ScanAlgo::parallel, threads, chunks});
}

/// Inputs of the fused kernel, which discretizes on the fly and never
/// materializes a_bar / b_bar.
template <class T>
struct FusedInputs {
  std::span<const T> u, delta, a, b, c, skip;
};

template <class T>
struct FusedGrads {
  std::vector<T> u, delta, a, b, c, skip;
};

/// Returns y; when `states` is non-null it receives every h_k (G, L, D, Ds).
template <class T>
std::vector<T> fused_scan_forward(const FusedInputs<T>& in, const ScanDims& dims,
                                  const ScanOptions& opts, std::vector<T>* states = nullptr);

/// Adjoint of fused_scan_forward. The state adjoint obeys the reversed
/// recurrence mu_k = a_bar_k * (C_k * gy_k + mu_{k+1}), evaluated with the
/// same sequential or chunked-parallel strategy as the forward pass.
template <class T>
FusedGrads<T> fused_scan_backward(const FusedInputs<T>& in, std::span<const T> states,
                                  std::span<const T> grad_y, const ScanDims& dims,
                                  const ScanOptions& opts);

/// In-place work-efficient exclusive scan over `positions` affine maps, each a
/// vector of `width` independent lanes stored at [p * width, (p + 1) * width).
/// Combination is (a1, b1) then (a2, b2) = (a2 * a1, a2 * b1 + b2), identity (1, 0).
template <class T>
void blelloch_exclusive_scan(std::span<T> a, std::span<T> b, std::size_t positions,
                             std::size_t width = 1);

/// d/dA of expm1(dt * A) / A, stable near dt * A = 0.
template <class T>
T zoh_input_gain_dA(T dt, T a);

}  // namespace dhm::ssm
