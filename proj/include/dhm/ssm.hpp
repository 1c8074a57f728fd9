#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "dhm/parameters.hpp"
#include "dhm/ssm_kernel.hpp"
#include "dhm/tensor.hpp"

namespace dhm::ssm {

/// Learnable parameters of one scan direction.
///
/// A is stored through its logarithm so it stays strictly negative:
/// A = -exp(log_a). The timescale bias E is kept per channel and broadcast
/// over (G, L), which keeps the parameter count independent of image size.
template <class T>
struct SsmParams {
  Tensor<T> log_a;       // (D, Ds)
  Tensor<T> dt_bias;     // (D)     E
  Tensor<T> skip;        // (D)     nu
  Tensor<T> proj_b;      // (D, Ds) P_b
  Tensor<T> proj_c;      // (D, Ds) P_c
  Tensor<T> proj_delta;  // (D, D)  P_delta

  std::size_t channels() const { return proj_delta.dim(0); }
  std::size_t state_dim() const { return proj_b.dim(1); }
  /// A = -exp(log_a), differentiable.
  Tensor<T> a() const;
};

/// Registers a direction's parameters under `prefix` with the usual
/// initialization: A spread over [-1, -1e-2], nu = 1, projections
/// N(0, 0.02) truncated at two sigma, E so that softplus(E) lands in
/// [1e-3, 1e-1].
template <class T>
SsmParams<T> make_ssm_params(ParameterSet<T>& params, const std::string& prefix,
                             std::size_t channels, std::size_t state_dim, Rng& rng);

template <class T>
struct ContinuousParams {
  Tensor<T> b;      // (G, L, Ds)
  Tensor<T> c;      // (G, L, Ds)
  Tensor<T> delta;  // (G, L, D), strictly positive
};

/// B = P_b(S), C = P_c(S), delta = softplus(E + P_delta(S)).
template <class T>
ContinuousParams<T> generate_params(const Tensor<T>& seq, const SsmParams<T>& p);

/// Differentiable fused selective scan over (G, L, D) sequences.
template <class T>
Tensor<T> selective_scan(const Tensor<T>& u, const Tensor<T>& delta, const Tensor<T>& a,
                         const Tensor<T>& b, const Tensor<T>& c, const Tensor<T>& skip,
                         const ScanOptions& opts = {});

/// One direction end to end: parameter generation followed by the scan.
template <class T>
Tensor<T> hsi_ssm_direction(const Tensor<T>& seq, const SsmParams<T>& p,
                            const ScanOptions& opts = {});

/// Scan geometry. window == 0 scans the whole map as one sequence
/// (G = 1, L = H*W); otherwise the map is split into window x window tiles
/// (G = H*W / window^2, L = window^2) in row-major tile order.
struct ScanLayout {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t window = 0;

  std::size_t groups() const;
  std::size_t length() const;
  void validate() const;
};

/// Pixel index (row * width + col) visited at each flattened sequence
/// position g * L + k, for the four directions:
///   0: row-major from the top-left corner
///   1: row-major over the horizontally flipped map (starts top-right)
///   2: reverse of 0 (starts bottom-right)
///   3: reverse of 1 (starts bottom-left)
/// Each list is a permutation of 0 .. H*W-1.
std::array<std::vector<std::size_t>, 4> scan_paths(const ScanLayout& layout);

/// (H, W, D) feature -> four (G, L, D) sequence batches.
template <class T>
std::array<Tensor<T>, 4> cross_scan(const Tensor<T>& feature, std::size_t window);

/// Scatters each batch back through its path and sums the four maps.
template <class T>
Tensor<T> cross_merge(const std::array<Tensor<T>, 4>& seqs, const ScanLayout& layout);

}  // namespace dhm::ssm
