#pragma once

#include <cstddef>
#include <vector>

#include "dhm/tensor.hpp"

// Differentiable primitives. Image-like tensors use the (H, W, C) layout and
// convolution kernels are (KH, KW, C_in, C_out); depthwise kernels (KH, KW, C).
// Every function throws ShapeError naming the offending shapes.
namespace dhm::ops {

/// Right-aligned broadcast of two shapes (axes must be equal or 1).
Shape broadcast_shape(const Shape& a, const Shape& b);

template <class T> Tensor<T> broadcast_to(const Tensor<T>& x, const Shape& shape);

template <class T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <class T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <class T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <class T> Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);

template <class T> Tensor<T> neg(const Tensor<T>& x);
template <class T> Tensor<T> scale(const Tensor<T>& x, T factor);
template <class T> Tensor<T> add_scalar(const Tensor<T>& x, T offset);

template <class T> Tensor<T> exp(const Tensor<T>& x);
template <class T> Tensor<T> sqrt(const Tensor<T>& x);
/// log1p(exp(-|x|)) + max(x, 0)
template <class T> Tensor<T> softplus(const Tensor<T>& x);
template <class T> Tensor<T> sigmoid(const Tensor<T>& x);
template <class T> Tensor<T> silu(const Tensor<T>& x);
/// Exact (erf) form.
template <class T> Tensor<T> gelu(const Tensor<T>& x);

/// (M, K) x (K, N).
template <class T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
/// x[..., in] * w[in, out] + bias[out]; `bias` may be undefined.
template <class T> Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias);

template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, std::size_t stride,
                 std::size_t pad);
template <class T>
Tensor<T> depthwise_conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                           std::size_t stride, std::size_t pad);
/// Output extent (in - 1) * stride - 2 * pad + k.
template <class T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                           std::size_t stride, std::size_t pad);
template <class T>
Tensor<T> avg_pool2d(const Tensor<T>& x, std::size_t kh, std::size_t kw, std::size_t sh,
                     std::size_t sw);
/// Zero padding of the two spatial axes of an (H, W, C) tensor.
template <class T>
Tensor<T> pad2d(const Tensor<T>& x, std::size_t top, std::size_t bottom, std::size_t left,
                std::size_t right);

template <class T> Tensor<T> concat(const std::vector<Tensor<T>>& xs, std::size_t axis);
template <class T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t begin, std::size_t end);
template <class T> Tensor<T> reshape(const Tensor<T>& x, const Shape& shape);
template <class T> Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& perm);
/// out[i, ...] = x[index[i], ...]; backward scatter-adds.
template <class T> Tensor<T> gather_rows(const Tensor<T>& x, const std::vector<std::size_t>& index);

template <class T>
Tensor<T> sum(const Tensor<T>& x, const std::vector<std::size_t>& axes, bool keepdim = false);
template <class T>
Tensor<T> mean(const Tensor<T>& x, const std::vector<std::size_t>& axes, bool keepdim = false);
template <class T> Tensor<T> sum_all(const Tensor<T>& x);
template <class T> Tensor<T> mean_all(const Tensor<T>& x);

/// Normalizes over the last axis, no affine. Zero-variance rows map to 0.
template <class T> Tensor<T> layernorm(const Tensor<T>& x, T eps = T(1e-5));

}  // namespace dhm::ops
