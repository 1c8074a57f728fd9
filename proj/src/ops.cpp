#include "dhm/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace dhm::ops {

namespace {

std::vector<std::size_t> strides_of(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t k = s.size(); k-- > 1;) st[k - 1] = st[k] * s[k];
  return st;
}

// Visits every index of `out` in row-major order together with the offset
// into a second buffer described by per-axis strides (0 for broadcast axes).
template <class F>
void for_each_strided(const Shape& out, const std::vector<std::size_t>& strides, F&& f) {
  const std::size_t total = numel(out);
  if (total == 0) return;
  const std::size_t r = out.size();
  if (r == 0) {
    f(std::size_t{0}, std::size_t{0});
    return;
  }
  const std::size_t inner = out[r - 1];
  const std::size_t is = strides[r - 1];
  std::vector<std::size_t> idx(r, 0);
  std::size_t off = 0;
  for (std::size_t o = 0; o < total; o += inner) {
    for (std::size_t j = 0; j < inner; ++j) f(o + j, off + j * is);
    for (std::size_t k = r - 1; k-- > 0;) {
      ++idx[k];
      off += strides[k];
      if (idx[k] < out[k]) break;
      off -= strides[k] * out[k];
      idx[k] = 0;
    }
  }
}

[[noreturn]] void shape_fail(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + to_string(a) + " and " +
                   to_string(b));
}

void require_rank(const char* op, const Shape& s, std::size_t r) {
  if (s.size() != r)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(r) + ", got " +
                     to_string(s));
}

template <class T>
using Fn = std::function<void(Node<T>&)>;

template <class T, class F, class DF>
Tensor<T> unary(const Tensor<T>& x, const char* op, F f, DF df) {
  auto xv = x.values();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
  return make_result<T>(x.shape(), std::move(out), {x}, op, Fn<T>([df](Node<T>& n) {
                          auto& p = *n.parents[0];
                          auto gx = p.grad_buffer();
                          for (std::size_t i = 0; i < gx.size(); ++i)
                            gx[i] += n.grad[i] * df(p.value[i], n.value[i]);
                        }));
}

template <class T>
T sigmoid_scalar(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

}  // namespace

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t k = 0; k < r; ++k) {
    const std::size_t da = k < r - a.size() ? 1 : a[k - (r - a.size())];
    const std::size_t db = k < r - b.size() ? 1 : b[k - (r - b.size())];
    if (da != db && da != 1 && db != 1) shape_fail("broadcast", a, b);
    out[k] = da == 1 ? db : da;
  }
  return out;
}

template <class T>
Tensor<T> broadcast_to(const Tensor<T>& x, const Shape& shape) {
  if (x.shape() == shape) return x;
  const Shape& in = x.shape();
  if (in.size() > shape.size()) shape_fail("broadcast_to", in, shape);
  const std::size_t lead = shape.size() - in.size();
  const auto in_st = strides_of(in);
  std::vector<std::size_t> st(shape.size(), 0);
  for (std::size_t k = 0; k < in.size(); ++k) {
    if (in[k] == shape[lead + k])
      st[lead + k] = in_st[k];
    else if (in[k] != 1)
      shape_fail("broadcast_to", in, shape);
  }
  auto xv = x.values();
  std::vector<T> out(numel(shape));
  for_each_strided(shape, st, [&](std::size_t o, std::size_t i) { out[o] = xv[i]; });
  return make_result<T>(shape, std::move(out), {x}, "broadcast_to",
                        Fn<T>([shape, st](Node<T>& n) {
                          auto gx = n.parents[0]->grad_buffer();
                          for_each_strided(shape, st, [&](std::size_t o, std::size_t i) {
                            gx[i] += n.grad[o];
                          });
                        }));
}

namespace {

template <class T, class F, class GA, class GB>
Tensor<T> binary(const Tensor<T>& a0, const Tensor<T>& b0, const char* op, F f, GA ga, GB gb) {
  const Shape s = broadcast_shape(a0.shape(), b0.shape());
  const Tensor<T> a = broadcast_to(a0, s);
  const Tensor<T> b = broadcast_to(b0, s);
  auto av = a.values();
  auto bv = b.values();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[i], bv[i]);
  return make_result<T>(s, std::move(out), {a, b}, op, Fn<T>([ga, gb](Node<T>& n) {
                          auto& pa = *n.parents[0];
                          auto& pb = *n.parents[1];
                          if (pa.requires_grad) {
                            auto g = pa.grad_buffer();
                            for (std::size_t i = 0; i < g.size(); ++i)
                              g[i] += ga(n.grad[i], pa.value[i], pb.value[i]);
                          }
                          if (pb.requires_grad) {
                            auto g = pb.grad_buffer();
                            for (std::size_t i = 0; i < g.size(); ++i)
                              g[i] += gb(n.grad[i], pa.value[i], pb.value[i]);
                          }
                        }));
}

}  // namespace

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary<T>(
      a, b, "add", [](T x, T y) { return x + y; }, [](T g, T, T) { return g; },
      [](T g, T, T) { return g; });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary<T>(
      a, b, "sub", [](T x, T y) { return x - y; }, [](T g, T, T) { return g; },
      [](T g, T, T) { return -g; });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary<T>(
      a, b, "mul", [](T x, T y) { return x * y; }, [](T g, T, T y) { return g * y; },
      [](T g, T x, T) { return g * x; });
}

template <class T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return binary<T>(
      a, b, "div", [](T x, T y) { return x / y; }, [](T g, T, T y) { return g / y; },
      [](T g, T x, T y) { return -g * x / (y * y); });
}

template <class T>
Tensor<T> neg(const Tensor<T>& x) {
  return unary<T>(x, "neg", [](T v) { return -v; }, [](T, T) { return T(-1); });
}

template <class T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  return unary<T>(
      x, "scale", [factor](T v) { return v * factor; }, [factor](T, T) { return factor; });
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& x, T offset) {
  return unary<T>(
      x, "add_scalar", [offset](T v) { return v + offset; }, [](T, T) { return T(1); });
}

template <class T>
Tensor<T> exp(const Tensor<T>& x) {
  return unary<T>(x, "exp", [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <class T>
Tensor<T> sqrt(const Tensor<T>& x) {
  return unary<T>(
      x, "sqrt", [](T v) { return std::sqrt(v); }, [](T, T y) { return T(0.5) / y; });
}

template <class T>
Tensor<T> softplus(const Tensor<T>& x) {
  return unary<T>(
      x, "softplus",
      [](T v) { return std::log1p(std::exp(-std::abs(v))) + std::max(v, T(0)); },
      [](T v, T) { return sigmoid_scalar(v); });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return unary<T>(
      x, "sigmoid", [](T v) { return sigmoid_scalar(v); }, [](T, T y) { return y * (T(1) - y); });
}

template <class T>
Tensor<T> silu(const Tensor<T>& x) {
  return unary<T>(
      x, "silu", [](T v) { return v * sigmoid_scalar(v); },
      [](T v, T) {
        const T s = sigmoid_scalar(v);
        return s * (T(1) + v * (T(1) - s));
      });
}

template <class T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr T inv_sqrt2 = T(0.70710678118654752440);
  constexpr T inv_sqrt2pi = T(0.39894228040143267794);
  return unary<T>(
      x, "gelu", [](T v) { return T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2)); },
      [](T v, T) {
        const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
        return cdf + v * inv_sqrt2pi * std::exp(T(-0.5) * v * v);
      });
}

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank("matmul", a.shape(), 2);
  require_rank("matmul", b.shape(), 2);
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) shape_fail("matmul", a.shape(), b.shape());
  auto av = a.values();
  auto bv = b.values();
  std::vector<T> out(m * n, T(0));
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = av[i * k + p];
      const T* brow = &bv[p * n];
      T* orow = &out[i * n];
      for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }
  return make_result<T>({m, n}, std::move(out), {a, b}, "matmul", Fn<T>([m, k, n](Node<T>& nd) {
                          auto& pa = *nd.parents[0];
                          auto& pb = *nd.parents[1];
                          const T* g = nd.grad.data();
                          if (pa.requires_grad) {
                            auto ga = pa.grad_buffer();
                            for (std::size_t i = 0; i < m; ++i)
                              for (std::size_t p = 0; p < k; ++p) {
                                T acc = 0;
                                for (std::size_t j = 0; j < n; ++j)
                                  acc += g[i * n + j] * pb.value[p * n + j];
                                ga[i * k + p] += acc;
                              }
                          }
                          if (pb.requires_grad) {
                            auto gb = pb.grad_buffer();
                            for (std::size_t i = 0; i < m; ++i)
                              for (std::size_t p = 0; p < k; ++p) {
                                const T aip = pa.value[i * k + p];
                                for (std::size_t j = 0; j < n; ++j)
                                  gb[p * n + j] += aip * g[i * n + j];
                              }
                          }
                        }));
}

template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
  require_rank("linear", w.shape(), 2);
  if (x.rank() == 0 || x.shape().back() != w.dim(0)) shape_fail("linear", x.shape(), w.shape());
  const std::size_t in = w.dim(0), outd = w.dim(1), m = x.numel() / in;
  const bool has_bias = bias.defined();
  if (has_bias && bias.shape() != Shape{outd}) shape_fail("linear bias", w.shape(), bias.shape());
  Shape oshape = x.shape();
  oshape.back() = outd;
  auto xv = x.values();
  auto wv = w.values();
  std::vector<T> out(m * outd, T(0));
  for (std::size_t i = 0; i < m; ++i) {
    T* orow = &out[i * outd];
    if (has_bias) std::copy(bias.values().begin(), bias.values().end(), orow);
    for (std::size_t p = 0; p < in; ++p) {
      const T xp = xv[i * in + p];
      const T* wrow = &wv[p * outd];
      for (std::size_t j = 0; j < outd; ++j) orow[j] += xp * wrow[j];
    }
  }
  std::vector<Tensor<T>> parents{x, w};
  if (has_bias) parents.push_back(bias);
  return make_result<T>(
      std::move(oshape), std::move(out), parents, "linear",
      Fn<T>([m, in, outd, has_bias](Node<T>& nd) {
        auto& px = *nd.parents[0];
        auto& pw = *nd.parents[1];
        const T* g = nd.grad.data();
        if (px.requires_grad) {
          auto gx = px.grad_buffer();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < in; ++p) {
              T acc = 0;
              const T* wrow = &pw.value[p * outd];
              for (std::size_t j = 0; j < outd; ++j) acc += g[i * outd + j] * wrow[j];
              gx[i * in + p] += acc;
            }
        }
        if (pw.requires_grad) {
          auto gw = pw.grad_buffer();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < in; ++p) {
              const T xp = px.value[i * in + p];
              T* gwrow = &gw[p * outd];
              for (std::size_t j = 0; j < outd; ++j) gwrow[j] += xp * g[i * outd + j];
            }
        }
        if (has_bias && nd.parents[2]->requires_grad) {
          auto gb = nd.parents[2]->grad_buffer();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < outd; ++j) gb[j] += g[i * outd + j];
        }
      }));
}

namespace {

std::size_t conv_out(const char* op, std::size_t in, std::size_t k, std::size_t stride,
                     std::size_t pad) {
  if (stride == 0) throw ShapeError(std::string(op) + ": stride must be positive");
  if (in + 2 * pad < k)
    throw ShapeError(std::string(op) + ": kernel extent " + std::to_string(k) +
                     " exceeds padded input " + std::to_string(in + 2 * pad));
  return (in + 2 * pad - k) / stride + 1;
}

}  // namespace

template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, std::size_t stride,
                 std::size_t pad) {
  require_rank("conv2d", x.shape(), 3);
  require_rank("conv2d", w.shape(), 4);
  const std::size_t H = x.dim(0), W = x.dim(1), Ci = x.dim(2);
  const std::size_t KH = w.dim(0), KW = w.dim(1), Co = w.dim(3);
  if (w.dim(2) != Ci) shape_fail("conv2d", x.shape(), w.shape());
  const bool has_bias = bias.defined();
  if (has_bias && bias.shape() != Shape{Co}) shape_fail("conv2d bias", w.shape(), bias.shape());
  const std::size_t Ho = conv_out("conv2d", H, KH, stride, pad);
  const std::size_t Wo = conv_out("conv2d", W, KW, stride, pad);
  auto xv = x.values();
  auto wv = w.values();
  std::vector<T> out(Ho * Wo * Co, T(0));
  // Visits each (output pixel, input pixel, kernel tap) triple that overlaps.
  auto visit = [=](auto&& f) {
    for (std::size_t oh = 0; oh < Ho; ++oh)
      for (std::size_t kh = 0; kh < KH; ++kh) {
        const std::ptrdiff_t ih = std::ptrdiff_t(oh * stride + kh) - std::ptrdiff_t(pad);
        if (ih < 0 || ih >= std::ptrdiff_t(H)) continue;
        for (std::size_t ow = 0; ow < Wo; ++ow)
          for (std::size_t kw = 0; kw < KW; ++kw) {
            const std::ptrdiff_t iw = std::ptrdiff_t(ow * stride + kw) - std::ptrdiff_t(pad);
            if (iw < 0 || iw >= std::ptrdiff_t(W)) continue;
            f((oh * Wo + ow) * Co, (std::size_t(ih) * W + std::size_t(iw)) * Ci,
              (kh * KW + kw) * Ci * Co);
          }
      }
  };
  if (has_bias)
    for (std::size_t p = 0; p < Ho * Wo; ++p)
      std::copy(bias.values().begin(), bias.values().end(), &out[p * Co]);
  visit([&](std::size_t o, std::size_t i, std::size_t k) {
    for (std::size_t ci = 0; ci < Ci; ++ci) {
      const T xv_ = xv[i + ci];
      const T* wrow = &wv[k + ci * Co];
      T* orow = &out[o];
      for (std::size_t co = 0; co < Co; ++co) orow[co] += xv_ * wrow[co];
    }
  });
  std::vector<Tensor<T>> parents{x, w};
  if (has_bias) parents.push_back(bias);
  return make_result<T>({Ho, Wo, Co}, std::move(out), parents, "conv2d",
                        Fn<T>([visit, Ci, Co, Ho, Wo, has_bias](Node<T>& nd) {
                          auto& px = *nd.parents[0];
                          auto& pw = *nd.parents[1];
                          const T* g = nd.grad.data();
                          const bool need_x = px.requires_grad, need_w = pw.requires_grad;
                          T* gx = need_x ? px.grad_buffer().data() : nullptr;
                          T* gw = need_w ? pw.grad_buffer().data() : nullptr;
                          visit([&](std::size_t o, std::size_t i, std::size_t k) {
                            for (std::size_t ci = 0; ci < Ci; ++ci) {
                              const T* wrow = &pw.value[k + ci * Co];
                              const T* grow = g + o;
                              if (need_x) {
                                T acc = 0;
                                for (std::size_t co = 0; co < Co; ++co) acc += grow[co] * wrow[co];
                                gx[i + ci] += acc;
                              }
                              if (need_w) {
                                const T xval = px.value[i + ci];
                                T* gwrow = gw + k + ci * Co;
                                for (std::size_t co = 0; co < Co; ++co) gwrow[co] += xval * grow[co];
                              }
                            }
                          });
                          if (has_bias && nd.parents[2]->requires_grad) {
                            auto gb = nd.parents[2]->grad_buffer();
                            for (std::size_t p = 0; p < Ho * Wo; ++p)
                              for (std::size_t co = 0; co < Co; ++co) gb[co] += g[p * Co + co];
                          }
                        }));
}

template <class T>
Tensor<T> depthwise_conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                           std::size_t stride, std::size_t pad) {
  require_rank("depthwise_conv2d", x.shape(), 3);
  require_rank("depthwise_conv2d", w.shape(), 3);
  const std::size_t H = x.dim(0), W = x.dim(1), C = x.dim(2);
  const std::size_t KH = w.dim(0), KW = w.dim(1);
  if (w.dim(2) != C) shape_fail("depthwise_conv2d", x.shape(), w.shape());
  const bool has_bias = bias.defined();
  if (has_bias && bias.shape() != Shape{C})
    shape_fail("depthwise_conv2d bias", w.shape(), bias.shape());
  const std::size_t Ho = conv_out("depthwise_conv2d", H, KH, stride, pad);
  const std::size_t Wo = conv_out("depthwise_conv2d", W, KW, stride, pad);
  auto xv = x.values();
  auto wv = w.values();
  std::vector<T> out(Ho * Wo * C, T(0));
  auto visit = [=](auto&& f) {
    for (std::size_t oh = 0; oh < Ho; ++oh)
      for (std::size_t kh = 0; kh < KH; ++kh) {
        const std::ptrdiff_t ih = std::ptrdiff_t(oh * stride + kh) - std::ptrdiff_t(pad);
        if (ih < 0 || ih >= std::ptrdiff_t(H)) continue;
        for (std::size_t ow = 0; ow < Wo; ++ow)
          for (std::size_t kw = 0; kw < KW; ++kw) {
            const std::ptrdiff_t iw = std::ptrdiff_t(ow * stride + kw) - std::ptrdiff_t(pad);
            if (iw < 0 || iw >= std::ptrdiff_t(W)) continue;
            f((oh * Wo + ow) * C, (std::size_t(ih) * W + std::size_t(iw)) * C, (kh * KW + kw) * C);
          }
      }
  };
  if (has_bias)
    for (std::size_t p = 0; p < Ho * Wo; ++p)
      std::copy(bias.values().begin(), bias.values().end(), &out[p * C]);
  visit([&](std::size_t o, std::size_t i, std::size_t k) {
    for (std::size_t c = 0; c < C; ++c) out[o + c] += xv[i + c] * wv[k + c];
  });
  std::vector<Tensor<T>> parents{x, w};
  if (has_bias) parents.push_back(bias);
  return make_result<T>({Ho, Wo, C}, std::move(out), parents, "depthwise_conv2d",
                        Fn<T>([visit, C, Ho, Wo, has_bias](Node<T>& nd) {
                          auto& px = *nd.parents[0];
                          auto& pw = *nd.parents[1];
                          const T* g = nd.grad.data();
                          const bool need_x = px.requires_grad, need_w = pw.requires_grad;
                          T* gx = need_x ? px.grad_buffer().data() : nullptr;
                          T* gw = need_w ? pw.grad_buffer().data() : nullptr;
                          visit([&](std::size_t o, std::size_t i, std::size_t k) {
                            for (std::size_t c = 0; c < C; ++c) {
                              if (need_x) gx[i + c] += g[o + c] * pw.value[k + c];
                              if (need_w) gw[k + c] += g[o + c] * px.value[i + c];
                            }
                          });
                          if (has_bias && nd.parents[2]->requires_grad) {
                            auto gb = nd.parents[2]->grad_buffer();
                            for (std::size_t p = 0; p < Ho * Wo; ++p)
                              for (std::size_t c = 0; c < C; ++c) gb[c] += g[p * C + c];
                          }
                        }));
}

template <class T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                           std::size_t stride, std::size_t pad) {
  require_rank("conv_transpose2d", x.shape(), 3);
  require_rank("conv_transpose2d", w.shape(), 4);
  const std::size_t H = x.dim(0), W = x.dim(1), Ci = x.dim(2);
  const std::size_t KH = w.dim(0), KW = w.dim(1), Co = w.dim(3);
  if (w.dim(2) != Ci) shape_fail("conv_transpose2d", x.shape(), w.shape());
  if (stride == 0) throw ShapeError("conv_transpose2d: stride must be positive");
  const bool has_bias = bias.defined();
  if (has_bias && bias.shape() != Shape{Co})
    shape_fail("conv_transpose2d bias", w.shape(), bias.shape());
  if ((H - 1) * stride + KH < 2 * pad + 1 || (W - 1) * stride + KW < 2 * pad + 1)
    throw ShapeError("conv_transpose2d: padding consumes the whole output");
  const std::size_t Ho = (H - 1) * stride + KH - 2 * pad;
  const std::size_t Wo = (W - 1) * stride + KW - 2 * pad;
  auto xv = x.values();
  auto wv = w.values();
  std::vector<T> out(Ho * Wo * Co, T(0));
  auto visit = [=](auto&& f) {
    for (std::size_t ih = 0; ih < H; ++ih)
      for (std::size_t kh = 0; kh < KH; ++kh) {
        const std::ptrdiff_t oh = std::ptrdiff_t(ih * stride + kh) - std::ptrdiff_t(pad);
        if (oh < 0 || oh >= std::ptrdiff_t(Ho)) continue;
        for (std::size_t iw = 0; iw < W; ++iw)
          for (std::size_t kw = 0; kw < KW; ++kw) {
            const std::ptrdiff_t ow = std::ptrdiff_t(iw * stride + kw) - std::ptrdiff_t(pad);
            if (ow < 0 || ow >= std::ptrdiff_t(Wo)) continue;
            f((std::size_t(oh) * Wo + std::size_t(ow)) * Co, (ih * W + iw) * Ci,
              (kh * KW + kw) * Ci * Co);
          }
      }
  };
  if (has_bias)
    for (std::size_t p = 0; p < Ho * Wo; ++p)
      std::copy(bias.values().begin(), bias.values().end(), &out[p * Co]);
  visit([&](std::size_t o, std::size_t i, std::size_t k) {
    for (std::size_t ci = 0; ci < Ci; ++ci) {
      const T xval = xv[i + ci];
      const T* wrow = &wv[k + ci * Co];
      for (std::size_t co = 0; co < Co; ++co) out[o + co] += xval * wrow[co];
    }
  });
  std::vector<Tensor<T>> parents{x, w};
  if (has_bias) parents.push_back(bias);
  return make_result<T>({Ho, Wo, Co}, std::move(out), parents, "conv_transpose2d",
                        Fn<T>([visit, Ci, Co, Ho, Wo, has_bias](Node<T>& nd) {
                          auto& px = *nd.parents[0];
                          auto& pw = *nd.parents[1];
                          const T* g = nd.grad.data();
                          const bool need_x = px.requires_grad, need_w = pw.requires_grad;
                          T* gx = need_x ? px.grad_buffer().data() : nullptr;
                          T* gw = need_w ? pw.grad_buffer().data() : nullptr;
                          visit([&](std::size_t o, std::size_t i, std::size_t k) {
                            for (std::size_t ci = 0; ci < Ci; ++ci) {
                              const T* wrow = &pw.value[k + ci * Co];
                              if (need_x) {
                                T acc = 0;
                                for (std::size_t co = 0; co < Co; ++co) acc += g[o + co] * wrow[co];
                                gx[i + ci] += acc;
                              }
                              if (need_w) {
                                const T xval = px.value[i + ci];
                                T* gwrow = gw + k + ci * Co;
                                for (std::size_t co = 0; co < Co; ++co) gwrow[co] += xval * g[o + co];
                              }
                            }
                          });
                          if (has_bias && nd.parents[2]->requires_grad) {
                            auto gb = nd.parents[2]->grad_buffer();
                            for (std::size_t p = 0; p < Ho * Wo; ++p)
                              for (std::size_t co = 0; co < Co; ++co) gb[co] += g[p * Co + co];
                          }
                        }));
}

template <class T>
Tensor<T> avg_pool2d(const Tensor<T>& x, std::size_t kh, std::size_t kw, std::size_t sh,
                     std::size_t sw) {
  require_rank("avg_pool2d", x.shape(), 3);
  const std::size_t H = x.dim(0), W = x.dim(1), C = x.dim(2);
  const std::size_t Ho = conv_out("avg_pool2d", H, kh, sh, 0);
  const std::size_t Wo = conv_out("avg_pool2d", W, kw, sw, 0);
  const T inv = T(1) / T(kh * kw);
  auto xv = x.values();
  std::vector<T> out(Ho * Wo * C, T(0));
  auto visit = [=](auto&& f) {
    for (std::size_t oh = 0; oh < Ho; ++oh)
      for (std::size_t ow = 0; ow < Wo; ++ow)
        for (std::size_t a = 0; a < kh; ++a)
          for (std::size_t b = 0; b < kw; ++b)
            f((oh * Wo + ow) * C, ((oh * sh + a) * W + ow * sw + b) * C);
  };
  visit([&](std::size_t o, std::size_t i) {
    for (std::size_t c = 0; c < C; ++c) out[o + c] += xv[i + c] * inv;
  });
  return make_result<T>({Ho, Wo, C}, std::move(out), {x}, "avg_pool2d",
                        Fn<T>([visit, C, inv](Node<T>& nd) {
                          auto gx = nd.parents[0]->grad_buffer();
                          visit([&](std::size_t o, std::size_t i) {
                            for (std::size_t c = 0; c < C; ++c) gx[i + c] += nd.grad[o + c] * inv;
                          });
                        }));
}

template <class T>
Tensor<T> pad2d(const Tensor<T>& x, std::size_t top, std::size_t bottom, std::size_t left,
                std::size_t right) {
  require_rank("pad2d", x.shape(), 3);
  const std::size_t H = x.dim(0), W = x.dim(1), C = x.dim(2);
  if (top + bottom + left + right == 0) return x;
  const std::size_t Ho = H + top + bottom, Wo = W + left + right;
  auto xv = x.values();
  std::vector<T> out(Ho * Wo * C, T(0));
  for (std::size_t i = 0; i < H; ++i)
    std::copy_n(&xv[i * W * C], W * C, &out[((i + top) * Wo + left) * C]);
  return make_result<T>({Ho, Wo, C}, std::move(out), {x}, "pad2d",
                        Fn<T>([=](Node<T>& nd) {
                          auto gx = nd.parents[0]->grad_buffer();
                          for (std::size_t i = 0; i < H; ++i)
                            for (std::size_t j = 0; j < W * C; ++j)
                              gx[i * W * C + j] += nd.grad[((i + top) * Wo + left) * C + j];
                        }));
}

template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& xs, std::size_t axis) {
  if (xs.empty()) throw ShapeError("concat: empty input list");
  const Shape& s0 = xs[0].shape();
  if (axis >= s0.size()) throw ShapeError("concat: axis out of range for " + to_string(s0));
  Shape out_shape = s0;
  out_shape[axis] = 0;
  for (const auto& t : xs) {
    const Shape& s = t.shape();
    if (s.size() != s0.size()) shape_fail("concat", s0, s);
    for (std::size_t k = 0; k < s.size(); ++k)
      if (k != axis && s[k] != s0[k]) shape_fail("concat", s0, s);
    out_shape[axis] += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t k = 0; k < axis; ++k) outer *= s0[k];
  for (std::size_t k = axis + 1; k < s0.size(); ++k) inner *= s0[k];
  const std::size_t row = out_shape[axis] * inner;
  std::vector<T> out(numel(out_shape));
  std::vector<std::size_t> widths, offsets;
  std::size_t off = 0;
  for (const auto& t : xs) {
    const std::size_t w = t.dim(axis) * inner;
    widths.push_back(w);
    offsets.push_back(off);
    auto v = t.values();
    for (std::size_t o = 0; o < outer; ++o) std::copy_n(&v[o * w], w, &out[o * row + off]);
    off += w;
  }
  return make_result<T>(std::move(out_shape), std::move(out), xs, "concat",
                        Fn<T>([outer, row, widths, offsets](Node<T>& nd) {
                          for (std::size_t p = 0; p < nd.parents.size(); ++p) {
                            if (!nd.parents[p]->requires_grad) continue;
                            auto g = nd.parents[p]->grad_buffer();
                            const std::size_t w = widths[p];
                            for (std::size_t o = 0; o < outer; ++o)
                              for (std::size_t j = 0; j < w; ++j)
                                g[o * w + j] += nd.grad[o * row + offsets[p] + j];
                          }
                        }));
}

template <class T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t begin, std::size_t end) {
  const Shape& s = x.shape();
  if (axis >= s.size() || begin > end || end > s[axis])
    throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") on axis " + std::to_string(axis) + " invalid for " + to_string(s));
  std::size_t outer = 1, inner = 1;
  for (std::size_t k = 0; k < axis; ++k) outer *= s[k];
  for (std::size_t k = axis + 1; k < s.size(); ++k) inner *= s[k];
  const std::size_t in_row = s[axis] * inner, w = (end - begin) * inner, off = begin * inner;
  Shape out_shape = s;
  out_shape[axis] = end - begin;
  auto v = x.values();
  std::vector<T> out(outer * w);
  for (std::size_t o = 0; o < outer; ++o) std::copy_n(&v[o * in_row + off], w, &out[o * w]);
  return make_result<T>(std::move(out_shape), std::move(out), {x}, "slice",
                        Fn<T>([outer, in_row, w, off](Node<T>& nd) {
                          auto g = nd.parents[0]->grad_buffer();
                          for (std::size_t o = 0; o < outer; ++o)
                            for (std::size_t j = 0; j < w; ++j)
                              g[o * in_row + off + j] += nd.grad[o * w + j];
                        }));
}

template <class T>
Tensor<T> reshape(const Tensor<T>& x, const Shape& shape) {
  if (numel(shape) != x.numel()) shape_fail("reshape", x.shape(), shape);
  std::vector<T> out(x.values().begin(), x.values().end());
  return make_result<T>(shape, std::move(out), {x}, "reshape", Fn<T>([](Node<T>& nd) {
                          auto g = nd.parents[0]->grad_buffer();
                          for (std::size_t i = 0; i < g.size(); ++i) g[i] += nd.grad[i];
                        }));
}

template <class T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& perm) {
  const Shape& s = x.shape();
  std::vector<bool> used(s.size(), false);
  if (perm.size() != s.size()) throw ShapeError("permute: axis list does not match " + to_string(s));
  for (auto p : perm) {
    if (p >= s.size() || used[p]) throw ShapeError("permute: invalid axis permutation");
    used[p] = true;
  }
  const auto in_st = strides_of(s);
  Shape out_shape(s.size());
  std::vector<std::size_t> st(s.size());
  for (std::size_t k = 0; k < s.size(); ++k) {
    out_shape[k] = s[perm[k]];
    st[k] = in_st[perm[k]];
  }
  auto v = x.values();
  std::vector<T> out(v.size());
  for_each_strided(out_shape, st, [&](std::size_t o, std::size_t i) { out[o] = v[i]; });
  return make_result<T>(out_shape, std::move(out), {x}, "permute",
                        Fn<T>([out_shape, st](Node<T>& nd) {
                          auto g = nd.parents[0]->grad_buffer();
                          for_each_strided(out_shape, st,
                                           [&](std::size_t o, std::size_t i) { g[i] += nd.grad[o]; });
                        }));
}

template <class T>
Tensor<T> gather_rows(const Tensor<T>& x, const std::vector<std::size_t>& index) {
  if (x.rank() == 0) throw ShapeError("gather_rows: scalar input");
  const std::size_t rows = x.dim(0), width = x.numel() / std::max<std::size_t>(rows, 1);
  for (auto r : index)
    if (r >= rows)
      throw ShapeError("gather_rows: index " + std::to_string(r) + " out of range for " +
                       to_string(x.shape()));
  Shape out_shape = x.shape();
  out_shape[0] = index.size();
  auto v = x.values();
  std::vector<T> out(index.size() * width);
  for (std::size_t i = 0; i < index.size(); ++i)
    std::copy_n(&v[index[i] * width], width, &out[i * width]);
  return make_result<T>(std::move(out_shape), std::move(out), {x}, "gather_rows",
                        Fn<T>([index, width](Node<T>& nd) {
                          auto g = nd.parents[0]->grad_buffer();
                          for (std::size_t i = 0; i < index.size(); ++i)
                            for (std::size_t j = 0; j < width; ++j)
                              g[index[i] * width + j] += nd.grad[i * width + j];
                        }));
}

template <class T>
Tensor<T> sum(const Tensor<T>& x, const std::vector<std::size_t>& axes, bool keepdim) {
  const Shape& s = x.shape();
  std::vector<bool> reduce(s.size(), false);
  for (auto a : axes) {
    if (a >= s.size()) throw ShapeError("sum: axis out of range for " + to_string(s));
    reduce[a] = true;
  }
  Shape kept = s;
  Shape out_shape;
  for (std::size_t k = 0; k < s.size(); ++k) {
    if (reduce[k]) kept[k] = 1;
    if (!reduce[k] || keepdim) out_shape.push_back(kept[k]);
  }
  auto kst = strides_of(kept);
  for (std::size_t k = 0; k < s.size(); ++k)
    if (reduce[k]) kst[k] = 0;
  auto v = x.values();
  std::vector<T> out(numel(kept), T(0));
  for_each_strided(s, kst, [&](std::size_t i, std::size_t o) { out[o] += v[i]; });
  return make_result<T>(std::move(out_shape), std::move(out), {x}, "sum",
                        Fn<T>([s, kst](Node<T>& nd) {
                          auto g = nd.parents[0]->grad_buffer();
                          for_each_strided(s, kst,
                                           [&](std::size_t i, std::size_t o) { g[i] += nd.grad[o]; });
                        }));
}

template <class T>
Tensor<T> mean(const Tensor<T>& x, const std::vector<std::size_t>& axes, bool keepdim) {
  std::size_t count = 1;
  for (auto a : axes) {
    if (a >= x.rank()) throw ShapeError("mean: axis out of range for " + to_string(x.shape()));
    count *= x.dim(a);
  }
  return scale(sum(x, axes, keepdim), T(1) / T(std::max<std::size_t>(count, 1)));
}

template <class T>
Tensor<T> sum_all(const Tensor<T>& x) {
  std::vector<std::size_t> axes(x.rank());
  std::iota(axes.begin(), axes.end(), std::size_t{0});
  return sum(x, axes, false);
}

template <class T>
Tensor<T> mean_all(const Tensor<T>& x) {
  return scale(sum_all(x), T(1) / T(std::max<std::size_t>(x.numel(), 1)));
}

template <class T>
Tensor<T> layernorm(const Tensor<T>& x, T eps) {
  if (x.rank() == 0) throw ShapeError("layernorm: scalar input");
  const std::size_t n = x.shape().back(), rows = x.numel() / std::max<std::size_t>(n, 1);
  auto v = x.values();
  std::vector<T> out(v.size()), rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = &v[r * n];
    T mu = 0;
    for (std::size_t j = 0; j < n; ++j) mu += row[j];
    mu /= T(n);
    T var = 0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= T(n);
    rstd[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = (row[j] - mu) * rstd[r];
  }
  return make_result<T>(x.shape(), std::move(out), {x}, "layernorm",
                        Fn<T>([n, rows, rstd = std::move(rstd)](Node<T>& nd) {
                          auto g = nd.parents[0]->grad_buffer();
                          for (std::size_t r = 0; r < rows; ++r) {
                            const T* gy = &nd.grad[r * n];
                            const T* xh = &nd.value[r * n];
                            T mg = 0, mgx = 0;
                            for (std::size_t j = 0; j < n; ++j) {
                              mg += gy[j];
                              mgx += gy[j] * xh[j];
                            }
                            mg /= T(n);
                            mgx /= T(n);
                            for (std::size_t j = 0; j < n; ++j)
                              g[r * n + j] += rstd[r] * (gy[j] - mg - xh[j] * mgx);
                          }
                        }));
}

#define DHM_INSTANTIATE_OPS(T)                                                                   \
  template Tensor<T> broadcast_to(const Tensor<T>&, const Shape&);                               \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> div(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> neg(const Tensor<T>&);                                                      \
  template Tensor<T> scale(const Tensor<T>&, T);                                                 \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                            \
  template Tensor<T> exp(const Tensor<T>&);                                                      \
  template Tensor<T> sqrt(const Tensor<T>&);                                                     \
  template Tensor<T> softplus(const Tensor<T>&);                                                 \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                  \
  template Tensor<T> silu(const Tensor<T>&);                                                     \
  template Tensor<T> gelu(const Tensor<T>&);                                                     \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);               \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t,   \
                            std::size_t);                                                        \
  template Tensor<T> depthwise_conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,      \
                                      std::size_t, std::size_t);                                 \
  template Tensor<T> conv_transpose2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,      \
                                      std::size_t, std::size_t);                                 \
  template Tensor<T> avg_pool2d(const Tensor<T>&, std::size_t, std::size_t, std::size_t,         \
                                std::size_t);                                                    \
  template Tensor<T> pad2d(const Tensor<T>&, std::size_t, std::size_t, std::size_t,              \
                           std::size_t);                                                         \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, std::size_t);                         \
  template Tensor<T> slice(const Tensor<T>&, std::size_t, std::size_t, std::size_t);             \
  template Tensor<T> reshape(const Tensor<T>&, const Shape&);                                    \
  template Tensor<T> permute(const Tensor<T>&, const std::vector<std::size_t>&);                 \
  template Tensor<T> gather_rows(const Tensor<T>&, const std::vector<std::size_t>&);             \
  template Tensor<T> sum(const Tensor<T>&, const std::vector<std::size_t>&, bool);               \
  template Tensor<T> mean(const Tensor<T>&, const std::vector<std::size_t>&, bool);              \
  template Tensor<T> sum_all(const Tensor<T>&);                                                  \
  template Tensor<T> mean_all(const Tensor<T>&);                                                 \
  template Tensor<T> layernorm(const Tensor<T>&, T);

DHM_INSTANTIATE_OPS(float)
DHM_INSTANTIATE_OPS(double)

#undef DHM_INSTANTIATE_OPS

}  // namespace dhm::ops
