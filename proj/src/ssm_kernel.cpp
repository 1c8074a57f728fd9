#include "dhm/ssm_kernel.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <string>

#include "dhm/common.hpp"
#include "dhm/parallel.hpp"

namespace dhm::ssm {

namespace {

template <class T>
void check_span(const char* name, std::span<const T> s, std::size_t expected) {
  if (s.size() != expected)
    throw ShapeError(std::string("selective scan: ") + name + " has " + std::to_string(s.size()) +
                     " values, expected " + std::to_string(expected));
}

std::size_t resolve_threads(const ScanOptions& o) {
  return o.threads ? o.threads : thread_count();
}

// Number of L-chunks for the parallel scan; at least two so the carry
// propagation path is always exercised.
std::size_t resolve_chunks(const ScanOptions& o, std::size_t length) {
  if (o.algo == ScanAlgo::sequential) return 1;
  std::size_t p = o.chunks ? o.chunks : std::max<std::size_t>(2, resolve_threads(o));
  return std::clamp<std::size_t>(p, 1, length);
}

struct Chunking {
  std::size_t count;
  std::size_t len;
  Chunking(std::size_t length, std::size_t wanted)
      : count(0), len((length + wanted - 1) / wanted) {
    count = (length + len - 1) / len;
  }
  std::size_t begin(std::size_t c) const { return c * len; }
  std::size_t end(std::size_t c, std::size_t length) const { return std::min(length, (c + 1) * len); }
};

// Forward scan shared by the precomputed and fused kernels. `coef(g, k, d, s,
// a, bb)` yields the discrete transition and input gain for one lane.
template <class T, class Coef>
void forward_core(const ScanDims& dm, std::span<const T> u, std::span<const T> c,
                  std::span<const T> skip, const Coef& coef, std::span<T> y, T* states,
                  const ScanOptions& opts) {
  const std::size_t G = dm.groups, L = dm.length, D = dm.channels, S = dm.state;
  const std::size_t W = D * S;
  const std::size_t threads = resolve_threads(opts);
  const Chunking ch(L, resolve_chunks(opts, L));
  const std::size_t P = ch.count;

  // Carry-in state for every (group, chunk); zero for the first chunk.
  std::vector<T> carry(G * P * W, T(0));

  if (P > 1) {
    std::vector<T> agg_a(G * P * W, T(1)), agg_b(G * P * W, T(0));
    parallel_for(
        G * P,
        [&](std::size_t lo, std::size_t hi) {
          for (std::size_t item = lo; item < hi; ++item) {
            const std::size_t g = item / P, cc = item % P;
            T* aa = &agg_a[item * W];
            T* ab = &agg_b[item * W];
            for (std::size_t k = ch.begin(cc); k < ch.end(cc, L); ++k)
              for (std::size_t d = 0; d < D; ++d) {
                const T x = u[(g * L + k) * D + d];
                for (std::size_t s = 0; s < S; ++s) {
                  T a, bb;
                  coef(g, k, d, s, a, bb);
                  aa[d * S + s] *= a;
                  ab[d * S + s] = a * ab[d * S + s] + bb * x;
                }
              }
          }
        },
        threads);
    for (std::size_t g = 0; g < G; ++g) {
      std::span<T> ga(&agg_a[g * P * W], P * W), gb(&agg_b[g * P * W], P * W);
      blelloch_exclusive_scan<T>(ga, gb, P, W);
      // h_0 = 0, so the carried state is the offset part of the prefix map.
      std::copy(gb.begin(), gb.end(), &carry[g * P * W]);
    }
  }

  parallel_for(
      G * P,
      [&](std::size_t lo, std::size_t hi) {
        std::vector<T> h(W);
        for (std::size_t item = lo; item < hi; ++item) {
          const std::size_t g = item / P, cc = item % P;
          std::copy_n(&carry[item * W], W, h.begin());
          for (std::size_t k = ch.begin(cc); k < ch.end(cc, L); ++k) {
            const T* ck = &c[(g * L + k) * S];
            for (std::size_t d = 0; d < D; ++d) {
              const std::size_t pos = (g * L + k) * D + d;
              const T x = u[pos];
              T acc = 0;
              for (std::size_t s = 0; s < S; ++s) {
                T a, bb;
                coef(g, k, d, s, a, bb);
                T& hs = h[d * S + s];
                hs = a * hs + bb * x;
                acc += ck[s] * hs;
              }
              if (states) std::copy_n(&h[d * S], S, states + pos * S);
              y[pos] = acc + skip[d] * x;
            }
          }
        }
      },
      threads);
}

template <class T>
struct FusedCoef {
  std::span<const T> delta, a, b;
  std::size_t L, D, S;
  void operator()(std::size_t g, std::size_t k, std::size_t d, std::size_t s, T& abar,
                  T& bbar) const {
    const T dt = delta[(g * L + k) * D + d];
    const T av = a[d * S + s];
    const T z = dt * av;
    abar = std::exp(z);
    bbar = std::expm1(z) / av * b[(g * L + k) * S + s];
  }
};

template <class T>
void validate_fused(const FusedInputs<T>& in, const ScanDims& dm) {
  check_span<T>("u", in.u, dm.seq_elems());
  check_span<T>("delta", in.delta, dm.seq_elems());
  check_span<T>("A", in.a, dm.channels * dm.state);
  check_span<T>("B", in.b, dm.groups * dm.length * dm.state);
  check_span<T>("C", in.c, dm.groups * dm.length * dm.state);
  check_span<T>("skip", in.skip, dm.channels);
}

}  // namespace

template <class T>
T zoh_input_gain_dA(T dt, T a) {
  const T z = dt * a;
  if (std::abs(z) < T(1e-4)) {
    // (z e^z - expm1 z) / z^2 = 1/2 + z/3 + z^2/8 + ...
    return dt * dt * (T(0.5) + z * (T(1) / T(3) + z * T(0.125)));
  }
  return (dt * std::exp(z) * a - std::expm1(z)) / (a * a);
}

template <class T>
void blelloch_exclusive_scan(std::span<T> a, std::span<T> b, std::size_t positions,
                             std::size_t width) {
  if (a.size() != positions * width || b.size() != positions * width)
    throw ShapeError("blelloch_exclusive_scan: buffers do not match positions x width");
  if (positions == 0) return;
  const std::size_t n = std::bit_ceil(positions);
  std::vector<T> A(n * width, T(1)), B(n * width, T(0));
  std::copy(a.begin(), a.end(), A.begin());
  std::copy(b.begin(), b.end(), B.begin());
  // combine(earlier, later) into later's slot
  auto combine_into = [&](std::size_t earlier, std::size_t later) {
    for (std::size_t w = 0; w < width; ++w) {
      const T a1 = A[earlier * width + w], b1 = B[earlier * width + w];
      T& a2 = A[later * width + w];
      T& b2 = B[later * width + w];
      b2 = a2 * b1 + b2;
      a2 = a2 * a1;
    }
  };
  for (std::size_t d = 1; d < n; d *= 2)
    for (std::size_t i = 2 * d - 1; i < n; i += 2 * d) combine_into(i - d, i);
  std::fill_n(&A[(n - 1) * width], width, T(1));
  std::fill_n(&B[(n - 1) * width], width, T(0));
  std::vector<T> ta(width), tb(width);
  for (std::size_t d = n / 2; d >= 1; d /= 2) {
    for (std::size_t i = 2 * d - 1; i < n; i += 2 * d) {
      const std::size_t l = i - d;
      std::copy_n(&A[l * width], width, ta.begin());
      std::copy_n(&B[l * width], width, tb.begin());
      std::copy_n(&A[i * width], width, &A[l * width]);
      std::copy_n(&B[i * width], width, &B[l * width]);
      // right slot: prefix-before-left, then left subtree
      for (std::size_t w = 0; w < width; ++w) {
        const T pa = A[i * width + w], pb = B[i * width + w];
        A[i * width + w] = ta[w] * pa;
        B[i * width + w] = ta[w] * pb + tb[w];
      }
    }
    if (d == 1) break;
  }
  std::copy_n(A.begin(), positions * width, a.begin());
  std::copy_n(B.begin(), positions * width, b.begin());
}

template <class T>
Discretized<T> discretize_zoh(std::span<const T> a, std::span<const T> b,
                              std::span<const T> delta, const ScanDims& dm) {
  const std::size_t G = dm.groups, L = dm.length, D = dm.channels, S = dm.state;
  check_span<T>("A", a, D * S);
  check_span<T>("B", b, G * L * S);
  check_span<T>("delta", delta, G * L * D);
  for (T v : delta)
    if (!(v > T(0))) throw Error("discretize_zoh: delta must be strictly positive");
  for (T v : a)
    if (!(v < T(0))) throw Error("discretize_zoh: A must be strictly negative");
  Discretized<T> out{std::vector<T>(dm.state_elems()), std::vector<T>(dm.state_elems())};
  for (std::size_t g = 0; g < G; ++g)
    for (std::size_t k = 0; k < L; ++k)
      for (std::size_t d = 0; d < D; ++d) {
        const T dt = delta[(g * L + k) * D + d];
        for (std::size_t s = 0; s < S; ++s) {
          const T z = dt * a[d * S + s];
          const std::size_t i = ((g * L + k) * D + d) * S + s;
          out.a_bar[i] = std::exp(z);
          out.b_bar[i] = std::expm1(z) / a[d * S + s] * b[(g * L + k) * S + s];
        }
      }
  return out;
}

template <class T>
std::vector<T> selective_scan(std::span<const T> u, std::span<const T> a_bar,
                              std::span<const T> b_bar, std::span<const T> c,
                              std::span<const T> skip, const ScanDims& dm,
                              const ScanOptions& opts) {
  check_span<T>("u", u, dm.seq_elems());
  check_span<T>("a_bar", a_bar, dm.state_elems());
  check_span<T>("b_bar", b_bar, dm.state_elems());
  check_span<T>("C", c, dm.groups * dm.length * dm.state);
  check_span<T>("skip", skip, dm.channels);
  const std::size_t L = dm.length, D = dm.channels, S = dm.state;
  auto coef = [&](std::size_t g, std::size_t k, std::size_t d, std::size_t s, T& a, T& bb) {
    const std::size_t i = ((g * L + k) * D + d) * S + s;
    a = a_bar[i];
    bb = b_bar[i];
  };
  std::vector<T> y(dm.seq_elems());
  forward_core<T>(dm, u, c, skip, coef, y, nullptr, opts);
  return y;
}

template <class T>
std::vector<T> fused_scan_forward(const FusedInputs<T>& in, const ScanDims& dm,
                                  const ScanOptions& opts, std::vector<T>* states) {
  validate_fused(in, dm);
  FusedCoef<T> coef{in.delta, in.a, in.b, dm.length, dm.channels, dm.state};
  std::vector<T> y(dm.seq_elems());
  if (states) states->assign(dm.state_elems(), T(0));
  forward_core<T>(dm, in.u, in.c, in.skip, coef, y, states ? states->data() : nullptr, opts);
  return y;
}

template <class T>
FusedGrads<T> fused_scan_backward(const FusedInputs<T>& in, std::span<const T> states,
                                  std::span<const T> grad_y, const ScanDims& dm,
                                  const ScanOptions& opts) {
  validate_fused(in, dm);
  check_span<T>("states", states, dm.state_elems());
  check_span<T>("grad_y", grad_y, dm.seq_elems());
  const std::size_t G = dm.groups, L = dm.length, D = dm.channels, S = dm.state;
  const std::size_t W = D * S;
  const std::size_t threads = resolve_threads(opts);
  const Chunking ch(L, resolve_chunks(opts, L));
  const std::size_t P = ch.count;
  const FusedCoef<T> coef{in.delta, in.a, in.b, L, D, S};

  FusedGrads<T> gr;
  gr.u.assign(dm.seq_elems(), T(0));
  gr.delta.assign(dm.seq_elems(), T(0));
  gr.b.assign(G * L * S, T(0));
  gr.c.assign(G * L * S, T(0));
  // Per-item partials of the shared parameters, reduced in item order below.
  std::vector<T> part_a(G * P * W, T(0)), part_skip(G * P * D, T(0));

  // Incoming state adjoint mu_{k1} for each chunk (from all later positions).
  std::vector<T> incoming(G * P * W, T(0));
  if (P > 1) {
    // Aggregates stored in reversed chunk order so the exclusive scan runs
    // from the end of the sequence towards the start.
    std::vector<T> agg_a(G * P * W, T(1)), agg_b(G * P * W, T(0));
    parallel_for(
        G * P,
        [&](std::size_t lo, std::size_t hi) {
          for (std::size_t item = lo; item < hi; ++item) {
            const std::size_t g = item / P, cc = item % P;
            const std::size_t slot = g * P + (P - 1 - cc);
            T* aa = &agg_a[slot * W];
            T* ab = &agg_b[slot * W];
            for (std::size_t k = ch.end(cc, L); k-- > ch.begin(cc);)
              for (std::size_t d = 0; d < D; ++d) {
                const T gy = grad_y[(g * L + k) * D + d];
                for (std::size_t s = 0; s < S; ++s) {
                  T a, bb;
                  coef(g, k, d, s, a, bb);
                  const T inject = a * in.c[(g * L + k) * S + s] * gy;
                  aa[d * S + s] *= a;
                  ab[d * S + s] = a * ab[d * S + s] + inject;
                }
              }
          }
        },
        threads);
    for (std::size_t g = 0; g < G; ++g) {
      std::span<T> ga(&agg_a[g * P * W], P * W), gb(&agg_b[g * P * W], P * W);
      blelloch_exclusive_scan<T>(ga, gb, P, W);
      for (std::size_t cc = 0; cc < P; ++cc)
        std::copy_n(&gb[(P - 1 - cc) * W], W, &incoming[(g * P + cc) * W]);
    }
  }

  parallel_for(
      G * P,
      [&](std::size_t lo, std::size_t hi) {
        std::vector<T> mu(W);
        for (std::size_t item = lo; item < hi; ++item) {
          const std::size_t g = item / P, cc = item % P;
          std::copy_n(&incoming[item * W], W, mu.begin());
          T* pa = &part_a[item * W];
          T* pskip = &part_skip[item * D];
          for (std::size_t k = ch.end(cc, L); k-- > ch.begin(cc);) {
            const std::size_t row = g * L + k;
            const T* ck = &in.c[row * S];
            const T* bk = &in.b[row * S];
            for (std::size_t d = 0; d < D; ++d) {
              const std::size_t pos = row * D + d;
              const T gy = grad_y[pos];
              const T x = in.u[pos];
              const T dt = in.delta[pos];
              const T* hk = &states[pos * S];
              const T* hprev = k > 0 ? &states[(pos - D) * S] : nullptr;
              T gx = in.skip[d] * gy;
              T gdt = 0;
              pskip[d] += gy * x;
              for (std::size_t s = 0; s < S; ++s) {
                const T av = in.a[d * S + s];
                const T z = dt * av;
                const T abar = std::exp(z);
                const T gain = std::expm1(z) / av;  // b_bar = gain * B
                const T lam = ck[s] * gy + mu[d * S + s];
                gr.c[row * S + s] += gy * hk[s];
                const T hp = hprev ? hprev[s] : T(0);
                const T bx = bk[s] * x;
                // d a_bar/d dt = A a_bar, d gain/d dt = a_bar
                gdt += lam * (hp * av * abar + bx * abar);
                pa[d * S + s] += lam * (hp * dt * abar + bx * zoh_input_gain_dA(dt, av));
                gr.b[row * S + s] += lam * gain * x;
                gx += lam * gain * bk[s];
                mu[d * S + s] = abar * lam;
              }
              gr.u[pos] += gx;
              gr.delta[pos] += gdt;
            }
          }
        }
      },
      threads);

  gr.a.assign(W, T(0));
  gr.skip.assign(D, T(0));
  for (std::size_t item = 0; item < G * P; ++item) {
    for (std::size_t w = 0; w < W; ++w) gr.a[w] += part_a[item * W + w];
    for (std::size_t d = 0; d < D; ++d) gr.skip[d] += part_skip[item * D + d];
  }
  return gr;
}

#define DHM_INSTANTIATE_SCAN(T)                                                               \
  template T zoh_input_gain_dA<T>(T, T);                                                      \
  template void blelloch_exclusive_scan<T>(std::span<T>, std::span<T>, std::size_t,           \
                                           std::size_t);                                      \
  template Discretized<T> discretize_zoh<T>(std::span<const T>, std::span<const T>,           \
                                            std::span<const T>, const ScanDims&);             \
  template std::vector<T> selective_scan<T>(std::span<const T>, std::span<const T>,           \
                                            std::span<const T>, std::span<const T>,           \
                                            std::span<const T>, const ScanDims&,              \
                                            const ScanOptions&);                              \
  template std::vector<T> fused_scan_forward<T>(const FusedInputs<T>&, const ScanDims&,       \
                                                const ScanOptions&, std::vector<T>*);         \
  template FusedGrads<T> fused_scan_backward<T>(const FusedInputs<T>&, std::span<const T>,    \
                                                std::span<const T>, const ScanDims&,          \
                                                const ScanOptions&);

DHM_INSTANTIATE_SCAN(float)
DHM_INSTANTIATE_SCAN(double)

#undef DHM_INSTANTIATE_SCAN

}  // namespace dhm::ssm
