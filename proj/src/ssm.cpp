#include "dhm/ssm.hpp"

#include <algorithm>
#include <cmath>

#include "dhm/ops.hpp"

namespace dhm::ssm {

template <class T>
Tensor<T> SsmParams<T>::a() const {
  return ops::neg(ops::exp(log_a));
}

template <class T>
SsmParams<T> make_ssm_params(ParameterSet<T>& params, const std::string& prefix,
                             std::size_t channels, std::size_t state_dim, Rng& rng) {
  const std::size_t D = channels, S = state_dim;
  std::vector<T> log_a(D * S);
  for (std::size_t d = 0; d < D; ++d)
    for (std::size_t s = 0; s < S; ++s) {
      // |A| log-spaced over [1e-2, 1]
      const double frac = S > 1 ? double(s) / double(S - 1) : 1.0;
      log_a[d * S + s] = static_cast<T>(std::log(1e-2) * (1.0 - frac));
    }
  std::uniform_real_distribution<double> ud(std::log(1e-3), std::log(1e-1));
  std::vector<T> dt_bias(D);
  for (auto& e : dt_bias) {
    const double dt = std::exp(ud(rng));
    e = static_cast<T>(dt + std::log(-std::expm1(-dt)));  // softplus^-1(dt)
  }
  SsmParams<T> p;
  p.log_a = params.add(prefix + ".log_a", {D, S}, std::move(log_a));
  p.dt_bias = params.add(prefix + ".dt_bias", {D}, std::move(dt_bias));
  p.skip = params.add_constant(prefix + ".skip", {D}, T(1));
  p.proj_b = params.add_trunc_normal(prefix + ".proj_b", {D, S}, T(0.02), rng);
  p.proj_c = params.add_trunc_normal(prefix + ".proj_c", {D, S}, T(0.02), rng);
  p.proj_delta = params.add_trunc_normal(prefix + ".proj_delta", {D, D}, T(0.02), rng);
  return p;
}

template <class T>
ContinuousParams<T> generate_params(const Tensor<T>& seq, const SsmParams<T>& p) {
  if (seq.rank() != 3 || seq.dim(2) != p.channels())
    throw ShapeError("generate_params: sequence " + to_string(seq.shape()) +
                     " does not match projection " + to_string(p.proj_delta.shape()));
  const Tensor<T> none;
  ContinuousParams<T> out;
  out.b = ops::linear(seq, p.proj_b, none);
  out.c = ops::linear(seq, p.proj_c, none);
  out.delta = ops::softplus(ops::add(ops::linear(seq, p.proj_delta, none), p.dt_bias));
  return out;
}

template <class T>
Tensor<T> selective_scan(const Tensor<T>& u, const Tensor<T>& delta, const Tensor<T>& a,
                         const Tensor<T>& b, const Tensor<T>& c, const Tensor<T>& skip,
                         const ScanOptions& opts) {
  if (u.rank() != 3 || delta.shape() != u.shape() || a.rank() != 2 || b.rank() != 3 ||
      c.shape() != b.shape() || skip.rank() != 1)
    throw ShapeError("selective_scan: inconsistent shapes u" + to_string(u.shape()) + " delta" +
                     to_string(delta.shape()) + " A" + to_string(a.shape()) + " B" +
                     to_string(b.shape()) + " C" + to_string(c.shape()));
  const ScanDims dims{u.dim(0), u.dim(1), u.dim(2), a.dim(1)};
  if (a.dim(0) != dims.channels || b.dim(0) != dims.groups || b.dim(1) != dims.length ||
      b.dim(2) != dims.state || skip.dim(0) != dims.channels)
    throw ShapeError("selective_scan: parameter shapes A" + to_string(a.shape()) + " B" +
                     to_string(b.shape()) + " do not match sequence " + to_string(u.shape()));
  const FusedInputs<T> in{u.values(), delta.values(), a.values(),
                          b.values(), c.values(),     skip.values()};
  const bool track = !NoGradGuard::active() &&
                     (u.requires_grad() || delta.requires_grad() || a.requires_grad() ||
                      b.requires_grad() || c.requires_grad() || skip.requires_grad());
  std::vector<T> states;
  auto y = fused_scan_forward<T>(in, dims, opts, track ? &states : nullptr);
  return make_result<T>(
      u.shape(), std::move(y), {u, delta, a, b, c, skip}, "selective_scan",
      std::function<void(Node<T>&)>([dims, opts, states = std::move(states)](Node<T>& n) {
        auto& P = n.parents;
        const FusedInputs<T> fin{P[0]->value, P[1]->value, P[2]->value,
                                 P[3]->value, P[4]->value, P[5]->value};
        auto gr = fused_scan_backward<T>(fin, states, n.grad, dims, opts);
        const std::vector<T>* grads[6] = {&gr.u, &gr.delta, &gr.a, &gr.b, &gr.c, &gr.skip};
        for (std::size_t i = 0; i < 6; ++i) {
          if (!P[i]->requires_grad) continue;
          auto g = P[i]->grad_buffer();
          for (std::size_t j = 0; j < g.size(); ++j) g[j] += (*grads[i])[j];
        }
      }));
}

template <class T>
Tensor<T> hsi_ssm_direction(const Tensor<T>& seq, const SsmParams<T>& p,
                            const ScanOptions& opts) {
  auto cp = generate_params(seq, p);
  return selective_scan(seq, cp.delta, p.a(), cp.b, cp.c, p.skip, opts);
}

std::size_t ScanLayout::groups() const {
  return window == 0 ? 1 : (height / window) * (width / window);
}

std::size_t ScanLayout::length() const {
  return window == 0 ? height * width : window * window;
}

void ScanLayout::validate() const {
  if (height == 0 || width == 0) throw ShapeError("scan layout: empty feature map");
  if (window != 0 && (height % window != 0 || width % window != 0))
    throw ShapeError("scan layout: window " + std::to_string(window) +
                     " does not divide feature extents " + std::to_string(height) + "x" +
                     std::to_string(width));
}

namespace {

// Directional orders over an h x w grid, as local indices r * w + c.
std::array<std::vector<std::size_t>, 4> grid_orders(std::size_t h, std::size_t w) {
  std::array<std::vector<std::size_t>, 4> out;
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) {
      out[0].push_back(r * w + c);
      out[1].push_back(r * w + (w - 1 - c));
    }
  out[2].assign(out[0].rbegin(), out[0].rend());
  out[3].assign(out[1].rbegin(), out[1].rend());
  return out;
}

std::vector<std::size_t> inverse(const std::vector<std::size_t>& perm) {
  std::vector<std::size_t> inv(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) inv[perm[i]] = i;
  return inv;
}

}  // namespace

std::array<std::vector<std::size_t>, 4> scan_paths(const ScanLayout& layout) {
  layout.validate();
  if (layout.window == 0) return grid_orders(layout.height, layout.width);
  const std::size_t N = layout.window, W = layout.width;
  const std::size_t tiles_w = W / N, tiles = layout.groups();
  const auto local = grid_orders(N, N);
  std::array<std::vector<std::size_t>, 4> out;
  for (std::size_t u = 0; u < 4; ++u) {
    out[u].reserve(layout.height * W);
    for (std::size_t g = 0; g < tiles; ++g) {
      const std::size_t r0 = (g / tiles_w) * N, c0 = (g % tiles_w) * N;
      for (auto li : local[u]) out[u].push_back((r0 + li / N) * W + c0 + li % N);
    }
  }
  return out;
}

template <class T>
std::array<Tensor<T>, 4> cross_scan(const Tensor<T>& feature, std::size_t window) {
  if (feature.rank() != 3) throw ShapeError("cross_scan: expected (H, W, D), got " +
                                            to_string(feature.shape()));
  const ScanLayout layout{feature.dim(0), feature.dim(1), window};
  const auto paths = scan_paths(layout);
  const std::size_t D = feature.dim(2);
  const auto flat = ops::reshape(feature, {layout.height * layout.width, D});
  std::array<Tensor<T>, 4> out;
  for (std::size_t u = 0; u < 4; ++u)
    out[u] = ops::reshape(ops::gather_rows(flat, paths[u]),
                          {layout.groups(), layout.length(), D});
  return out;
}

template <class T>
Tensor<T> cross_merge(const std::array<Tensor<T>, 4>& seqs, const ScanLayout& layout) {
  const auto paths = scan_paths(layout);
  const Shape expect{layout.groups(), layout.length(), seqs[0].rank() == 3 ? seqs[0].dim(2) : 0};
  for (const auto& s : seqs)
    if (s.shape() != expect)
      throw ShapeError("cross_merge: batch " + to_string(s.shape()) + " does not match layout " +
                       to_string(expect));
  const std::size_t D = expect[2], n = layout.height * layout.width;
  std::array<Tensor<T>, 4> maps;
  for (std::size_t u = 0; u < 4; ++u)
    maps[u] = ops::gather_rows(ops::reshape(seqs[u], {n, D}), inverse(paths[u]));
  // pairwise so that four identical inputs sum to exactly 4x
  auto total = ops::add(ops::add(maps[0], maps[1]), ops::add(maps[2], maps[3]));
  return ops::reshape(total, {layout.height, layout.width, D});
}

#define DHM_INSTANTIATE_SSM(T)                                                                 \
  template struct SsmParams<T>;                                                                \
  template SsmParams<T> make_ssm_params<T>(ParameterSet<T>&, const std::string&, std::size_t,  \
                                           std::size_t, Rng&);                                 \
  template ContinuousParams<T> generate_params<T>(const Tensor<T>&, const SsmParams<T>&);      \
  template Tensor<T> selective_scan<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,   \
                                       const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,   \
                                       const ScanOptions&);                                    \
  template Tensor<T> hsi_ssm_direction<T>(const Tensor<T>&, const SsmParams<T>&,               \
                                          const ScanOptions&);                                 \
  template std::array<Tensor<T>, 4> cross_scan<T>(const Tensor<T>&, std::size_t);              \
  template Tensor<T> cross_merge<T>(const std::array<Tensor<T>, 4>&, const ScanLayout&);

DHM_INSTANTIATE_SSM(float)
DHM_INSTANTIATE_SSM(double)

#undef DHM_INSTANTIATE_SSM

}  // namespace dhm::ssm
