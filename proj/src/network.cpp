#include "dhm/network.hpp"

#include <cmath>

#include "dhm/ops.hpp"

namespace dhm::net {

namespace {

// Fan-in scaled uniform for convolution kernels (KH, KW, Ci, Co) or
// depthwise kernels (KH, KW, C).
template <class T>
Tensor<T> conv_weight(ParameterSet<T>& params, const std::string& name, Shape shape, Rng& rng) {
  const double fan_in = double(shape[0] * shape[1] * (shape.size() == 4 ? shape[2] : 1));
  return params.add_uniform(name, std::move(shape), T(1.0 / std::sqrt(fan_in)), rng);
}

template <class T>
Tensor<T> zeros(ParameterSet<T>& params, const std::string& name, std::size_t n) {
  return params.add_constant(name, {n}, T(0));
}

template <class T>
Tensor<T> proj(ParameterSet<T>& params, const std::string& name, std::size_t in, std::size_t out,
               Rng& rng) {
  return params.add_trunc_normal(name, {in, out}, T(0.02), rng);
}

}  // namespace

template <class T>
NormAffine<T> make_norm(ParameterSet<T>& params, const std::string& prefix, std::size_t dim) {
  return {params.add_constant(prefix + ".gamma", {dim}, T(1)),
          params.add_constant(prefix + ".beta", {dim}, T(0))};
}

template <class T>
HsbWeights<T> make_hsb(ParameterSet<T>& params, const std::string& prefix, std::size_t dim,
                       std::size_t state_dim, Rng& rng) {
  HsbWeights<T> w;
  w.dw_w = conv_weight<T>(params, prefix + ".dw_w", {3, 3, dim}, rng);
  w.dw_b = zeros(params, prefix + ".dw_b", dim);
  w.pu_w = proj(params, prefix + ".pu_w", dim, dim, rng);
  w.pu_b = zeros(params, prefix + ".pu_b", dim);
  w.pl_w = proj(params, prefix + ".pl_w", dim, dim, rng);
  w.pl_b = zeros(params, prefix + ".pl_b", dim);
  w.po_w = proj(params, prefix + ".po_w", dim, dim, rng);
  w.po_b = zeros(params, prefix + ".po_b", dim);
  w.norm = make_norm(params, prefix + ".norm", dim);
  for (std::size_t u = 0; u < 4; ++u)
    w.dirs[u] = ssm::make_ssm_params(params, prefix + ".ssm" + std::to_string(u), dim, state_dim,
                                     rng);
  return w;
}

template <class T>
GffnWeights<T> make_gffn(ParameterSet<T>& params, const std::string& prefix, std::size_t dim,
                         Rng& rng) {
  const std::size_t hid = 2 * dim;
  GffnWeights<T> w;
  w.gate_w = proj(params, prefix + ".gate_w", dim, hid, rng);
  w.gate_b = zeros(params, prefix + ".gate_b", hid);
  w.val_w = proj(params, prefix + ".val_w", dim, hid, rng);
  w.val_b = zeros(params, prefix + ".val_b", hid);
  w.dw_w = conv_weight<T>(params, prefix + ".dw_w", {3, 3, hid}, rng);
  w.dw_b = zeros(params, prefix + ".dw_b", hid);
  w.out_w = proj(params, prefix + ".out_w", hid, dim, rng);
  w.out_b = zeros(params, prefix + ".out_b", dim);
  return w;
}

template <class T>
DhsbWeights<T> make_dhsb(ParameterSet<T>& params, const std::string& prefix, std::size_t dim,
                         std::size_t state_dim, bool with_local, Rng& rng) {
  DhsbWeights<T> w;
  w.global_norm = make_norm(params, prefix + ".ghsb_ln", dim);
  w.global = make_hsb(params, prefix + ".ghsb", dim, state_dim, rng);
  if (with_local) {
    w.local_norm = make_norm(params, prefix + ".lhsb_ln", dim);
    w.local = make_hsb(params, prefix + ".lhsb", dim, state_dim, rng);
  }
  w.ffn_norm = make_norm(params, prefix + ".gffn_ln", dim);
  w.ffn = make_gffn(params, prefix + ".gffn", dim, rng);
  return w;
}

template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const NormAffine<T>& n) {
  return ops::add(ops::mul(ops::layernorm(x), n.gamma), n.beta);
}

template <class T>
Tensor<T> hsb_ssm_features(const HsbWeights<T>& w, const Tensor<T>& f, std::size_t window,
                           const ssm::ScanOptions& opts) {
  if (f.rank() != 3 || f.dim(2) != w.pu_w.dim(0))
    throw ShapeError("hsb: feature " + to_string(f.shape()) + " does not match projection " +
                     to_string(w.pu_w.shape()));
  const ssm::ScanLayout layout{f.dim(0), f.dim(1), window};
  layout.validate();
  const auto fu = ops::silu(ops::linear(ops::depthwise_conv2d(f, w.dw_w, w.dw_b, 1, 1), w.pu_w,
                                        w.pu_b));
  auto seqs = ssm::cross_scan(fu, window);
  for (std::size_t u = 0; u < 4; ++u) seqs[u] = ssm::hsi_ssm_direction(seqs[u], w.dirs[u], opts);
  return ssm::cross_merge(seqs, layout);
}

template <class T>
Tensor<T> hsb_forward(const HsbWeights<T>& w, const Tensor<T>& f, std::size_t window,
                      const ssm::ScanOptions& opts) {
  const auto fs = layer_norm(hsb_ssm_features(w, f, window, opts), w.norm);
  const auto fl = ops::silu(ops::linear(f, w.pl_w, w.pl_b));
  return ops::linear(ops::mul(fs, fl), w.po_w, w.po_b);
}

template <class T>
Tensor<T> lhsb_forward(const HsbWeights<T>& w, const Tensor<T>& f, std::size_t window,
                       const ssm::ScanOptions& opts) {
  if (window == 0) throw ShapeError("lhsb: window must be >= 1");
  return hsb_forward(w, f, window, opts);
}

template <class T>
Tensor<T> gffn_forward(const GffnWeights<T>& w, const Tensor<T>& f) {
  const auto gate = ops::gelu(ops::linear(f, w.gate_w, w.gate_b));
  const auto val = ops::depthwise_conv2d(ops::linear(f, w.val_w, w.val_b), w.dw_w, w.dw_b, 1, 1);
  return ops::linear(ops::mul(gate, val), w.out_w, w.out_b);
}

template <class T>
Tensor<T> dhsb_forward(const DhsbWeights<T>& w, const Tensor<T>& f, std::size_t window,
                       BlockOrder order, const ssm::ScanOptions& opts) {
  Tensor<T> x = f;
  auto global = [&] { x = ops::add(x, ghsb_forward(w.global, layer_norm(x, w.global_norm), opts)); };
  auto local = [&] {
    if (!w.local) return;
    x = ops::add(x, lhsb_forward(*w.local, layer_norm(x, *w.local_norm), window, opts));
  };
  if (order == BlockOrder::gs_ls) {
    global();
    local();
  } else {
    local();
    global();
  }
  return ops::add(x, gffn_forward(w.ffn, layer_norm(x, w.ffn_norm)));
}

template <class T>
std::size_t Denoiser<T>::level_state_dim(std::size_t dim) const {
  return cfg_.state_dim == 0 ? dim : cfg_.state_dim;
}

template <class T>
Denoiser<T>::Denoiser(const Config& cfg, ParameterSet<T>& params, Rng& rng,
                      const std::string& prefix)
    : cfg_(cfg) {
  cfg_.validate();
  scan_.algo = cfg_.parallel_scan ? ssm::ScanAlgo::parallel : ssm::ScanAlgo::sequential;
  const bool local = cfg_.variant == Variant::full;
  const std::size_t C = cfg_.channels, nb = cfg_.bands;
  embed_w_ = conv_weight<T>(params, prefix + ".embed_w", {3, 3, nb + 1, C}, rng);
  embed_b_ = zeros(params, prefix + ".embed_b", C);
  std::size_t dim = C;
  for (std::size_t l = 0; l < cfg_.encoder_depth; ++l, dim *= 2) {
    const std::string p = prefix + ".enc" + std::to_string(l);
    Level lv;
    lv.block = make_dhsb(params, p, dim, level_state_dim(dim), local, rng);
    lv.down_w = conv_weight<T>(params, p + ".down_w", {4, 4, dim, 2 * dim}, rng);
    lv.down_b = zeros(params, p + ".down_b", 2 * dim);
    encoder_.push_back(std::move(lv));
  }
  for (std::size_t b = 0; b < cfg_.bottleneck_depth; ++b)
    bottleneck_.push_back(make_dhsb(params, prefix + ".mid" + std::to_string(b), dim,
                                    level_state_dim(dim), local, rng));
  for (std::size_t l = cfg_.encoder_depth; l-- > 0;) {
    const std::string p = prefix + ".dec" + std::to_string(l);
    const std::size_t half = dim / 2;
    UpLevel up;
    up.up_w = conv_weight<T>(params, p + ".up_w", {2, 2, dim, half}, rng);
    up.up_b = zeros(params, p + ".up_b", half);
    up.fuse_w = conv_weight<T>(params, p + ".fuse_w", {1, 1, dim, half}, rng);
    up.fuse_b = zeros(params, p + ".fuse_b", half);
    up.block = make_dhsb(params, p, half, level_state_dim(half), local, rng);
    decoder_.push_back(std::move(up));
    dim = half;
  }
  out_w_ = conv_weight<T>(params, prefix + ".out_w", {3, 3, C, nb}, rng);
  out_b_ = zeros(params, prefix + ".out_b", nb);
}

template <class T>
Tensor<T> Denoiser<T>::forward(const Tensor<T>& x, const Tensor<T>& rho) const {
  if (x.rank() != 3 || x.dim(2) != cfg_.bands)
    throw ShapeError("denoiser: input " + to_string(x.shape()) + " does not have " +
                     std::to_string(cfg_.bands) + " bands");
  if (rho.numel() != 1) throw ShapeError("denoiser: rho must hold one value");
  if (!(rho.values()[0] > T(0))) throw Error("denoiser: rho must be > 0");
  const std::size_t H = x.dim(0), W = x.dim(1), m = cfg_.pad_multiple();
  const std::size_t Hp = (H + m - 1) / m * m, Wp = (W + m - 1) / m * m;
  const auto rho_plane = ops::broadcast_to(ops::reshape(rho, {1, 1, 1}), {H, W, 1});
  auto f = ops::conv2d(ops::concat<T>({x, rho_plane}, 2), embed_w_, embed_b_, 1, 1);
  if (Hp != H || Wp != W) f = ops::pad2d(f, 0, Hp - H, 0, Wp - W);
  std::vector<Tensor<T>> skips;
  for (const auto& lv : encoder_) {
    f = dhsb_forward(lv.block, f, cfg_.window, cfg_.block_order, scan_);
    skips.push_back(f);
    f = ops::conv2d(f, lv.down_w, lv.down_b, 2, 1);
  }
  for (const auto& b : bottleneck_) f = dhsb_forward(b, f, cfg_.window, cfg_.block_order, scan_);
  for (const auto& up : decoder_) {
    f = ops::conv_transpose2d(f, up.up_w, up.up_b, 2, 0);
    f = ops::conv2d(ops::concat<T>({f, skips.back()}, 2), up.fuse_w, up.fuse_b, 1, 0);
    skips.pop_back();
    f = dhsb_forward(up.block, f, cfg_.window, cfg_.block_order, scan_);
  }
  if (Hp != H || Wp != W) f = ops::slice(ops::slice(f, 0, 0, H), 1, 0, W);
  return ops::add(x, ops::conv2d(f, out_w_, out_b_, 1, 1));
}

Config variant_light(Config cfg) {
  cfg.variant = Variant::light;
  return cfg;
}

#define DHM_NET_INSTANTIATE(T)                                                                 \
  template NormAffine<T> make_norm(ParameterSet<T>&, const std::string&, std::size_t);         \
  template HsbWeights<T> make_hsb(ParameterSet<T>&, const std::string&, std::size_t,           \
                                  std::size_t, Rng&);                                          \
  template GffnWeights<T> make_gffn(ParameterSet<T>&, const std::string&, std::size_t, Rng&);  \
  template DhsbWeights<T> make_dhsb(ParameterSet<T>&, const std::string&, std::size_t,         \
                                    std::size_t, bool, Rng&);                                  \
  template Tensor<T> layer_norm(const Tensor<T>&, const NormAffine<T>&);                       \
  template Tensor<T> hsb_ssm_features(const HsbWeights<T>&, const Tensor<T>&, std::size_t,     \
                                      const ssm::ScanOptions&);                                \
  template Tensor<T> hsb_forward(const HsbWeights<T>&, const Tensor<T>&, std::size_t,          \
                                 const ssm::ScanOptions&);                                     \
  template Tensor<T> lhsb_forward(const HsbWeights<T>&, const Tensor<T>&, std::size_t,         \
                                  const ssm::ScanOptions&);                                    \
  template Tensor<T> gffn_forward(const GffnWeights<T>&, const Tensor<T>&);                    \
  template Tensor<T> dhsb_forward(const DhsbWeights<T>&, const Tensor<T>&, std::size_t,        \
                                  BlockOrder, const ssm::ScanOptions&);                        \
  template class Denoiser<T>;
DHM_NET_INSTANTIATE(float)
DHM_NET_INSTANTIATE(double)

}  // namespace dhm::net
