#include <doctest.h>

#include <cmath>
#include <random>
#include <set>

#include "dhm/metrics.hpp"
#include "dhm/network.hpp"
#include "dhm/ops.hpp"
#include "dhm/optim.hpp"
#include "dhm/unfolding.hpp"
#include "oracles.hpp"

using namespace dhm;
using namespace dhm::net;
using T64 = Tensor<double>;
using Vec = std::vector<double>;

namespace {

Vec vals(const T64& t) { return {t.values().begin(), t.values().end()}; }

T64 random_feature(Shape s, Rng& rng) {
  std::normal_distribution<double> n(0, 1);
  Vec v(numel(s));
  for (auto& x : v) x = n(rng);
  return T64::from_values(std::move(s), std::move(v));
}

// Overwrites every parameter except the state-matrix logs with N(0, scale).
void scramble(ParameterSet<double>& ps, Rng& rng, double scale = 0.3) {
  std::normal_distribution<double> n(0, scale);
  for (auto& [name, t] : ps.items()) {
    if (name.find("log_a") != std::string::npos) continue;
    auto v = const_cast<T64&>(t).mutable_values();
    for (auto& x : v) x = n(rng);
  }
}

void fill(T64 t, double v) {
  for (auto& x : t.mutable_values()) x = v;
}

// ---- straight-line reference of one branch on an (H, W, D) map --------------

double silu(double x) { return x / (1 + std::exp(-x)); }
double gelu(double x) { return 0.5 * x * (1 + std::erf(x / std::sqrt(2.0))); }
double softplus(double x) { return std::log1p(std::exp(x)); }

Vec linear(const Vec& x, std::size_t n, std::size_t in, const T64& w, const T64& b) {
  const std::size_t out = w.dim(1);
  Vec y(n * out);
  for (std::size_t p = 0; p < n; ++p)
    for (std::size_t o = 0; o < out; ++o) {
      double s = b.defined() ? b.values()[o] : 0.0;
      for (std::size_t i = 0; i < in; ++i) s += x[p * in + i] * w.values()[i * out + o];
      y[p * out + o] = s;
    }
  return y;
}

Vec dwconv3(const Vec& x, std::size_t H, std::size_t W, std::size_t D, const T64& w, const T64& b) {
  Vec y(H * W * D);
  for (std::size_t i = 0; i < H; ++i)
    for (std::size_t j = 0; j < W; ++j)
      for (std::size_t c = 0; c < D; ++c) {
        double s = b.values()[c];
        for (int ki = 0; ki < 3; ++ki)
          for (int kj = 0; kj < 3; ++kj) {
            const long ii = long(i) + ki - 1, jj = long(j) + kj - 1;
            if (ii < 0 || jj < 0 || ii >= long(H) || jj >= long(W)) continue;
            s += w.values()[(std::size_t(ki) * 3 + std::size_t(kj)) * D + c] *
                 x[(std::size_t(ii) * W + std::size_t(jj)) * D + c];
          }
        y[(i * W + j) * D + c] = s;
      }
  return y;
}

Vec layer_norm(const Vec& x, std::size_t n, std::size_t D, const NormAffine<double>& nrm) {
  Vec y(x.size());
  for (std::size_t p = 0; p < n; ++p) {
    double mu = 0, var = 0;
    for (std::size_t c = 0; c < D; ++c) mu += x[p * D + c];
    mu /= double(D);
    for (std::size_t c = 0; c < D; ++c) var += (x[p * D + c] - mu) * (x[p * D + c] - mu);
    var /= double(D);
    for (std::size_t c = 0; c < D; ++c)
      y[p * D + c] = (x[p * D + c] - mu) / std::sqrt(var + 1e-5) * nrm.gamma.values()[c] +
                     nrm.beta.values()[c];
  }
  return y;
}

// Whole-map traversal orders: row-major, row-major with columns mirrored,
// and the reverses of both.
std::vector<std::vector<std::size_t>> global_orders(std::size_t H, std::size_t W) {
  std::vector<std::vector<std::size_t>> o(4);
  for (std::size_t i = 0; i < H; ++i)
    for (std::size_t j = 0; j < W; ++j) {
      o[0].push_back(i * W + j);
      o[1].push_back(i * W + (W - 1 - j));
    }
  o[2].assign(o[0].rbegin(), o[0].rend());
  o[3].assign(o[1].rbegin(), o[1].rend());
  return o;
}

Vec ssm_direction(const Vec& s, std::size_t L, std::size_t D, const ssm::SsmParams<double>& p) {
  const std::size_t S = p.state_dim();
  const Vec B = linear(s, L, D, p.proj_b, T64()), C = linear(s, L, D, p.proj_c, T64());
  const Vec z = linear(s, L, D, p.proj_delta, T64());
  Vec y(L * D, 0.0);
  for (std::size_t d = 0; d < D; ++d)
    for (std::size_t st = 0; st < S; ++st) {
      const double a = -std::exp(p.log_a.values()[d * S + st]);
      double h = 0;
      for (std::size_t k = 0; k < L; ++k) {
        const double dt = softplus(z[k * D + d] + p.dt_bias.values()[d]);
        h = std::exp(dt * a) * h + (std::exp(dt * a) - 1) / a * B[k * S + st] * s[k * D + d];
        y[k * D + d] += C[k * S + st] * h;
      }
    }
  for (std::size_t k = 0; k < L; ++k)
    for (std::size_t d = 0; d < D; ++d) y[k * D + d] += p.skip.values()[d] * s[k * D + d];
  return y;
}

Vec reference_ghsb(const HsbWeights<double>& w, const Vec& f, std::size_t H, std::size_t W,
                   std::size_t D) {
  const std::size_t n = H * W;
  Vec fu = linear(dwconv3(f, H, W, D, w.dw_w, w.dw_b), n, D, w.pu_w, w.pu_b);
  for (auto& v : fu) v = silu(v);
  Vec merged(n * D, 0.0);
  const auto orders = global_orders(H, W);
  for (std::size_t u = 0; u < 4; ++u) {
    Vec seq(n * D);
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t c = 0; c < D; ++c) seq[k * D + c] = fu[orders[u][k] * D + c];
    const Vec y = ssm_direction(seq, n, D, w.dirs[u]);
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t c = 0; c < D; ++c) merged[orders[u][k] * D + c] += y[k * D + c];
  }
  const Vec fs = layer_norm(merged, n, D, w.norm);
  Vec fl = linear(f, n, D, w.pl_w, w.pl_b);
  Vec g(n * D);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = fs[i] * silu(fl[i]);
  return linear(g, n, D, w.po_w, w.po_b);
}

Vec reference_gffn(const GffnWeights<double>& w, const Vec& f, std::size_t H, std::size_t W,
                   std::size_t D) {
  const std::size_t n = H * W, hid = 2 * D;
  Vec gate = linear(f, n, D, w.gate_w, w.gate_b);
  const Vec val = dwconv3(linear(f, n, D, w.val_w, w.val_b), H, W, hid, w.dw_w, w.dw_b);
  for (std::size_t i = 0; i < gate.size(); ++i) gate[i] = gelu(gate[i]) * val[i];
  return linear(gate, n, hid, w.out_w, w.out_b);
}

Config small_config() {
  Config c;
  c.channels = 4;
  c.state_dim = 4;
  c.bands = 3;
  c.window = 2;
  c.encoder_depth = 2;
  c.bottleneck_depth = 1;
  return c;
}

}  // namespace

TEST_CASE("branch matches a straight-line reference on 4x4x4") {
  ParameterSet<double> ps;
  Rng rng(1);
  auto w = make_hsb(ps, "h", 4, 3, rng);
  scramble(ps, rng);
  const auto f = random_feature({4, 4, 4}, rng);
  const auto got = vals(ghsb_forward(w, f));
  const auto want = reference_ghsb(w, vals(f), 4, 4, 4);
  CHECK(oracle::rel_err(got, want) <= 1e-12);
  CHECK(ghsb_forward(w, f).shape() == f.shape());
}

TEST_CASE("gated feed-forward matches a straight-line reference") {
  ParameterSet<double> ps;
  Rng rng(2);
  auto w = make_gffn(ps, "g", 4, rng);
  scramble(ps, rng);
  const auto f = random_feature({4, 4, 4}, rng);
  const auto out = gffn_forward(w, f);
  CHECK(out.shape() == f.shape());
  CHECK(oracle::rel_err(vals(out), reference_gffn(w, vals(f), 4, 4, 4)) <= 1e-12);

  fill(w.gate_w, 0.0);
  fill(w.gate_b, 0.0);
  const auto zero_gate = vals(gffn_forward(w, f));
  for (std::size_t i = 0; i < zero_gate.size(); ++i)
    CHECK(zero_gate[i] == w.out_b.values()[i % 4]);
}

TEST_CASE("annihilated norm leaves only the output bias") {
  ParameterSet<double> ps;
  Rng rng(3);
  auto w = make_hsb(ps, "h", 4, 4, rng);
  scramble(ps, rng);
  fill(w.norm.gamma, 0.0);
  fill(w.norm.beta, 0.0);
  const auto out = vals(ghsb_forward(w, random_feature({4, 6, 4}, rng)));
  for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == w.po_b.values()[i % 4]);
}

TEST_CASE("a single window equal to the map reproduces the global branch") {
  ParameterSet<double> ps;
  Rng rng(4);
  auto w = make_hsb(ps, "h", 3, 4, rng);
  scramble(ps, rng);
  const auto f = random_feature({8, 8, 3}, rng);
  CHECK(vals(lhsb_forward(w, f, 8)) == vals(ghsb_forward(w, f)));
  CHECK(lhsb_forward(w, f, 4).shape() == f.shape());
  CHECK_THROWS_AS(lhsb_forward(w, f, 3), ShapeError);
  CHECK_THROWS_AS(lhsb_forward(w, f, 0), ShapeError);
}

TEST_CASE("windowed scans do not mix windows") {
  ParameterSet<double> ps;
  Rng rng(5);
  auto w = make_hsb(ps, "h", 3, 4, rng);
  scramble(ps, rng);
  const std::size_t H = 8, W = 8, N = 2;
  const auto f = random_feature({H, W, 3}, rng);
  auto g = vals(f);
  // zero window (1, 2): rows 2-3, cols 4-5
  for (std::size_t i = 2; i < 4; ++i)
    for (std::size_t j = 4; j < 6; ++j)
      for (std::size_t c = 0; c < 3; ++c) g[(i * W + j) * 3 + c] = 0.0;
  const auto fz = T64::from_values({H, W, 3}, g);

  // scan stage alone: every other window is untouched
  auto scan_only = [&](const T64& x) {
    auto seqs = ssm::cross_scan(x, N);
    for (std::size_t u = 0; u < 4; ++u) seqs[u] = ssm::hsi_ssm_direction(seqs[u], w.dirs[u]);
    return vals(ssm::cross_merge(seqs, {H, W, N}));
  };
  const auto a = scan_only(f), b = scan_only(fz);
  // whole upper branch: windows outside the 3x3 depthwise halo are untouched
  const auto fa = vals(hsb_ssm_features(w, f, N)), fb = vals(hsb_ssm_features(w, fz, N));
  for (std::size_t i = 0; i < H; ++i)
    for (std::size_t j = 0; j < W; ++j) {
      const std::size_t wi = i / N, wj = j / N;
      const bool inside = wi == 1 && wj == 2;
      const bool near = wi <= 2 && wj >= 1 && wj <= 3;
      for (std::size_t c = 0; c < 3; ++c) {
        const std::size_t q = (i * W + j) * 3 + c;
        if (!inside) CHECK(a[q] == b[q]);
        if (!near) CHECK(fa[q] == fb[q]);
      }
    }
  CHECK(a != b);
}

TEST_CASE("residual block skeleton and ordering") {
  ParameterSet<double> ps;
  Rng rng(6);
  auto w = make_dhsb(ps, "b", 4, 4, true, rng);
  scramble(ps, rng);
  const auto f = random_feature({4, 4, 4}, rng);
  const std::size_t N = 2;

  auto manual = [&](bool global_first) {
    T64 x = f;
    auto g = [&] { x = ops::add(x, ghsb_forward(w.global, layer_norm(x, w.global_norm))); };
    auto l = [&] { x = ops::add(x, lhsb_forward(*w.local, layer_norm(x, *w.local_norm), N)); };
    if (global_first) { g(); l(); } else { l(); g(); }
    return vals(ops::add(x, gffn_forward(w.ffn, layer_norm(x, w.ffn_norm))));
  };
  CHECK(vals(dhsb_forward(w, f, N, BlockOrder::gs_ls)) == manual(true));
  CHECK(vals(dhsb_forward(w, f, N, BlockOrder::ls_gs)) == manual(false));
  CHECK(manual(true) != manual(false));

  for (auto* t : {&w.global.po_w, &w.global.po_b, &w.local->po_w, &w.local->po_b, &w.ffn.out_w,
                  &w.ffn.out_b})
    fill(*t, 0.0);
  CHECK(vals(dhsb_forward(w, f, N, BlockOrder::gs_ls)) == vals(f));
}

TEST_CASE("light block has no local branch") {
  ParameterSet<double> ps;
  Rng rng(7);
  auto w = make_dhsb(ps, "b", 4, 4, false, rng);
  scramble(ps, rng);
  CHECK_FALSE(w.local.has_value());
  const auto f = random_feature({4, 4, 4}, rng);
  auto x = ops::add(f, ghsb_forward(w.global, layer_norm(f, w.global_norm)));
  x = ops::add(x, gffn_forward(w.ffn, layer_norm(x, w.ffn_norm)));
  CHECK(vals(dhsb_forward(w, f, 2, BlockOrder::gs_ls)) == vals(x));
}

TEST_CASE("denoiser preserves shape and is the identity with a zero output conv") {
  Config cfg;
  cfg.channels = 8;
  cfg.bands = 4;
  cfg.height = cfg.width = 32;
  ParameterSet<double> ps;
  Rng rng(8);
  Denoiser<double> den(cfg, ps, rng);
  const std::size_t ws = 32 + cfg.shift_step * 3;
  const auto x = random_feature({32, ws, 4}, rng);
  const auto rho = T64::scalar(0.5);
  const auto z = den.forward(x, rho);
  CHECK(z.shape() == x.shape());
  CHECK(vals(z) != vals(x));

  fill(den.output_weight(), 0.0);
  fill(den.output_bias(), 0.0);
  CHECK(vals(den.forward(x, rho)) == vals(x));

  CHECK_THROWS_AS(den.forward(x, T64::scalar(0.0)), Error);
  CHECK_THROWS_AS(den.forward(x, T64::scalar(-1.0)), Error);
  CHECK_THROWS_AS(den.forward(random_feature({8, 8, 3}, rng), rho), ShapeError);
}

TEST_CASE("denoiser handles extents that need padding") {
  auto cfg = small_config();
  ParameterSet<double> ps;
  Rng rng(9);
  Denoiser<double> den(cfg, ps, rng);
  for (Shape s : {Shape{5, 11, 3}, Shape{8, 12, 3}, Shape{1, 1, 3}})
    CHECK(den.forward(random_feature(s, rng), T64::scalar(1.0)).shape() == s);
}

TEST_CASE("parameter names are unique and light is smaller") {
  auto cfg = small_config();
  ParameterSet<double> full, light;
  Rng r1(1), r2(1);
  Denoiser<double> a(cfg, full, r1);
  Denoiser<double> b(variant_light(cfg), light, r2);
  CHECK(light.element_count() < full.element_count());
  CHECK(full.contains("denoiser.enc0.lhsb.ssm3.log_a"));
  CHECK_FALSE(light.contains("denoiser.enc0.lhsb.ssm3.log_a"));
  std::set<std::string> names;
  for (const auto& [n, t] : full.items()) names.insert(n);
  CHECK(names.size() == full.size());
}

TEST_CASE("light to full parameter ratio at the reference dimensions") {
  const Config cfg = Config::full_scale();
  unfold::Model<float> full(cfg), light(variant_light(cfg));
  const double ratio = double(light.params().element_count()) / double(full.params().element_count());
  // 0.66M / 0.92M, within 15 %
  const double target = 0.66 / 0.92;
  MESSAGE("full " << full.params().element_count() << " light " << light.params().element_count()
                  << " ratio " << ratio);
  CHECK(std::abs(ratio - target) <= 0.15 * target);
}

TEST_CASE("a briefly trained denoiser removes gaussian noise") {
  Config cfg = small_config();
  cfg.bands = 4;
  ParameterSet<float> ps;
  Rng rng(10);
  Denoiser<float> den(cfg, ps, rng);
  Adam<float> opt(ps, {2e-3});
  const auto cubes = synth_dataset(9, 16, 16, 4, 3);
  std::normal_distribution<double> noise(0.0, 0.1);
  auto noisy = [&](const HsiCube& c) {
    HsiCube n = c;
    for (auto& v : n.values) v += noise(rng);
    return n;
  };
  const auto rho = Tensor<float>::scalar(1.0f);
  for (int step = 0; step < 150; ++step) {
    const auto& gt = cubes[std::size_t(step) % 8];
    const auto x = cassi::to_tensor<float>(noisy(gt));
    const auto loss = unfold::charbonnier_loss(den.forward(x, rho), cassi::to_tensor<float>(gt), 1e-3f);
    loss.backward();
    opt.step();
  }
  const auto& test = cubes[8];
  const auto xn = noisy(test);
  NoGradGuard ng;
  const auto z = cassi::to_cube(den.forward(cassi::to_tensor<float>(xn), rho));
  const double before = psnr(xn, test), after = psnr(z, test);
  MESSAGE("noisy " << before << " dB, denoised " << after << " dB");
  CHECK(after > before);
}
