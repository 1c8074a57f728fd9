#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "dhm/gradcheck.hpp"
#include "dhm/ops.hpp"
#include "dhm/ssm.hpp"
#include "oracles.hpp"

using namespace dhm;
using namespace dhm::ssm;
using T64 = Tensor<double>;

namespace {

template <class T>
std::vector<T> uniform(std::size_t n, double lo, double hi, Rng& rng) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<T> v(n);
  for (auto& x : v) x = T(u(rng));
  return v;
}

template <class T>
struct Instance {
  ScanDims dims;
  std::vector<T> u, delta, a, b, c, skip;
  Discretized<T> disc;
};

template <class T>
Instance<T> random_instance(const ScanDims& dm, Rng& rng) {
  Instance<T> in;
  in.dims = dm;
  in.u = uniform<T>(dm.seq_elems(), -1, 1, rng);
  in.delta = uniform<T>(dm.seq_elems(), 0.01, 1.0, rng);
  in.a = uniform<T>(dm.channels * dm.state, -1.0, -0.01, rng);
  in.b = uniform<T>(dm.groups * dm.length * dm.state, -1, 1, rng);
  in.c = uniform<T>(dm.groups * dm.length * dm.state, -1, 1, rng);
  in.skip = uniform<T>(dm.channels, 0.5, 1.5, rng);
  in.disc = discretize_zoh<T>(in.a, in.b, in.delta, dm);
  return in;
}

}  // namespace

TEST_CASE("zoh closed form") {
  const ScanDims dm{1, 1, 1, 1};
  const std::vector<double> a{-1.0}, b{3.0}, dt{std::log(2.0)};
  const auto d = discretize_zoh<double>(a, b, dt, dm);
  CHECK(d.a_bar[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(d.b_bar[0] == doctest::Approx(1.5).epsilon(1e-15));
}

TEST_CASE("zoh matches a 30-term series") {
  Rng rng(1);
  const ScanDims dm{2, 5, 3, 4};
  const auto a = uniform<double>(dm.channels * dm.state, -1.0, -0.01, rng);
  const auto b = uniform<double>(dm.groups * dm.length * dm.state, -1, 1, rng);
  const auto dt = uniform<double>(dm.seq_elems(), 1e-3, 3.0, rng);
  const auto d = discretize_zoh<double>(a, b, dt, dm);
  double worst = 0;
  for (std::size_t g = 0; g < dm.groups; ++g)
    for (std::size_t k = 0; k < dm.length; ++k)
      for (std::size_t c = 0; c < dm.channels; ++c)
        for (std::size_t s = 0; s < dm.state; ++s) {
          const std::size_t q = ((g * dm.length + k) * dm.channels + c) * dm.state + s;
          double ea, gain;
          oracle::zoh_series(dt[(g * dm.length + k) * dm.channels + c], a[c * dm.state + s], ea,
                             gain);
          const double bb = gain * b[(g * dm.length + k) * dm.state + s];
          worst = std::max(worst, std::abs(d.a_bar[q] - ea) / std::abs(ea));
          worst = std::max(worst, std::abs(d.b_bar[q] - bb) / std::max(std::abs(bb), 1e-300));
        }
  CHECK(worst <= 1e-10);
}

TEST_CASE("zoh small-step limit and monotonicity") {
  const ScanDims dm{1, 1, 1, 1};
  const std::vector<double> a{-0.7}, b{2.0}, tiny{1e-8};
  const auto d = discretize_zoh<double>(a, b, tiny, dm);
  CHECK(std::abs(d.b_bar[0] / (1e-8 * 2.0) - 1.0) <= 1e-6);

  double prev = 1.0;
  for (double dt : {0.01, 0.1, 0.5, 1.0, 4.0}) {
    const std::vector<double> dv{dt};
    const auto e = discretize_zoh<double>(a, b, dv, dm);
    CHECK(e.a_bar[0] < prev);
    CHECK(std::abs(e.a_bar[0]) < 1.0);
    prev = e.a_bar[0];
  }
  const std::vector<double> zero{0.0}, pos{0.5};
  CHECK_THROWS_AS(discretize_zoh<double>(a, b, zero, dm), Error);
  CHECK_THROWS_AS(discretize_zoh<double>(pos, b, tiny, dm), Error);
}

TEST_CASE("sequential scan matches the loop oracle") {
  Rng rng(2);
  const auto in = random_instance<double>({1, 16, 3, 4}, rng);
  const auto y = selective_scan_seq<double>(in.u, in.disc.a_bar, in.disc.b_bar, in.c, in.skip,
                                            in.dims);
  const auto ref = oracle::naive_scan(in.u, in.disc.a_bar, in.disc.b_bar, in.c, in.skip, 1, 16, 3, 4);
  CHECK(oracle::rel_err(y, ref) <= 1e-12);
}

TEST_CASE("memoryless and single-step scans") {
  Rng rng(3);
  auto in = random_instance<double>({2, 5, 2, 3}, rng);
  std::fill(in.disc.a_bar.begin(), in.disc.a_bar.end(), 0.0);
  const auto y = selective_scan_seq<double>(in.u, in.disc.a_bar, in.disc.b_bar, in.c, in.skip,
                                            in.dims);
  const auto& dm = in.dims;
  for (std::size_t g = 0; g < dm.groups; ++g)
    for (std::size_t k = 0; k < dm.length; ++k)
      for (std::size_t d = 0; d < dm.channels; ++d) {
        const std::size_t i = (g * dm.length + k) * dm.channels + d;
        double want = in.skip[d] * in.u[i];
        for (std::size_t s = 0; s < dm.state; ++s)
          want += in.c[(g * dm.length + k) * dm.state + s] * in.disc.b_bar[i * dm.state + s] * in.u[i];
        CHECK(y[i] == doctest::Approx(want).epsilon(1e-14));
      }

  const auto one = random_instance<double>({3, 1, 2, 2}, rng);
  const auto ys = selective_scan_seq<double>(one.u, one.disc.a_bar, one.disc.b_bar, one.c,
                                             one.skip, one.dims);
  const auto yp = selective_scan_par<double>(one.u, one.disc.a_bar, one.disc.b_bar, one.c,
                                             one.skip, one.dims, 2);
  CHECK(ys == yp);
}

TEST_CASE("parallel scan equals sequential on a random grid") {
  Rng rng(4);
  std::uniform_int_distribution<std::size_t> G(1, 3), L(1, 300), D(1, 5), S(1, 6), P(1, 8);
  double worst64 = 0, worst32 = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const ScanDims dm{G(rng), L(rng), D(rng), S(rng)};
    const std::size_t threads = 1 + trial % 4, chunks = P(rng);
    const auto in = random_instance<double>(dm, rng);
    const auto ys = selective_scan_seq<double>(in.u, in.disc.a_bar, in.disc.b_bar, in.c, in.skip, dm);
    const auto yp = selective_scan_par<double>(in.u, in.disc.a_bar, in.disc.b_bar, in.c, in.skip,
                                               dm, threads, chunks);
    worst64 = std::max(worst64, oracle::rel_err(yp, ys));

    const auto f = random_instance<float>(dm, rng);
    const auto fs = selective_scan_seq<float>(f.u, f.disc.a_bar, f.disc.b_bar, f.c, f.skip, dm);
    const auto fp = selective_scan_par<float>(f.u, f.disc.a_bar, f.disc.b_bar, f.c, f.skip, dm,
                                              threads, chunks);
    worst32 = std::max(worst32, oracle::rel_err(fp, fs));
  }
  CHECK(worst64 <= 1e-12);
  CHECK(worst32 <= 1e-6);
}

TEST_CASE("fused kernel agrees with discretize then scan") {
  Rng rng(5);
  const auto in = random_instance<double>({2, 40, 3, 4}, rng);
  const FusedInputs<double> fi{in.u, in.delta, in.a, in.b, in.c, in.skip};
  const auto ys = selective_scan_seq<double>(in.u, in.disc.a_bar, in.disc.b_bar, in.c, in.skip,
                                             in.dims);
  const auto fs = fused_scan_forward<double>(fi, in.dims, {ScanAlgo::sequential, 1, 1});
  const auto fp = fused_scan_forward<double>(fi, in.dims, {ScanAlgo::parallel, 3, 5});
  CHECK(oracle::rel_err(fs, ys) <= 1e-13);
  CHECK(oracle::rel_err(fp, ys) <= 1e-12);
}

TEST_CASE("blelloch exclusive scan of affine maps") {
  Rng rng(6);
  for (std::size_t n : {1u, 2u, 5u, 8u, 13u}) {
    auto a = uniform<double>(n * 2, -1, 1, rng), b = uniform<double>(n * 2, -1, 1, rng);
    const auto a0 = a, b0 = b;
    blelloch_exclusive_scan<double>(a, b, n, 2);
    for (std::size_t lane = 0; lane < 2; ++lane) {
      double pa = 1, pb = 0;
      for (std::size_t p = 0; p < n; ++p) {
        CHECK(a[p * 2 + lane] == doctest::Approx(pa).epsilon(1e-13));
        CHECK(b[p * 2 + lane] == doctest::Approx(pb).epsilon(1e-13));
        pb = a0[p * 2 + lane] * pb + b0[p * 2 + lane];
        pa = a0[p * 2 + lane] * pa;
      }
    }
  }
}

TEST_CASE("hidden state stays bounded for a stable system") {
  Rng rng(7);
  const ScanDims dm{1, 2000, 2, 3};
  auto in = random_instance<double>(dm, rng);
  std::vector<double> states;
  const FusedInputs<double> fi{in.u, in.delta, in.a, in.b, in.c, in.skip};
  fused_scan_forward<double>(fi, dm, {ScanAlgo::sequential, 1, 1}, &states);
  for (std::size_t d = 0; d < dm.channels; ++d)
    for (std::size_t s = 0; s < dm.state; ++s) {
      // |h| <= max|b_bar u| / (1 - max|a_bar|)
      double amax = 0, bmax = 0;
      for (std::size_t k = 0; k < dm.length; ++k) {
        const std::size_t q = (k * dm.channels + d) * dm.state + s;
        amax = std::max(amax, std::abs(in.disc.a_bar[q]));
        bmax = std::max(bmax, std::abs(in.disc.b_bar[q] * in.u[k * dm.channels + d]));
      }
      REQUIRE(amax < 1.0);
      for (std::size_t k = 0; k < dm.length; ++k)
        CHECK(std::abs(states[(k * dm.channels + d) * dm.state + s]) <= bmax / (1 - amax) + 1e-12);
    }
}

TEST_CASE("scan paths on a 2x2 map") {
  const auto p = scan_paths({2, 2, 0});
  CHECK(p[0] == std::vector<std::size_t>{0, 1, 2, 3});
  CHECK(p[1] == std::vector<std::size_t>{1, 0, 3, 2});
  CHECK(p[2] == std::vector<std::size_t>{3, 2, 1, 0});
  CHECK(p[3] == std::vector<std::size_t>{2, 3, 0, 1});

  const auto one = scan_paths({1, 1, 0});
  for (const auto& q : one) CHECK(q == std::vector<std::size_t>{0});
}

TEST_CASE("every path is a permutation") {
  for (ScanLayout l : {ScanLayout{5, 7, 0}, ScanLayout{8, 8, 4}, ScanLayout{6, 4, 2},
                       ScanLayout{3, 3, 3}}) {
    for (auto q : scan_paths(l)) {
      std::sort(q.begin(), q.end());
      std::vector<std::size_t> want(l.height * l.width);
      std::iota(want.begin(), want.end(), 0);
      CHECK(q == want);
    }
  }
  CHECK_THROWS_AS(ScanLayout({6, 4, 4}).validate(), ShapeError);
}

TEST_CASE("local windows match a direct partition") {
  const ScanLayout l{4, 4, 2};
  CHECK(l.groups() == 4);
  CHECK(l.length() == 4);
  const auto p = scan_paths(l);
  for (std::size_t wi = 0; wi < 2; ++wi)
    for (std::size_t wj = 0; wj < 2; ++wj) {
      const std::size_t g = wi * 2 + wj;
      std::vector<std::size_t> want;
      for (std::size_t r = 0; r < 2; ++r)
        for (std::size_t c = 0; c < 2; ++c) want.push_back((wi * 2 + r) * 4 + wj * 2 + c);
      const std::vector<std::size_t> got(p[0].begin() + long(g * 4), p[0].begin() + long(g * 4 + 4));
      CHECK(got == want);
      std::vector<std::size_t> sorted3(p[2].begin() + long(g * 4), p[2].begin() + long(g * 4 + 4));
      std::sort(sorted3.begin(), sorted3.end());
      // every direction visits each window's own pixels
      CHECK(sorted3 == want);
    }
}

TEST_CASE("cross scan and merge") {
  Rng rng(8);
  std::normal_distribution<double> n(0, 1);
  std::vector<double> v(6 * 4 * 3);
  for (auto& x : v) x = n(rng);
  for (std::size_t window : {0u, 2u}) {
    const auto f = T64::from_values({6, 4, 3}, v);
    const ScanLayout l{6, 4, window};
    auto seqs = cross_scan(f, window);
    CHECK(seqs[0].shape() == Shape{l.groups(), l.length(), 3});
    const auto merged = cross_merge(seqs, l);
    for (std::size_t i = 0; i < v.size(); ++i) CHECK(merged.values()[i] / 4 == v[i]);

    for (std::size_t u = 1; u < 4; ++u) seqs[u] = T64::zeros(seqs[u].shape());
    const auto only = cross_merge(seqs, l);
    CHECK(std::vector<double>(only.values().begin(), only.values().end()) == v);
  }
  auto bad = cross_scan(T64::from_values({6, 4, 3}, v), 0);
  bad[2] = T64::zeros({1, 23, 3});
  CHECK_THROWS_AS(cross_merge(bad, {6, 4, 0}), ShapeError);
  CHECK_THROWS_AS(cross_scan(T64::from_values({6, 4, 3}, v), 4), ShapeError);
}

TEST_CASE("parameter generation") {
  ParameterSet<double> ps;
  Rng rng(9);
  auto p = make_ssm_params(ps, "s", 3, 4, rng);
  const auto amat = p.a();
  for (double a : amat.values()) {
    CHECK(a < 0);
    CHECK(a >= -1.0 - 1e-12);
    CHECK(a <= -1e-2 + 1e-12);
  }
  for (double s : p.skip.values()) CHECK(s == 1.0);

  std::fill(p.dt_bias.mutable_values().begin(), p.dt_bias.mutable_values().end(), 0.0);
  const auto cp = generate_params(T64::zeros({2, 5, 3}), p);
  CHECK(cp.delta.shape() == Shape{2, 5, 3});
  for (double d : cp.delta.values()) CHECK(d == doctest::Approx(std::log(2.0)).epsilon(1e-15));

  std::fill(p.proj_b.mutable_values().begin(), p.proj_b.mutable_values().end(), 0.0);
  std::vector<double> sv(2 * 5 * 3);
  for (auto& x : sv) x = std::uniform_real_distribution<double>(-1, 1)(rng);
  const auto seq = T64::from_values({2, 5, 3}, sv);
  const auto cq = generate_params(seq, p);
  for (double b : cq.b.values()) CHECK(b == 0.0);

  // per-position products
  const auto pc = p.proj_c.values(), pd = p.proj_delta.values(), e = p.dt_bias.values();
  for (std::size_t pos = 0; pos < 10; ++pos) {
    for (std::size_t s = 0; s < 4; ++s) {
      double c = 0;
      for (std::size_t i = 0; i < 3; ++i) c += sv[pos * 3 + i] * pc[i * 4 + s];
      CHECK(cq.c.values()[pos * 4 + s] == doctest::Approx(c).epsilon(1e-14));
    }
    for (std::size_t o = 0; o < 3; ++o) {
      double z = e[o];
      for (std::size_t i = 0; i < 3; ++i) z += sv[pos * 3 + i] * pd[i * 3 + o];
      CHECK(cq.delta.values()[pos * 3 + o] == doctest::Approx(std::log1p(std::exp(z))).epsilon(1e-13));
      CHECK(cq.delta.values()[pos * 3 + o] > 0);
    }
  }
  CHECK_THROWS_AS(generate_params(T64::zeros({2, 5, 4}), p), ShapeError);
}

TEST_CASE("scan gradients match central differences") {
  const auto results = gradcheck::run_suite({0, false, "scan_", 2});
  REQUIRE(results.size() == 3);  // sequential, parallel, cross scan/merge
  for (const auto& r : results) {
    INFO(r.name << " " << r.max_error << " " << r.detail);
    CHECK(r.passed);
    CHECK(r.max_error <= 1e-4);
  }
}
