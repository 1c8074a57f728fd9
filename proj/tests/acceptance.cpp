// One PASS/FAIL line per acceptance criterion. Exit status is nonzero when any
// criterion fails, except a speedup shortfall on a machine with fewer than 4
// hardware threads; that line still reads FAIL and says why.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <unordered_set>

#include "dhm/bench.hpp"
#include "dhm/cassi.hpp"
#include "dhm/gradcheck.hpp"
#include "dhm/metrics.hpp"
#include "dhm/ssm.hpp"
#include "dhm/unfolding.hpp"
#include "oracles.hpp"

using namespace dhm;
using Vec = std::vector<double>;
using T64 = Tensor<double>;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
  bool hardware_bound = false;
};

int hard_failures = 0;

void report(int id, const char* title, double limit_s, const std::function<Outcome()>& fn) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = fn();
  } catch (const std::exception& e) {
    o = {false, std::string("threw: ") + e.what()};
  }
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("%-4s [%2d] %-34s %8.2fs (budget %gs)  %s\n", o.pass ? "PASS" : "FAIL", id, title, s,
              limit_s, o.detail.c_str());
  std::fflush(stdout);
  if (!o.pass && !o.hardware_bound) ++hard_failures;
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

Vec uniform(std::size_t n, double lo, double hi, Rng& rng) {
  std::uniform_real_distribution<double> u(lo, hi);
  Vec v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

Plane plane(std::size_t h, std::size_t w, double lo, double hi, Rng& rng) {
  return {h, w, uniform(h * w, lo, hi, rng)};
}

HsiCube cube(std::size_t h, std::size_t w, std::size_t b, Rng& rng) {
  return {h, w, b, uniform(h * w * b, -1, 1, rng)};
}

double dot(const Vec& a, const Vec& b) { return std::inner_product(a.begin(), a.end(), b.begin(), 0.0); }
double norm(const Vec& a) { return std::sqrt(dot(a, a)); }

Outcome adjointness() {
  Rng rng(101);
  double worst = 0;
  for (int t = 0; t < 100; ++t) {
    cassi::SensingOperator op(plane(8, 8, 0, 1, rng), 2, 4);
    const auto x = cube(8, op.shifted_width(), 4, rng);
    const auto y = plane(8, op.shifted_width(), -1, 1, rng);
    const auto px = op.project(x).values, aty = op.adjoint(y).values;
    worst = std::max(worst, std::abs(dot(px, y.values) - dot(x.values, aty)) /
                                (norm(px) * norm(y.values)));
  }
  return {worst <= 1e-12, fmt("max relative defect %.2e over 100 trials", worst)};
}

Outcome dense_equivalence() {
  Rng rng(102);
  double fwd = 0, adj = 0, psi = 0, off = 0;
  std::size_t instances = 0;
  for (std::size_t h = 1; h <= 4; ++h)
    for (std::size_t w = 1; w <= 5; ++w)
      for (std::size_t b = 1; b <= 4; ++b)
        for (std::size_t step = 0; step <= 2; ++step) {
          const bool binary = (h + w + b + step) % 2 == 0;
          Plane m = binary ? cassi::random_mask(h, w, rng) : plane(h, w, 0, 1, rng);
          cassi::SensingOperator op(m, step, b);
          if (op.volume_shape()[0] * op.volume_shape()[1] * b > 4096) continue;
          const auto ref = oracle::sensing_matrix(m, step, b);
          const auto x = cube(h, op.shifted_width(), b, rng);
          const auto y = plane(h, op.shifted_width(), -1, 1, rng);
          const Eigen::VectorXd yd = ref * oracle::as_vec(x.values);
          const Eigen::VectorXd xd = ref.transpose() * oracle::as_vec(y.values);
          fwd = std::max(fwd, oracle::rel_err(op.project(x).values, Vec(yd.data(), yd.data() + yd.size())));
          adj = std::max(adj, oracle::rel_err(op.adjoint(y).values, Vec(xd.data(), xd.data() + xd.size())));
          const Eigen::MatrixXd g = ref * ref.transpose();
          for (Eigen::Index r = 0; r < g.rows(); ++r)
            for (Eigen::Index c = 0; c < g.cols(); ++c)
              if (r == c)
                psi = std::max(psi, std::abs(op.psi().values[std::size_t(r)] - g(r, r)) /
                                        std::max(1.0, g(r, r)));
              else
                off = std::max(off, std::abs(g(r, c)));
          ++instances;
        }
  const bool ok = fwd <= 1e-12 && adj <= 1e-12 && psi <= 1e-14 && off <= 1e-14;
  std::ostringstream s;
  s << instances << " instances; forward " << fwd << ", adjoint " << adj << ", psi " << psi
    << ", off-diagonal " << off;
  return {ok, s.str()};
}

Outcome projection_solve() {
  Rng rng(103);
  std::uniform_real_distribution<double> logeta(std::log(1e-3), std::log(1e3));
  double worst = 0;
  for (int t = 0; t < 50; ++t) {
    const std::size_t step = 1 + std::size_t(t % 2);
    cassi::SensingOperator op(plane(3, 4, 0, 1, rng), step, 3);
    const auto zs = op.volume_shape();
    const auto z = T64::from_values(zs, uniform(numel(zs), -1, 1, rng));
    const auto y = T64::from_values({3, op.shifted_width()}, uniform(3 * op.shifted_width(), -1, 1, rng));
    const double eta = std::exp(logeta(rng));
    const auto x = unfold::data_projection(z, op, y, T64::scalar(eta));
    const Vec xv(x.values().begin(), x.values().end());
    const Eigen::VectorXd want = oracle::dense_projection(
        oracle::sensing_matrix(op.mask(), step, 3),
        oracle::as_vec(Vec(y.values().begin(), y.values().end())),
        oracle::as_vec(Vec(z.values().begin(), z.values().end())), eta);
    worst = std::max(worst, (oracle::as_vec(xv) - want).norm() / want.norm());
  }
  return {worst <= 1e-10, fmt("max relative error %.2e over 50 solves", worst)};
}

Outcome zoh() {
  Rng rng(104);
  const ssm::ScanDims dm{2, 6, 3, 5};
  const auto a = uniform(dm.channels * dm.state, -1.0, -0.01, rng);
  const auto b = uniform(dm.groups * dm.length * dm.state, -1, 1, rng);
  const auto dt = uniform(dm.seq_elems(), 1e-3, 3.0, rng);
  const auto d = ssm::discretize_zoh<double>(a, b, dt, dm);
  double worst = 0;
  for (std::size_t g = 0; g < dm.groups; ++g)
    for (std::size_t k = 0; k < dm.length; ++k)
      for (std::size_t c = 0; c < dm.channels; ++c)
        for (std::size_t s = 0; s < dm.state; ++s) {
          const std::size_t row = g * dm.length + k;
          const std::size_t q = (row * dm.channels + c) * dm.state + s;
          double ea, gain;
          oracle::zoh_series(dt[row * dm.channels + c], a[c * dm.state + s], ea, gain);
          const double bb = gain * b[row * dm.state + s];
          worst = std::max(worst, std::abs(d.a_bar[q] - ea) / std::abs(ea));
          worst = std::max(worst, std::abs(d.b_bar[q] - bb) / std::max(std::abs(bb), 1e-300));
        }
  const ssm::ScanDims one{1, 1, 1, 1};
  const Vec la{-0.7}, lb{2.0}, tiny{1e-8};
  const auto lim = ssm::discretize_zoh<double>(la, lb, tiny, one);
  const double limit_err = std::abs(lim.b_bar[0] / (1e-8 * 2.0) - 1.0);
  return {worst <= 1e-10 && limit_err <= 1e-6,
          fmt("series rel err %.2e, small-step rel err %.2e", worst, limit_err)};
}

Outcome scan_equivalence() {
  Rng rng(105);
  std::uniform_int_distribution<std::size_t> G(1, 4), L(1, 400), D(1, 6), S(1, 8), P(1, 8);
  double worst = 0;
  for (int t = 0; t < 200; ++t) {
    const ssm::ScanDims dm{G(rng), L(rng), D(rng), S(rng)};
    const auto u = uniform(dm.seq_elems(), -1, 1, rng);
    const auto delta = uniform(dm.seq_elems(), 0.01, 1.0, rng);
    const auto a = uniform(dm.channels * dm.state, -1.0, -0.01, rng);
    const auto b = uniform(dm.groups * dm.length * dm.state, -1, 1, rng);
    const auto c = uniform(dm.groups * dm.length * dm.state, -1, 1, rng);
    const auto skip = uniform(dm.channels, 0.5, 1.5, rng);
    const auto disc = ssm::discretize_zoh<double>(a, b, delta, dm);
    const auto ys = ssm::selective_scan_seq<double>(u, disc.a_bar, disc.b_bar, c, skip, dm);
    const auto yp = ssm::selective_scan_par<double>(u, disc.a_bar, disc.b_bar, c, skip, dm,
                                                    1 + std::size_t(t % 4), P(rng));
    worst = std::max(worst, oracle::rel_err(yp, ys));
  }

  bool exact = true, perms = true;
  std::normal_distribution<double> n(0, 1);
  for (const ssm::ScanLayout l : {ssm::ScanLayout{6, 4, 0}, ssm::ScanLayout{8, 8, 4},
                                  ssm::ScanLayout{5, 7, 0}, ssm::ScanLayout{6, 6, 3}}) {
    Vec v(l.height * l.width * 3);
    for (auto& x : v) x = n(rng);
    const auto merged = ssm::cross_merge(ssm::cross_scan(T64::from_values({l.height, l.width, 3}, v), l.window), l);
    for (std::size_t i = 0; i < v.size(); ++i) exact = exact && merged.values()[i] / 4 == v[i];
    for (auto q : ssm::scan_paths(l)) {
      std::sort(q.begin(), q.end());
      std::vector<std::size_t> id(l.height * l.width);
      std::iota(id.begin(), id.end(), 0);
      perms = perms && q == id;
    }
  }
  return {worst <= 1e-12 && exact && perms,
          fmt("parallel vs sequential %.2e; round-trip exact %g; paths are permutations %g", worst,
              exact, perms)};
}

Outcome gradients() {
  const auto results = gradcheck::run_suite();
  bool ok = !results.empty();
  double prim = 0, e2e = 0;
  std::string failed;
  for (const auto& r : results) {
    const bool end_to_end = r.name.rfind("end_to_end", 0) == 0;
    const double limit = end_to_end ? 1e-3 : 1e-4;
    const bool pass = r.passed && r.tolerance <= limit;
    (end_to_end ? e2e : prim) = std::max(end_to_end ? e2e : prim, r.max_error);
    if (!pass) failed += " " + r.name;
    ok = ok && pass;
  }
  std::ostringstream s;
  s << results.size() << " cases; worst primitive/scan " << prim << ", end-to-end " << e2e;
  if (!failed.empty()) s << "; failed:" << failed;
  return {ok, s.str()};
}

Outcome desk_training() {
  Config c;
  c.val_every = 0;
  const auto all = synth_dataset(80, 32, 32, 4, c.seed);
  const std::vector<HsiCube> tr(all.begin(), all.begin() + 64), te(all.begin() + 64, all.end());
  Rng rng(c.seed);
  const auto mask = cassi::random_mask(32, 32, rng);
  const double base = unfold::baseline_psnr(c, te, mask, 7);
  double psnr_v[2];
  for (int i = 0; i < 2; ++i) {
    Config cv = c;
    cv.variant = i == 0 ? Variant::full : Variant::light;
    unfold::Model<float> m(cv);
    unfold::train(m, tr, {}, mask);
    psnr_v[i] = unfold::evaluate_psnr(m, te, mask, 7);
  }
  const bool ok = psnr_v[0] - base >= 3.0 && psnr_v[0] >= psnr_v[1] - 0.2;
  return {ok, fmt("adjoint %.3f dB, full %.3f dB, light %.3f dB (full - light %+.3f)", base,
                  psnr_v[0], psnr_v[1], psnr_v[0] - psnr_v[1])};
}

std::size_t reachable_leaves(const T64& root) {
  std::set<const void*> out;
  std::unordered_set<const Node<double>*> seen;
  std::vector<const Node<double>*> stack{root.node()};
  while (!stack.empty()) {
    const auto* n = stack.back();
    stack.pop_back();
    if (!seen.insert(n).second) continue;
    if (n->is_leaf() && n->requires_grad) out.insert(n);
    for (const auto& p : n->parents) stack.push_back(p.get());
  }
  return out.size();
}

Outcome shared_weights() {
  Config c;
  c.channels = 4;
  c.state_dim = 4;
  c.bands = 2;
  c.window = 2;
  c.encoder_depth = 1;
  c.height = c.width = c.crop = 8;
  unfold::Model<double> m(c);
  Rng rng(108);
  cassi::SensingOperator op(cassi::random_mask(8, 8, rng), 2, 2);
  const auto y = T64::from_values({8, op.shifted_width()}, uniform(8 * op.shifted_width(), 0, 1, rng));
  std::size_t n[3];
  const std::size_t ts[3] = {1, 3, 9};
  for (int i = 0; i < 3; ++i) n[i] = reachable_leaves(m.run_stages(op, y, ts[i]));
  const bool ok = n[0] == n[1] && n[1] == n[2] && n[0] == m.params().size();
  return {ok, fmt("reachable parameter tensors T=1: %g, T=3: %g, T=9: %g (model holds %g)",
                  double(n[0]), double(n[1]), double(n[2]), double(m.params().size()))};
}

Outcome scaling() {
  const unsigned hw = std::thread::hardware_concurrency();
  bench::Options o;
  const auto rows = bench::run(o);
  const double slope = bench::loglog_slope(rows, "sequential");

  bench::Options sp;
  sp.groups = 4;
  sp.min_log2 = sp.max_log2 = 16;
  sp.threads = std::max<std::size_t>(4, hw);
  const double speed = bench::speedup(bench::run(sp), 65536);

  const bool slope_ok = std::abs(slope - 1.0) <= 0.15;
  const bool speed_ok = speed >= 2.0;
  Outcome out{slope_ok && speed_ok,
              fmt("slope %.3f; speedup %.3fx at L=65536 with %g threads on %g hardware threads",
                  slope, speed, double(sp.threads), double(hw))};
  if (slope_ok && !speed_ok && hw < 4) {
    out.hardware_bound = true;
    out.detail += "; speedup needs at least 4 hardware threads";
  }
  return out;
}

Outcome metrics() {
  Rng rng(110);
  std::uniform_real_distribution<double> u(0, 1);
  HsiCube a = HsiCube::zeros(16, 14, 2), b = a;
  for (auto& v : a.values) v = u(rng);
  for (auto& v : b.values) v = u(rng);
  bool ok = std::isinf(psnr(a, a)) && ssim(a, a) == 1.0;
  ok = ok && std::abs(psnr(a, b) - psnr(b, a)) <= 1e-12 && std::abs(ssim(a, b) - ssim(b, a)) <= 1e-12;
  ok = ok && ssim(a, b) <= 1.0 && ssim(a, b) >= -1.0;

  auto shifted = a;
  for (auto& v : shifted.values) v += 0.1;
  ok = ok && std::abs(psnr(a, shifted) - 20.0) <= 1e-9;
  ok = ok && std::abs(psnr(a, b) - oracle::psnr(a.values, b.values)) <= 1e-9;

  // scikit-image reference: gaussian weights, sigma 1.5, population covariance
  HsiCube p = HsiCube::zeros(16, 16, 2);
  for (std::size_t i = 0; i < 16; ++i)
    for (std::size_t j = 0; j < 16; ++j) {
      p.at(i, j, 0) = 0.5 + 0.4 * std::sin(0.7 * double(i)) * std::cos(0.45 * double(j));
      p.at(i, j, 1) = 0.5 + 0.45 * std::cos(0.3 * double(i) + 0.9 * double(j));
    }
  auto inv = p;
  for (auto& v : inv.values) v = 1 - v;
  const double s_inv = ssim(p, inv);
  ok = ok && std::abs(s_inv - -0.9034825265531243) <= 1e-9;
  return {ok, fmt("psnr(a,b) %.4f dB, ssim(a,b) %.4f, ssim(p,1-p) %.10f", psnr(a, b), ssim(a, b), s_inv)};
}

}  // namespace

int main() {
  std::printf("hardware threads: %u\n", std::thread::hardware_concurrency());
  report(1, "operator adjointness", 1, adjointness);
  report(2, "dense oracle equivalence", 5, dense_equivalence);
  report(3, "data projection solve", 5, projection_solve);
  report(4, "zoh discretization", 1, zoh);
  report(5, "scan equivalence", 10, scan_equivalence);
  report(6, "gradient suite", 60, gradients);
  report(7, "desk-scale training", 900, desk_training);
  report(8, "shared stage weights", 5, shared_weights);
  report(9, "scaling benchmark", 120, scaling);
  report(10, "metric sanity", 5, metrics);
  std::printf("%d failing criteria that are not hardware-bound\n", hard_failures);
  return hard_failures == 0 ? 0 : 1;
}
