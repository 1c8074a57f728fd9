#include "dhm/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "dhm/cassi.hpp"
#include "dhm/ops.hpp"
#include "dhm/ssm.hpp"
#include "dhm/unfolding.hpp"

namespace dhm::gradcheck {

namespace {

double weighted_sum(const Tensor<double>& out, const std::vector<double>& w) {
  double s = 0;
  auto v = out.values();
  for (std::size_t i = 0; i < v.size(); ++i) s += v[i] * w[i];
  return s;
}

}  // namespace

CaseResult check(const std::string& name, std::vector<Tensor<double>> inputs,
                 const std::function<Tensor<double>()>& f, double tolerance,
                 const Options& opts) {
  CaseResult res;
  res.name = name;
  res.tolerance = tolerance;
  Rng rng(opts.seed);
  std::vector<double> weights;
  {
    NoGradGuard guard;
    const auto probe = f();
    std::uniform_real_distribution<double> u(0.5, 1.5);
    weights.resize(probe.numel());
    for (auto& w : weights) w = u(rng);
  }
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  const auto out = f();
  if (out.numel() != weights.size()) throw ShapeError("gradcheck: output size changed");
  const auto root = ops::sum_all(ops::mul(out, Tensor<double>::from_values(out.shape(), weights)));
  root.backward();
  std::vector<std::vector<double>> analytic;
  for (auto& t : inputs) {
    if (t.has_grad())
      analytic.emplace_back(t.grad().begin(), t.grad().end());
    else
      analytic.emplace_back(t.numel(), 0.0);
    t.zero_grad();
  }

  const double floor = opts.atol / tolerance;
  NoGradGuard guard;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto values = inputs[k].mutable_values();
    std::vector<std::size_t> idx(values.size());
    std::iota(idx.begin(), idx.end(), 0);
    if (opts.max_per_tensor > 0 && idx.size() > opts.max_per_tensor) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(opts.max_per_tensor);
    }
    for (std::size_t i : idx) {
      const double orig = values[i];
      values[i] = orig + opts.step;
      const double fp = weighted_sum(f(), weights);
      values[i] = orig - opts.step;
      const double fm = weighted_sum(f(), weights);
      values[i] = orig;
      const double num = (fp - fm) / (2 * opts.step);
      const double a = analytic[k][i];
      const double e = std::abs(a - num) / (floor + std::max(std::abs(a), std::abs(num)));
      res.max_error = std::max(res.max_error, e);
      ++res.probes;
    }
  }
  res.passed = res.max_error <= tolerance;
  return res;
}

namespace {

using T = Tensor<double>;
using Runner = std::function<CaseResult(Rng&, const SuiteOptions&)>;

T rand_t(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = u(rng);
  return T::from_values(std::move(shape), std::move(v), true);
}

constexpr double kPrim = 1e-4;

Runner unary(std::function<T(const T&)> fn, double lo = -2.0, double hi = 2.0) {
  return [fn, lo, hi](Rng& rng, const SuiteOptions&) {
    auto x = rand_t({3, 4}, rng, lo, hi);
    return check("", {x}, [=] { return fn(x); }, kPrim);
  };
}

Runner binary(std::function<T(const T&, const T&)> fn, Shape sa, Shape sb, double lo = -1.0,
              double hi = 1.0) {
  return [=](Rng& rng, const SuiteOptions&) {
    auto a = rand_t(sa, rng);
    auto b = rand_t(sb, rng, lo, hi);
    return check("", {a, b}, [=] { return fn(a, b); }, kPrim);
  };
}

// Forward doubles the input; the adjoint has the wrong sign.
T faulty_scale(const T& x) {
  std::vector<double> out(x.values().begin(), x.values().end());
  for (auto& v : out) v *= 2.0;
  return make_result<double>(x.shape(), std::move(out), {x}, "faulty_scale", [](Node<double>& n) {
    auto g = n.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] -= 2.0 * n.grad[i];
  });
}

Runner scan_case(ssm::ScanAlgo algo) {
  return [algo](Rng& rng, const SuiteOptions&) {
    const std::size_t G = 2, L = 9, D = 3, S = 2;
    auto u = rand_t({G, L, D}, rng);
    auto delta = rand_t({G, L, D}, rng, 0.05, 0.8);
    auto a = rand_t({D, S}, rng, -1.5, -0.2);
    auto b = rand_t({G, L, S}, rng);
    auto c = rand_t({G, L, S}, rng);
    auto skip = rand_t({D}, rng);
    const ssm::ScanOptions o{algo, 2, 3};
    return check("", {u, delta, a, b, c, skip},
                 [=] { return ssm::selective_scan(u, delta, a, b, c, skip, o); }, kPrim);
  };
}

Config micro_config(std::uint64_t seed) {
  Config c;
  c.channels = 4;
  c.state_dim = 4;
  c.bands = 2;
  c.stages = 2;
  c.max_stages = 2;
  c.window = 2;
  c.encoder_depth = 2;
  c.bottleneck_depth = 1;
  c.height = c.width = c.crop = 8;
  c.shift_step = 2;
  c.seed = seed;
  return c;
}

CaseResult end_to_end(Rng& rng, const SuiteOptions& so) {
  const Config cfg = micro_config(so.seed);
  unfold::Model<double> model(cfg);
  const cassi::SensingOperator op(cassi::random_mask(8, 8, rng), cfg.shift_step, cfg.bands);
  HsiCube cube = HsiCube::zeros(8, 8, 2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (auto& v : cube.values) v = u(rng);
  const HsiCube gt = cassi::shift_bands(cube, cfg.shift_step);
  const auto y = cassi::to_tensor<double>(op.project(gt));
  const auto x = cassi::to_tensor<double>(gt);
  std::vector<T> inputs;
  for (const auto& [_, t] : model.params().items()) inputs.push_back(t);
  Options o;
  o.max_per_tensor = so.e2e_probes_per_tensor;
  o.seed = so.seed;
  return check("", inputs,
               [&] { return unfold::charbonnier_loss(model.run(op, y), x, cfg.charbonnier_eps); },
               1e-3, o);
}

std::vector<std::pair<std::string, Runner>> cases(bool inject_fault) {
  std::vector<std::pair<std::string, Runner>> c = {
      {"add", binary([](const T& a, const T& b) { return ops::add(a, b); }, {3, 4}, {4})},
      {"sub", binary([](const T& a, const T& b) { return ops::sub(a, b); }, {3, 4}, {3, 1})},
      {"mul", binary([](const T& a, const T& b) { return ops::mul(a, b); }, {3, 4}, {3, 4})},
      {"div", binary([](const T& a, const T& b) { return ops::div(a, b); }, {3, 4}, {1, 4}, 0.5,
                     2.0)},
      {"neg", unary([](const T& x) { return ops::neg(x); })},
      {"scale", unary([](const T& x) { return ops::scale(x, 1.7); })},
      {"add_scalar", unary([](const T& x) { return ops::add_scalar(x, 0.3); })},
      {"exp", unary([](const T& x) { return ops::exp(x); })},
      {"sqrt", unary([](const T& x) { return ops::sqrt(x); }, 0.3, 2.0)},
      {"softplus", unary([](const T& x) { return ops::softplus(x); })},
      {"sigmoid", unary([](const T& x) { return ops::sigmoid(x); })},
      {"silu", unary([](const T& x) { return ops::silu(x); })},
      {"gelu", unary([](const T& x) { return ops::gelu(x); })},
      {"broadcast_to", unary([](const T& x) {
         return ops::broadcast_to(ops::reshape(x, {3, 1, 4}), {3, 2, 4});
       })},
      {"matmul", binary([](const T& a, const T& b) { return ops::matmul(a, b); }, {3, 4}, {4, 5})},
      {"linear",
       [](Rng& rng, const SuiteOptions&) {
         auto x = rand_t({2, 3, 4}, rng), w = rand_t({4, 5}, rng), b = rand_t({5}, rng);
         return check("", {x, w, b}, [=] { return ops::linear(x, w, b); }, kPrim);
       }},
      {"conv2d",
       [](Rng& rng, const SuiteOptions&) {
         auto x = rand_t({5, 6, 3}, rng), w = rand_t({3, 3, 3, 2}, rng), b = rand_t({2}, rng);
         return check("", {x, w, b}, [=] { return ops::conv2d(x, w, b, 1, 1); }, kPrim);
       }},
      {"conv2d_stride2",
       [](Rng& rng, const SuiteOptions&) {
         auto x = rand_t({6, 6, 2}, rng), w = rand_t({4, 4, 2, 3}, rng), b = rand_t({3}, rng);
         return check("", {x, w, b}, [=] { return ops::conv2d(x, w, b, 2, 1); }, kPrim);
       }},
      {"depthwise_conv2d",
       [](Rng& rng, const SuiteOptions&) {
         auto x = rand_t({5, 4, 3}, rng), w = rand_t({3, 3, 3}, rng), b = rand_t({3}, rng);
         return check("", {x, w, b}, [=] { return ops::depthwise_conv2d(x, w, b, 1, 1); }, kPrim);
       }},
      {"conv_transpose2d",
       [](Rng& rng, const SuiteOptions&) {
         auto x = rand_t({3, 4, 3}, rng), w = rand_t({2, 2, 3, 2}, rng), b = rand_t({2}, rng);
         return check("", {x, w, b}, [=] { return ops::conv_transpose2d(x, w, b, 2, 0); }, kPrim);
       }},
      {"conv_transpose2d_pad",
       [](Rng& rng, const SuiteOptions&) {
         auto x = rand_t({3, 3, 2}, rng), w = rand_t({3, 3, 2, 2}, rng);
         return check("", {x, w}, [=] { return ops::conv_transpose2d(x, w, T(), 2, 1); }, kPrim);
       }},
      {"avg_pool2d", unary([](const T& x) {
         return ops::avg_pool2d(ops::reshape(x, {2, 6, 1}), 2, 3, 2, 3);
       })},
      {"pad2d", unary([](const T& x) { return ops::pad2d(ops::reshape(x, {3, 4, 1}), 1, 0, 2, 1); })},
      {"concat", binary([](const T& a, const T& b) { return ops::concat<double>({a, b}, 1); },
                        {3, 4}, {3, 2})},
      {"slice", unary([](const T& x) { return ops::slice(x, 1, 1, 3); })},
      {"reshape", unary([](const T& x) { return ops::reshape(x, {2, 6}); })},
      {"permute", unary([](const T& x) { return ops::permute(ops::reshape(x, {2, 3, 2}), {2, 0, 1}); })},
      {"gather_rows", unary([](const T& x) { return ops::gather_rows(x, {2, 0, 2, 1}); })},
      {"sum", unary([](const T& x) { return ops::sum(ops::reshape(x, {3, 2, 2}), {0, 2}); })},
      {"mean", unary([](const T& x) { return ops::mean(x, {1}, true); })},
      {"layernorm", unary([](const T& x) { return ops::layernorm(x); })},
      {"composite_conv_layernorm_softplus",
       [](Rng& rng, const SuiteOptions&) {
         auto x = rand_t({4, 4, 2}, rng), w = rand_t({3, 3, 2, 3}, rng), b = rand_t({3}, rng);
         return check("", {x, w, b},
                      [=] { return ops::softplus(ops::layernorm(ops::conv2d(x, w, b, 1, 1))); },
                      kPrim);
       }},
      {"cassi_project_adjoint",
       [](Rng& rng, const SuiteOptions&) {
         const cassi::SensingOperator op(cassi::random_mask(3, 4, rng), 1, 3);
         auto x = rand_t(op.volume_shape(), rng);
         return check("", {x},
                      [=] { return cassi::adjoint(op, ops::exp(cassi::project(op, x))); }, kPrim);
       }},
      {"scan_sequential", scan_case(ssm::ScanAlgo::sequential)},
      {"scan_parallel", scan_case(ssm::ScanAlgo::parallel)},
      {"hsi_ssm_direction",
       [](Rng& rng, const SuiteOptions&) {
         ParameterSet<double> ps;
         const auto p = ssm::make_ssm_params(ps, "s", 3, 2, rng);
         auto seq = rand_t({2, 6, 3}, rng);
         std::vector<T> in{seq};
         for (const auto& [_, t] : ps.items()) in.push_back(t);
         return check("", in, [=] { return ssm::hsi_ssm_direction(seq, p); }, kPrim);
       }},
      {"cross_scan_merge",
       [](Rng& rng, const SuiteOptions&) {
         auto f = rand_t({4, 4, 2}, rng);
         return check("", {f}, [=] {
           auto s = ssm::cross_scan(f, 2);
           for (auto& t : s) t = ops::mul(t, t);
           return ssm::cross_merge(s, {4, 4, 2});
         }, kPrim);
       }},
      {"end_to_end_micro_dhm", end_to_end},
  };
  if (inject_fault)
    c.emplace_back("faulty_scale", unary([](const T& x) { return faulty_scale(x); }));
  return c;
}

}  // namespace

std::vector<std::string> case_names(bool inject_fault) {
  std::vector<std::string> out;
  for (const auto& [n, _] : cases(inject_fault)) out.push_back(n);
  return out;
}

std::vector<CaseResult> run_suite(const SuiteOptions& opts) {
  std::vector<CaseResult> out;
  std::size_t k = 0;
  for (const auto& [name, run] : cases(opts.inject_fault)) {
    ++k;
    if (!opts.filter.empty() && name.find(opts.filter) == std::string::npos) continue;
    Rng rng(opts.seed * 1000003u + k);
    CaseResult r;
    try {
      r = run(rng, opts);
    } catch (const std::exception& e) {
      r.passed = false;
      r.detail = e.what();
    }
    r.name = name;
    out.push_back(r);
  }
  return out;
}

std::string format_report(const std::vector<CaseResult>& results) {
  std::string s;
  char buf[256];
  for (const auto& r : results) {
    std::snprintf(buf, sizeof buf, "%-36s max_err=%.3e tol=%.0e probes=%-5zu %s", r.name.c_str(),
                  r.max_error, r.tolerance, r.probes, r.passed ? "PASS" : "FAIL");
    s += buf;
    if (!r.detail.empty()) s += "  (" + r.detail + ")";
    s += '\n';
  }
  return s;
}

bool all_passed(const std::vector<CaseResult>& results) {
  return std::all_of(results.begin(), results.end(), [](const auto& r) { return r.passed; });
}

}  // namespace dhm::gradcheck
