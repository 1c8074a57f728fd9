#include "dhm/bench.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>

#include "dhm/ssm_kernel.hpp"

namespace dhm::bench {

std::vector<Row> run(const Options& o) {
  std::vector<Row> rows;
  std::mt19937_64 rng(o.seed);
  std::uniform_real_distribution<float> u(-1.f, 1.f), dt(0.01f, 0.1f), neg(-1.f, -0.01f);
  for (std::size_t lg = o.min_log2; lg <= o.max_log2; ++lg) {
    const ssm::ScanDims dims{o.groups, std::size_t(1) << lg, o.channels, o.state};
    std::vector<float> x(dims.seq_elems()), delta(dims.seq_elems());
    std::vector<float> b(dims.groups * dims.length * dims.state), c(b.size());
    std::vector<float> a(dims.channels * dims.state), skip(dims.channels, 1.f);
    for (auto& v : x) v = u(rng);
    for (auto& v : delta) v = dt(rng);
    for (auto& v : b) v = u(rng);
    for (auto& v : c) v = u(rng);
    for (auto& v : a) v = neg(rng);
    const ssm::FusedInputs<float> in{x, delta, a, b, c, skip};
    for (int m = 0; m < 2; ++m) {
      const bool par = m == 1;
      const ssm::ScanOptions so{par ? ssm::ScanAlgo::parallel : ssm::ScanAlgo::sequential,
                                par ? o.threads : 1, 0};
      double best = 1e300;
      volatile float sink = 0;
      for (std::size_t r = 0; r < std::max<std::size_t>(1, o.reps); ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        const auto y = ssm::fused_scan_forward<float>(in, dims, so);
        const auto t1 = std::chrono::steady_clock::now();
        sink = sink + y[y.size() / 2];
        best = std::min(best, std::chrono::duration<double>(t1 - t0).count());
      }
      Row row;
      row.mode = par ? "parallel" : "sequential";
      row.groups = dims.groups;
      row.length = dims.length;
      row.channels = dims.channels;
      row.state = dims.state;
      row.threads = so.threads;
      row.seconds = best;
      row.ns_per_element = best * 1e9 / double(dims.seq_elems());
      rows.push_back(row);
    }
  }
  return rows;
}

double loglog_slope(const std::vector<Row>& rows, const std::string& mode) {
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  std::size_t n = 0;
  for (const auto& r : rows) {
    if (r.mode != mode) continue;
    const double x = std::log(double(r.length)), y = std::log(r.seconds);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
    ++n;
  }
  if (n < 2) return 0;
  return (double(n) * sxy - sx * sy) / (double(n) * sxx - sx * sx);
}

double speedup(const std::vector<Row>& rows, std::size_t length) {
  double seq = 0, par = 0;
  for (const auto& r : rows) {
    if (r.length != length) continue;
    (r.mode == "sequential" ? seq : par) = r.seconds;
  }
  return seq > 0 && par > 0 ? seq / par : 0.0;
}

std::string to_tsv(const std::vector<Row>& rows) {
  std::string s = "mode\tG\tL\tD\tD_s\tthreads\tns_per_element\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s\t%zu\t%zu\t%zu\t%zu\t%zu\t%.4f\n", r.mode.c_str(), r.groups,
                  r.length, r.channels, r.state, r.threads, r.ns_per_element);
    s += buf;
  }
  std::snprintf(buf, sizeof buf, "# slope_sequential\t%.4f\n# slope_parallel\t%.4f\n",
                loglog_slope(rows, "sequential"), loglog_slope(rows, "parallel"));
  s += buf;
  std::snprintf(buf, sizeof buf, "# speedup_L65536\t%.4f\n", speedup(rows, 65536));
  s += buf;
  return s;
}

}  // namespace dhm::bench
