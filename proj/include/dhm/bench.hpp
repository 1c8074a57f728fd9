#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

// Timing of the fused selective-scan forward kernel (float32).
namespace dhm::bench {

struct Options {
  std::size_t groups = 1;
  std::size_t channels = 16;
  std::size_t state = 16;
  std::size_t min_log2 = 10;
  std::size_t max_log2 = 18;
  std::size_t reps = 3;     // best of
  std::size_t threads = 4;  // parallel mode
  std::uint64_t seed = 0;
};

struct Row {
  std::string mode;  // "sequential" or "parallel"
  std::size_t groups = 0, length = 0, channels = 0, state = 0, threads = 0;
  double ns_per_element = 0;  // element = one (g, k, d) output
  double seconds = 0;
};

std::vector<Row> run(const Options& opts);

/// Least-squares slope of log(seconds) against log(L) for one mode.
double loglog_slope(const std::vector<Row>& rows, const std::string& mode);

/// sequential seconds / parallel seconds at length L; 0 if either is missing.
double speedup(const std::vector<Row>& rows, std::size_t length);

/// Header, one row per measurement, then `#`-prefixed summary lines.
std::string to_tsv(const std::vector<Row>& rows);

}  // namespace dhm::bench
