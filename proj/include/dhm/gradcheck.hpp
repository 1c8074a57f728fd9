#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dhm/tensor.hpp"

// Central finite-difference checks of reverse-mode gradients in float64.
//
// Per element, e = |analytic - numeric| / (atol / rtol + max(|analytic|, |numeric|));
// a case passes when the largest e is at most its tolerance.
namespace dhm::gradcheck {

struct Options {
  double step = 1e-5;
  double atol = 1e-8;
  /// Elements probed per input tensor; 0 probes all of them.
  std::size_t max_per_tensor = 0;
  std::uint64_t seed = 0;
};

struct CaseResult {
  std::string name;
  double max_error = 0;
  double tolerance = 0;
  std::size_t probes = 0;
  bool passed = false;
  std::string detail;  // set when the case threw
};

/// Checks d f / d inputs. `f` must rebuild its graph from the current input
/// values on every call and return any-shaped output; it is reduced with a
/// fixed random weighting to a scalar.
CaseResult check(const std::string& name, std::vector<Tensor<double>> inputs,
                 const std::function<Tensor<double>()>& f, double tolerance,
                 const Options& opts = {});

struct SuiteOptions {
  std::uint64_t seed = 0;
  /// Adds a primitive whose adjoint has a deliberately flipped sign.
  bool inject_fault = false;
  /// Substring filter on case names; empty runs everything.
  std::string filter;
  /// Probes per weight tensor in the end-to-end case.
  std::size_t e2e_probes_per_tensor = 2;
};

std::vector<std::string> case_names(bool inject_fault = false);
std::vector<CaseResult> run_suite(const SuiteOptions& opts = {});

/// One line per case: name, max error, tolerance, probes, PASS/FAIL.
std::string format_report(const std::vector<CaseResult>& results);
bool all_passed(const std::vector<CaseResult>& results);

}  // namespace dhm::gradcheck
