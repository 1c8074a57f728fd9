#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "dhm/cube.hpp"

namespace dhm {

/// 10 log10(peak^2 / MSE) over all voxels; +inf when the cubes are identical.
double psnr(const HsiCube& a, const HsiCube& b, double peak = 1.0);

/// Per-band structural similarity (11x11 Gaussian window, sigma 1.5,
/// K1 = 0.01, K2 = 0.03, valid region only, data range 1) averaged over bands.
double ssim(const HsiCube& a, const HsiCube& b);

struct SceneScore {
  std::string name;
  double psnr = 0;
  double ssim = 0;
};

struct EvalReport {
  std::vector<SceneScore> scenes;
  double runtime_seconds = 0;
  std::string config_fingerprint;

  double mean_psnr() const;
  double mean_ssim() const;
  /// Header line then one row per scene and a final "mean" row.
  std::string to_tsv() const;
  std::string to_key_value() const;
};

/// FNV-1a of the text, as 16 hex digits.
std::string fingerprint(const std::string& text);

/// Smooth random cubes: sums of 2-D Gaussian blobs whose spectra are
/// low-order polynomials, normalized to [0, 1].
std::vector<HsiCube> synth_dataset(std::size_t count, std::size_t height, std::size_t width,
                                   std::size_t bands, std::uint64_t seed);

}  // namespace dhm
