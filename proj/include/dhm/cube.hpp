#pragma once

#include <cstddef>
#include <vector>

#include "dhm/common.hpp"

namespace dhm {

/// Hyperspectral volume, (row, col, band) interleaved: index (i * width + j) * bands + b.
/// Also used for shifted-domain volumes (width = W*).
struct HsiCube {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t bands = 0;
  std::vector<double> values;

  static HsiCube zeros(std::size_t h, std::size_t w, std::size_t b) {
    return {h, w, b, std::vector<double>(h * w * b, 0.0)};
  }
  double& at(std::size_t i, std::size_t j, std::size_t b) {
    return values[(i * width + j) * bands + b];
  }
  double at(std::size_t i, std::size_t j, std::size_t b) const {
    return values[(i * width + j) * bands + b];
  }
  Shape shape() const { return {height, width, bands}; }
  /// Extents >= 1, buffer size consistent, values finite.
  void validate(const char* what = "cube") const;
};

/// Single-channel image: masks, measurements, psi.
struct Plane {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> values;

  static Plane zeros(std::size_t h, std::size_t w) { return {h, w, std::vector<double>(h * w, 0.0)}; }
  double& at(std::size_t i, std::size_t j) { return values[i * width + j]; }
  double at(std::size_t i, std::size_t j) const { return values[i * width + j]; }
  void validate(const char* what = "plane") const;
};

}  // namespace dhm
