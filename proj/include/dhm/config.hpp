#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "dhm/cassi.hpp"

namespace dhm {

enum class Variant { full, light };
enum class BlockOrder { gs_ls, ls_gs };

/// Every tunable of the pipeline. Text form is one `key=value` per line;
/// `#` starts a comment. Unknown keys are rejected and later assignments win.
struct Config {
  // denoiser
  std::size_t channels = 8;          // C
  std::size_t window = 4;            // N
  std::size_t encoder_depth = 2;     // N1
  std::size_t bottleneck_depth = 1;  // N2
  std::size_t state_dim = 8;         // D_s; 0 means D_s = D at each level
  Variant variant = Variant::full;
  BlockOrder block_order = BlockOrder::gs_ls;

  // unfolding
  std::size_t stages = 2;  // T
  std::size_t max_stages = 9;
  bool learnable_eta = true;
  bool learnable_rho = true;
  double fixed_eta = 1.0;
  double fixed_rho = 1.0;
  double charbonnier_eps = 1e-3;

  // data and optics
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t bands = 4;
  std::size_t shift_step = 2;
  std::string noise = "none";
  std::size_t train_count = 64;
  std::size_t val_count = 16;
  std::size_t crop = 32;

  // optimization
  double learning_rate = 1e-3;
  std::size_t steps = 500;
  std::size_t batch = 1;
  std::size_t lr_halve_every = 0;  // 0 keeps the rate constant
  std::size_t val_every = 100;
  std::uint64_t seed = 0;
  bool parallel_scan = false;

  void set(const std::string& key, const std::string& value);
  /// Applies `key=value` lines.
  void apply_text(const std::string& text);
  /// Applies one `key=value` override.
  void apply_override(const std::string& assignment);
  std::string to_text() const;
  static Config from_text(const std::string& text);
  static Config load(const std::string& path);
  static const std::vector<std::string>& keys();
  /// Dimensions used at full scale (C=28, N=8, D_s=D, 256x256x28).
  static Config full_scale();

  cassi::NoiseModel noise_model() const { return cassi::NoiseModel::parse(noise); }
  /// Spatial extents must be padded to a multiple of this.
  std::size_t pad_multiple() const { return window << encoder_depth; }
  void validate() const;
};

}  // namespace dhm
