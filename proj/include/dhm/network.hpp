#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "dhm/config.hpp"
#include "dhm/parameters.hpp"
#include "dhm/ssm.hpp"

// U-shaped state-space denoiser. Feature maps are (H, W, D) tensors.
namespace dhm::net {

template <class T>
struct NormAffine {
  Tensor<T> gamma;  // (D)
  Tensor<T> beta;   // (D)
};

/// One hyperspectral S4 branch; the same weights serve the global (window 0)
/// and windowed variants.
template <class T>
struct HsbWeights {
  Tensor<T> dw_w, dw_b;  // depthwise 3x3 (3, 3, D), (D)
  Tensor<T> pu_w, pu_b;  // upper projection (D, D)
  Tensor<T> pl_w, pl_b;  // lower (gate) projection
  Tensor<T> po_w, po_b;  // output projection
  NormAffine<T> norm;
  std::array<ssm::SsmParams<T>, 4> dirs;
};

template <class T>
struct GffnWeights {
  Tensor<T> gate_w, gate_b;  // (D, 2D)
  Tensor<T> val_w, val_b;    // (D, 2D)
  Tensor<T> dw_w, dw_b;      // (3, 3, 2D)
  Tensor<T> out_w, out_b;    // (2D, D)
};

template <class T>
struct DhsbWeights {
  NormAffine<T> global_norm;
  HsbWeights<T> global;
  std::optional<NormAffine<T>> local_norm;  // local pair absent in the light variant
  std::optional<HsbWeights<T>> local;
  NormAffine<T> ffn_norm;
  GffnWeights<T> ffn;
};

template <class T>
NormAffine<T> make_norm(ParameterSet<T>& params, const std::string& prefix, std::size_t dim);
template <class T>
HsbWeights<T> make_hsb(ParameterSet<T>& params, const std::string& prefix, std::size_t dim,
                       std::size_t state_dim, Rng& rng);
template <class T>
GffnWeights<T> make_gffn(ParameterSet<T>& params, const std::string& prefix, std::size_t dim,
                         Rng& rng);
template <class T>
DhsbWeights<T> make_dhsb(ParameterSet<T>& params, const std::string& prefix, std::size_t dim,
                         std::size_t state_dim, bool with_local, Rng& rng);

/// Layer norm over channels followed by the affine map.
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const NormAffine<T>& n);

/// Merged four-direction SSM features of the upper branch, before the norm
/// and the gate. window == 0 scans the whole map.
template <class T>
Tensor<T> hsb_ssm_features(const HsbWeights<T>& w, const Tensor<T>& f, std::size_t window,
                           const ssm::ScanOptions& opts = {});

template <class T>
Tensor<T> hsb_forward(const HsbWeights<T>& w, const Tensor<T>& f, std::size_t window,
                      const ssm::ScanOptions& opts = {});

template <class T>
Tensor<T> ghsb_forward(const HsbWeights<T>& w, const Tensor<T>& f,
                       const ssm::ScanOptions& opts = {}) {
  return hsb_forward(w, f, 0, opts);
}

/// Throws ShapeError when `window` does not divide the extents.
template <class T>
Tensor<T> lhsb_forward(const HsbWeights<T>& w, const Tensor<T>& f, std::size_t window,
                       const ssm::ScanOptions& opts = {});

template <class T>
Tensor<T> gffn_forward(const GffnWeights<T>& w, const Tensor<T>& f);

/// Pre-norm residual block: global and local branches in `order`, then the FFN.
template <class T>
Tensor<T> dhsb_forward(const DhsbWeights<T>& w, const Tensor<T>& f, std::size_t window,
                       BlockOrder order, const ssm::ScanOptions& opts = {});

template <class T>
class Denoiser {
 public:
  Denoiser(const Config& cfg, ParameterSet<T>& params, Rng& rng,
           const std::string& prefix = "denoiser");

  /// x: (H, W*, bands); rho: single-element tensor (> 0). Returns x + F_z.
  Tensor<T> forward(const Tensor<T>& x, const Tensor<T>& rho) const;

  const Config& config() const { return cfg_; }
  /// Final 3x3 convolution, exposed so tests can zero it.
  const Tensor<T>& output_weight() const { return out_w_; }
  const Tensor<T>& output_bias() const { return out_b_; }

 private:
  struct Level {
    DhsbWeights<T> block;
    Tensor<T> down_w, down_b;  // encoder only
  };
  struct UpLevel {
    Tensor<T> up_w, up_b;
    Tensor<T> fuse_w, fuse_b;
    DhsbWeights<T> block;
  };

  std::size_t level_state_dim(std::size_t dim) const;

  Config cfg_;
  ssm::ScanOptions scan_;
  Tensor<T> embed_w_, embed_b_;
  std::vector<Level> encoder_;
  std::vector<DhsbWeights<T>> bottleneck_;
  std::vector<UpLevel> decoder_;
  Tensor<T> out_w_, out_b_;
};

/// Same configuration without the local branches.
Config variant_light(Config cfg);

}  // namespace dhm::net
