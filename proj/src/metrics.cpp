#include "dhm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace dhm {

namespace {

void same_shape(const char* what, const HsiCube& a, const HsiCube& b) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(what) + ": incompatible shapes " + to_string(a.shape()) +
                     " and " + to_string(b.shape()));
}

constexpr std::size_t kWin = 11;

std::vector<double> gaussian_window() {
  std::vector<double> g(kWin);
  double s = 0;
  for (std::size_t i = 0; i < kWin; ++i) {
    const double d = double(i) - 5.0;
    g[i] = std::exp(-d * d / (2 * 1.5 * 1.5));
    s += g[i];
  }
  for (auto& v : g) v /= s;
  return g;
}

// Valid-mode separable filtering of one band.
std::vector<double> filter_valid(const std::vector<double>& img, std::size_t h, std::size_t w,
                                 const std::vector<double>& g) {
  const std::size_t ho = h - kWin + 1, wo = w - kWin + 1;
  std::vector<double> rows(h * wo, 0.0);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < wo; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < kWin; ++k) s += g[k] * img[i * w + j + k];
      rows[i * wo + j] = s;
    }
  std::vector<double> out(ho * wo, 0.0);
  for (std::size_t i = 0; i < ho; ++i)
    for (std::size_t j = 0; j < wo; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < kWin; ++k) s += g[k] * rows[(i + k) * wo + j];
      out[i * wo + j] = s;
    }
  return out;
}

}  // namespace

double psnr(const HsiCube& a, const HsiCube& b, double peak) {
  same_shape("psnr", a, b);
  double se = 0;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    const double d = a.values[i] - b.values[i];
    se += d * d;
  }
  if (se == 0) return std::numeric_limits<double>::infinity();
  const double mse = se / double(a.values.size());
  return 10.0 * std::log10(peak * peak / mse);
}

double ssim(const HsiCube& a, const HsiCube& b) {
  same_shape("ssim", a, b);
  if (a.height < kWin || a.width < kWin)
    throw ShapeError("ssim: extents " + to_string(a.shape()) + " smaller than the 11x11 window");
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  const auto g = gaussian_window();
  const std::size_t h = a.height, w = a.width, n = h * w;
  double total = 0;
  for (std::size_t band = 0; band < a.bands; ++band) {
    std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
    for (std::size_t p = 0; p < n; ++p) {
      x[p] = a.values[p * a.bands + band];
      y[p] = b.values[p * a.bands + band];
      xx[p] = x[p] * x[p];
      yy[p] = y[p] * y[p];
      xy[p] = x[p] * y[p];
    }
    const auto mx = filter_valid(x, h, w, g), my = filter_valid(y, h, w, g);
    const auto sxx = filter_valid(xx, h, w, g), syy = filter_valid(yy, h, w, g);
    const auto sxy = filter_valid(xy, h, w, g);
    double acc = 0;
    for (std::size_t p = 0; p < mx.size(); ++p) {
      const double vx = sxx[p] - mx[p] * mx[p];
      const double vy = syy[p] - my[p] * my[p];
      const double cxy = sxy[p] - mx[p] * my[p];
      acc += ((2 * mx[p] * my[p] + c1) * (2 * cxy + c2)) /
             ((mx[p] * mx[p] + my[p] * my[p] + c1) * (vx + vy + c2));
    }
    total += acc / double(mx.size());
  }
  return total / double(a.bands);
}

double EvalReport::mean_psnr() const {
  if (scenes.empty()) return 0;
  double s = 0;
  for (const auto& sc : scenes) s += sc.psnr;
  return s / double(scenes.size());
}

double EvalReport::mean_ssim() const {
  if (scenes.empty()) return 0;
  double s = 0;
  for (const auto& sc : scenes) s += sc.ssim;
  return s / double(scenes.size());
}

std::string EvalReport::to_tsv() const {
  std::ostringstream os;
  os.precision(6);
  os << std::fixed;
  os << "scene\tpsnr_db\tssim\n";
  for (const auto& s : scenes) os << s.name << '\t' << s.psnr << '\t' << s.ssim << '\n';
  os << "mean\t" << mean_psnr() << '\t' << mean_ssim() << '\n';
  return os.str();
}

std::string EvalReport::to_key_value() const {
  std::ostringstream os;
  os.precision(10);
  os << "scenes=" << scenes.size() << '\n';
  os << "mean_psnr_db=" << mean_psnr() << '\n';
  os << "mean_ssim=" << mean_ssim() << '\n';
  os << "runtime_s=" << runtime_seconds << '\n';
  os << "config_fingerprint=" << config_fingerprint << '\n';
  for (const auto& s : scenes)
    os << "scene." << s.name << ".psnr_db=" << s.psnr << '\n'
       << "scene." << s.name << ".ssim=" << s.ssim << '\n';
  return os.str();
}

std::string fingerprint(const std::string& text) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::vector<HsiCube> synth_dataset(std::size_t count, std::size_t height, std::size_t width,
                                   std::size_t bands, std::uint64_t seed) {
  if (height == 0 || width == 0 || bands == 0)
    throw ShapeError("synth_dataset: extents must be >= 1");
  Rng rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> nblobs(3, 7);
  std::vector<HsiCube> out;
  out.reserve(count);
  for (std::size_t n = 0; n < count; ++n) {
    HsiCube c = HsiCube::zeros(height, width, bands);
    const int blobs = nblobs(rng);
    for (int k = 0; k < blobs; ++k) {
      const double ci = u(rng) * double(height), cj = u(rng) * double(width);
      const double sigma = (0.08 + 0.25 * u(rng)) * double(std::min(height, width));
      // quadratic spectrum over t in [0, 1]
      const double p0 = u(rng), p1 = 2 * u(rng) - 1, p2 = 2 * u(rng) - 1;
      std::vector<double> spec(bands);
      for (std::size_t b = 0; b < bands; ++b) {
        const double t = bands > 1 ? double(b) / double(bands - 1) : 0.0;
        spec[b] = std::max(0.05, p0 + p1 * t + p2 * t * t);
      }
      for (std::size_t i = 0; i < height; ++i)
        for (std::size_t j = 0; j < width; ++j) {
          const double di = double(i) - ci, dj = double(j) - cj;
          const double g = std::exp(-(di * di + dj * dj) / (2 * sigma * sigma));
          for (std::size_t b = 0; b < bands; ++b) c.at(i, j, b) += g * spec[b];
        }
    }
    const auto [lo, hi] = std::minmax_element(c.values.begin(), c.values.end());
    const double l = *lo, range = *hi - *lo;
    for (auto& v : c.values) v = range > 0 ? (v - l) / range : 0.0;
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace dhm
