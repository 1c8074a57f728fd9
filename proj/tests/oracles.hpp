#pragma once

// Straight-line reference implementations used by the tests. None of these
// call into the library's kernels.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <random>
#include <vector>

#include "dhm/cube.hpp"

namespace oracle {

inline double max_abs(const std::vector<double>& v) {
  double m = 0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

template <class A, class B>
double rel_err(const A& got, const B& want) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i < want.size(); ++i) {
    num = std::max(num, std::abs(double(got[i]) - double(want[i])));
    den = std::max(den, std::abs(double(want[i])));
  }
  return den > 0 ? num / den : num;
}

/// Sensing matrix from the band-shift definition: measurement pixel (i, j)
/// reads mask(i, j - s*w) * x(i, j - s*w, w); columns follow the interleaved
/// shifted-volume order.
inline Eigen::MatrixXd sensing_matrix(const dhm::Plane& mask, std::size_t step,
                                      std::size_t bands) {
  const std::size_t H = mask.height, W = mask.width, Ws = W + step * (bands - 1);
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(Eigen::Index(H * Ws), Eigen::Index(H * Ws * bands));
  for (std::size_t i = 0; i < H; ++i)
    for (std::size_t j = 0; j < Ws; ++j)
      for (std::size_t w = 0; w < bands; ++w) {
        if (j < step * w || j - step * w >= W) continue;
        m(Eigen::Index(i * Ws + j), Eigen::Index((i * Ws + j) * bands + w)) =
            mask.at(i, j - step * w);
      }
  return m;
}

inline Eigen::VectorXd as_vec(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), Eigen::Index(v.size()));
}

/// argmin_X |y - Psi X|^2 + eta |X - z|^2 by a dense Cholesky solve.
inline Eigen::VectorXd dense_projection(const Eigen::MatrixXd& psi, const Eigen::VectorXd& y,
                                        const Eigen::VectorXd& z, double eta) {
  Eigen::MatrixXd lhs = psi.transpose() * psi;
  lhs.diagonal().array() += eta;
  const Eigen::VectorXd rhs = psi.transpose() * y + eta * z;
  return lhs.llt().solve(rhs);
}

/// exp(z) and (exp(dt*a) - 1) / a by 30 Taylor terms in long double.
inline void zoh_series(double dt, double a, double& abar, double& gain) {
  long double z = (long double)dt * a, term = 1, e = 0;
  long double g = 0, gterm = dt;  // dt^{k+1} a^k / (k+1)!
  for (int k = 0; k < 30; ++k) {
    e += term;
    g += gterm;
    term *= z / (k + 1);
    gterm *= z / (k + 2);
  }
  abar = double(e);
  gain = double(g);
}

/// Unvectorized recurrence: y[g,k,d] = sum_s C[g,k,s] h[g,k,d,s] + skip[d] u[g,k,d].
template <class T>
std::vector<T> naive_scan(const std::vector<T>& u, const std::vector<T>& abar,
                          const std::vector<T>& bbar, const std::vector<T>& c,
                          const std::vector<T>& skip, std::size_t G, std::size_t L,
                          std::size_t D, std::size_t S) {
  std::vector<T> y(G * L * D);
  for (std::size_t g = 0; g < G; ++g)
    for (std::size_t d = 0; d < D; ++d)
      for (std::size_t s = 0; s < S; ++s) {
        long double h = 0;
        for (std::size_t k = 0; k < L; ++k) {
          const std::size_t q = ((g * L + k) * D + d) * S + s;
          h = abar[q] * h + bbar[q] * (long double)u[(g * L + k) * D + d];
          y[(g * L + k) * D + d] += T(c[(g * L + k) * S + s] * h);
        }
      }
  for (std::size_t g = 0; g < G; ++g)
    for (std::size_t k = 0; k < L; ++k)
      for (std::size_t d = 0; d < D; ++d)
        y[(g * L + k) * D + d] += skip[d] * u[(g * L + k) * D + d];
  return y;
}

/// Mean squared error based PSNR with peak 1.
inline double psnr(const std::vector<double>& a, const std::vector<double>& b) {
  double mse = 0;
  for (std::size_t i = 0; i < a.size(); ++i) mse += (a[i] - b[i]) * (a[i] - b[i]);
  mse /= double(a.size());
  return 10.0 * std::log10(1.0 / mse);
}

}  // namespace oracle
