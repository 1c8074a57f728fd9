#include "dhm/cassi.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <sstream>

namespace dhm::cassi {

std::size_t shifted_width(std::size_t width, std::size_t bands, std::size_t shift_step) {
  return width + shift_step * (bands == 0 ? 0 : bands - 1);
}

HsiCube shift_bands(const HsiCube& cube, std::size_t shift_step) {
  const std::size_t ws = shifted_width(cube.width, cube.bands, shift_step);
  HsiCube out = HsiCube::zeros(cube.height, ws, cube.bands);
  for (std::size_t i = 0; i < cube.height; ++i)
    for (std::size_t j = 0; j < cube.width; ++j)
      for (std::size_t b = 0; b < cube.bands; ++b)
        out.at(i, j + shift_step * b, b) = cube.at(i, j, b);
  return out;
}

HsiCube unshift_bands(const HsiCube& shifted, std::size_t shift_step, std::size_t width) {
  if (shifted_width(width, shifted.bands, shift_step) != shifted.width)
    throw ShapeError("unshift_bands: width " + std::to_string(width) + " with step " +
                     std::to_string(shift_step) + " does not match shifted extents " +
                     to_string(shifted.shape()));
  HsiCube out = HsiCube::zeros(shifted.height, width, shifted.bands);
  for (std::size_t i = 0; i < shifted.height; ++i)
    for (std::size_t j = 0; j < width; ++j)
      for (std::size_t b = 0; b < shifted.bands; ++b)
        out.at(i, j, b) = shifted.at(i, j + shift_step * b, b);
  return out;
}

NoiseModel NoiseModel::parse(const std::string& spec) {
  NoiseModel m;
  if (spec.empty() || spec == "none") return m;
  const auto colon = spec.find(':');
  const std::string kind = spec.substr(0, colon);
  const std::string arg = colon == std::string::npos ? "" : spec.substr(colon + 1);
  try {
    std::size_t used = 0;
    if (kind == "gaussian" && !arg.empty()) {
      m.kind = Kind::gaussian;
      m.sigma = std::stod(arg, &used);
      if (used != arg.size()) throw Error("");
      if (!(m.sigma >= 0)) throw Error("noise: gaussian sigma must be >= 0, got " + arg);
      return m;
    }
    if (kind == "shot" && !arg.empty()) {
      m.kind = Kind::shot;
      const long bits = std::stol(arg, &used);
      if (used != arg.size()) throw Error("");
      if (bits < 1 || bits > 31) throw Error("noise: shot bit depth must be in [1, 31], got " + arg);
      m.bit_depth = unsigned(bits);
      return m;
    }
  } catch (const Error& e) {
    if (*e.what()) throw;
  } catch (const std::exception&) {
  }
  throw Error("noise: cannot parse '" + spec + "' (expected none, gaussian:SIGMA or shot:BITS)");
}

std::string NoiseModel::to_string() const {
  std::ostringstream os;
  os.precision(17);
  switch (kind) {
    case Kind::none: return "none";
    case Kind::gaussian: os << "gaussian:" << sigma; return os.str();
    case Kind::shot: return "shot:" + std::to_string(bit_depth);
  }
  return "none";
}

std::vector<double> DenseMatrix::matvec(const std::vector<double>& x) const {
  if (x.size() != cols) throw ShapeError("dense matvec: size mismatch");
  std::vector<double> y(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < cols; ++c) s += values[r * cols + c] * x[c];
    y[r] = s;
  }
  return y;
}

std::vector<double> DenseMatrix::tmatvec(const std::vector<double>& y) const {
  if (y.size() != rows) throw ShapeError("dense tmatvec: size mismatch");
  std::vector<double> x(cols, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) x[c] += values[r * cols + c] * y[r];
  return x;
}

SensingOperator::SensingOperator(Plane mask, std::size_t shift_step, std::size_t bands)
    : mask_(std::move(mask)), shift_step_(shift_step), bands_(bands) {
  if (bands_ == 0) throw ShapeError("sensing operator: bands must be >= 1");
  rebuild();
}

void SensingOperator::set_mask(Plane mask) {
  mask_ = std::move(mask);
  rebuild();
}

void SensingOperator::set_shift_step(std::size_t shift_step) {
  shift_step_ = shift_step;
  rebuild();
}

void SensingOperator::rebuild() {
  mask_.validate("mask");
  HsiCube stack = HsiCube::zeros(mask_.height, mask_.width, bands_);
  for (std::size_t i = 0; i < mask_.height; ++i)
    for (std::size_t j = 0; j < mask_.width; ++j)
      for (std::size_t b = 0; b < bands_; ++b) stack.at(i, j, b) = mask_.at(i, j);
  shifted_ = shift_bands(stack, shift_step_);
  psi_ = Plane::zeros(shifted_.height, shifted_.width);
  for (std::size_t p = 0; p < psi_.values.size(); ++p) {
    double s = 0;
    for (std::size_t b = 0; b < bands_; ++b) {
      const double m = shifted_.values[p * bands_ + b];
      s += m * m;
    }
    psi_.values[p] = s;
  }
}

Plane SensingOperator::project(const HsiCube& x) const {
  if (x.shape() != shifted_.shape())
    throw ShapeError("project: volume " + to_string(x.shape()) + " does not match operator " +
                     to_string(shifted_.shape()));
  Plane y = Plane::zeros(psi_.height, psi_.width);
  for (std::size_t p = 0; p < y.values.size(); ++p) {
    double s = 0;
    for (std::size_t b = 0; b < bands_; ++b)
      s += shifted_.values[p * bands_ + b] * x.values[p * bands_ + b];
    y.values[p] = s;
  }
  return y;
}

HsiCube SensingOperator::adjoint(const Plane& y) const {
  if (y.height != psi_.height || y.width != psi_.width)
    throw ShapeError("adjoint: measurement " + to_string(Shape{y.height, y.width}) +
                     " does not match operator " + to_string(Shape{psi_.height, psi_.width}));
  HsiCube x = HsiCube::zeros(shifted_.height, shifted_.width, bands_);
  for (std::size_t p = 0; p < y.values.size(); ++p)
    for (std::size_t b = 0; b < bands_; ++b)
      x.values[p * bands_ + b] = shifted_.values[p * bands_ + b] * y.values[p];
  return x;
}

DenseMatrix SensingOperator::materialize_dense(std::size_t cap) const {
  DenseMatrix m;
  m.rows = psi_.values.size();
  m.cols = shifted_.values.size();
  if (m.cols > cap)
    throw Error("materialize_dense: " + std::to_string(m.cols) + " columns exceed the cap of " +
                std::to_string(cap));
  m.values.assign(m.rows * m.cols, 0.0);
  for (std::size_t p = 0; p < m.rows; ++p)
    for (std::size_t b = 0; b < bands_; ++b)
      m.values[p * m.cols + p * bands_ + b] = shifted_.values[p * bands_ + b];
  return m;
}

Measurement forward_project(const SensingOperator& op, const HsiCube& cube) {
  if (cube.height == op.height() && cube.bands == op.bands()) {
    if (cube.width == op.shifted_width()) return {op.project(cube), {}};
    if (cube.width == op.width()) return {op.project(shift_bands(cube, op.shift_step())), {}};
  }
  throw ShapeError("forward_project: cube " + to_string(cube.shape()) +
                   " does not match operator " + to_string(Shape{op.height(), op.width(), op.bands()}));
}

HsiCube adjoint_project(const SensingOperator& op, const Measurement& y) {
  return op.adjoint(y.values);
}

Measurement add_noise(const Measurement& y, const NoiseModel& model, Rng& rng) {
  Measurement out = y;
  out.noise = model;
  switch (model.kind) {
    case NoiseModel::Kind::none:
      break;
    case NoiseModel::Kind::gaussian: {
      if (model.sigma < 0) throw Error("add_noise: negative sigma");
      if (model.sigma == 0) break;
      std::normal_distribution<double> n(0.0, model.sigma);
      for (auto& v : out.values.values) v += n(rng);
      break;
    }
    case NoiseModel::Kind::shot: {
      if (model.bit_depth < 1) throw Error("add_noise: bit depth must be >= 1");
      double peak = 0;
      for (double v : y.values.values) peak = std::max(peak, v);
      if (peak <= 0) break;
      const double levels = std::ldexp(1.0, int(model.bit_depth)) - 1.0;
      const double s = levels / peak;
      for (auto& v : out.values.values) {
        const double lam = std::max(v, 0.0) * s;
        std::poisson_distribution<long long> pd(lam);
        v = lam > 0 ? double(pd(rng)) / s : 0.0;
      }
      break;
    }
  }
  return out;
}

Plane random_mask(std::size_t height, std::size_t width, Rng& rng, double p) {
  Plane m = Plane::zeros(height, width);
  std::bernoulli_distribution d(p);
  for (auto& v : m.values) v = d(rng) ? 1.0 : 0.0;
  return m;
}

Measurement simulate(const SensingOperator& op, const HsiCube& cube, const NoiseModel& noise,
                     Rng& rng) {
  return add_noise(forward_project(op, cube), noise, rng);
}

HsiCube normalized_adjoint(const SensingOperator& op, const Plane& y) {
  Plane scaled = y;
  const auto& psi = op.psi().values;
  for (std::size_t p = 0; p < scaled.values.size(); ++p)
    scaled.values[p] = psi[p] > 0 ? y.values[p] / psi[p] : 0.0;
  return op.adjoint(scaled);
}

template <class T>
Tensor<T> project(const SensingOperator& op, const Tensor<T>& x) {
  if (x.shape() != op.volume_shape())
    throw ShapeError("project: volume " + to_string(x.shape()) + " does not match operator " +
                     to_string(op.volume_shape()));
  // copied so the graph does not depend on the operator's lifetime
  auto mp = std::make_shared<const std::vector<T>>(op.shifted_mask().values.begin(),
                                                   op.shifted_mask().values.end());
  const auto& m = *mp;
  const std::size_t nb = op.bands(), np = op.height() * op.shifted_width();
  auto xv = x.values();
  std::vector<T> out(np);
  for (std::size_t p = 0; p < np; ++p) {
    T s = 0;
    for (std::size_t b = 0; b < nb; ++b) s += m[p * nb + b] * xv[p * nb + b];
    out[p] = s;
  }
  return make_result<T>({op.height(), op.shifted_width()}, std::move(out), {x}, "cassi_project",
                        [mp, nb, np](Node<T>& n) {
                          const auto& m = *mp;
                          auto gx = n.parents[0]->grad_buffer();
                          for (std::size_t p = 0; p < np; ++p)
                            for (std::size_t b = 0; b < nb; ++b)
                              gx[p * nb + b] += m[p * nb + b] * n.grad[p];
                        });
}

template <class T>
Tensor<T> adjoint(const SensingOperator& op, const Tensor<T>& y) {
  const Shape ys{op.height(), op.shifted_width()};
  if (y.shape() != ys)
    throw ShapeError("adjoint: measurement " + to_string(y.shape()) + " does not match operator " +
                     to_string(ys));
  // copied so the graph does not depend on the operator's lifetime
  auto mp = std::make_shared<const std::vector<T>>(op.shifted_mask().values.begin(),
                                                   op.shifted_mask().values.end());
  const auto& m = *mp;
  const std::size_t nb = op.bands(), np = op.height() * op.shifted_width();
  auto yv = y.values();
  std::vector<T> out(np * nb);
  for (std::size_t p = 0; p < np; ++p)
    for (std::size_t b = 0; b < nb; ++b) out[p * nb + b] = m[p * nb + b] * yv[p];
  return make_result<T>(op.volume_shape(), std::move(out), {y}, "cassi_adjoint",
                        [mp, nb, np](Node<T>& n) {
                          const auto& m = *mp;
                          auto gy = n.parents[0]->grad_buffer();
                          for (std::size_t p = 0; p < np; ++p) {
                            T s = 0;
                            for (std::size_t b = 0; b < nb; ++b)
                              s += m[p * nb + b] * n.grad[p * nb + b];
                            gy[p] += s;
                          }
                        });
}

template <class T>
Tensor<T> to_tensor(const HsiCube& c, bool requires_grad) {
  return Tensor<T>::from_values(c.shape(), std::vector<T>(c.values.begin(), c.values.end()),
                                requires_grad);
}

template <class T>
Tensor<T> to_tensor(const Plane& p, bool requires_grad) {
  return Tensor<T>::from_values({p.height, p.width},
                                std::vector<T>(p.values.begin(), p.values.end()), requires_grad);
}

template <class T>
HsiCube to_cube(const Tensor<T>& t) {
  if (t.rank() != 3) throw ShapeError("to_cube: expected rank 3, got " + to_string(t.shape()));
  auto v = t.values();
  return {t.dim(0), t.dim(1), t.dim(2), std::vector<double>(v.begin(), v.end())};
}

#define DHM_CASSI_INSTANTIATE(T)                                              \
  template Tensor<T> project(const SensingOperator&, const Tensor<T>&);       \
  template Tensor<T> adjoint(const SensingOperator&, const Tensor<T>&);       \
  template Tensor<T> to_tensor<T>(const HsiCube&, bool);                      \
  template Tensor<T> to_tensor<T>(const Plane&, bool);                        \
  template HsiCube to_cube(const Tensor<T>&);
DHM_CASSI_INSTANTIATE(float)
DHM_CASSI_INSTANTIATE(double)

}  // namespace dhm::cassi
