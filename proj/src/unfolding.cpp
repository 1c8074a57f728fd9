#include "dhm/unfolding.hpp"

#include <cmath>

#include "dhm/metrics.hpp"
#include "dhm/ops.hpp"

namespace dhm::unfold {

namespace {

constexpr double kFloor = 1e-4;

template <class T>
Tensor<T> conv_weight(ParameterSet<T>& params, const std::string& name, Shape shape, Rng& rng) {
  const double fan_in = double(shape[0] * shape[1] * shape[2]);
  return params.add_uniform(name, std::move(shape), T(1.0 / std::sqrt(fan_in)), rng);
}

template <class T>
Tensor<T> psi_tensor(const cassi::SensingOperator& op) {
  return cassi::to_tensor<T>(op.psi());
}

}  // namespace

template <class T>
Tensor<T> data_projection(const Tensor<T>& z, const cassi::SensingOperator& op,
                          const Tensor<T>& y, const Tensor<T>& eta) {
  if (eta.numel() != 1) throw ShapeError("data_projection: eta must hold one value");
  if (!(eta.values()[0] > T(0))) throw Error("data_projection: eta must be > 0");
  const auto r = ops::sub(y, cassi::project(op, z));
  const auto scaled = ops::div(r, ops::add(psi_tensor<T>(op), eta));
  return ops::add(z, cassi::adjoint(op, scaled));
}

template <class T>
Tensor<T> charbonnier_loss(const Tensor<T>& z, const Tensor<T>& x, T eps) {
  if (z.shape() != x.shape())
    throw ShapeError("charbonnier_loss: incompatible shapes " + to_string(z.shape()) + " and " +
                     to_string(x.shape()));
  if (!(eps > T(0))) throw Error("charbonnier_loss: eps must be > 0");
  const auto d = ops::sub(z, x);
  const auto c = ops::sqrt(ops::add_scalar(ops::mul(d, d), eps * eps));
  return ops::mean_all(ops::add_scalar(c, -eps));
}

template <class T>
Tensor<T> degradation_input(const cassi::SensingOperator& op, const Tensor<T>& y) {
  const Shape ys{op.height(), op.shifted_width()};
  if (y.shape() != ys)
    throw ShapeError("degradation_input: measurement " + to_string(y.shape()) +
                     " does not match operator " + to_string(ys));
  const auto masks = cassi::to_tensor<T>(op.shifted_mask());
  return ops::concat<T>({masks, ops::reshape(y, {ys[0], ys[1], 1})}, 2);
}

template <class T>
Model<T>::Model(const Config& cfg) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(cfg_.seed);
  const std::size_t nb = cfg_.bands, C = cfg_.channels;
  init_w_ = conv_weight<T>(params_, "init.conv_w", {3, 3, nb + 1, nb}, rng);
  init_b_ = params_.add_constant("init.conv_b", {nb}, T(0));
  if (cfg_.learnable_eta || cfg_.learnable_rho) {
    LearnerWeights<T> lw;
    lw.max_stages = cfg_.max_stages;
    std::size_t in = nb + 1;
    for (std::size_t k = 0; k < 6; ++k) {
      const std::string p = "learner.conv" + std::to_string(k);
      lw.conv_w.push_back(conv_weight<T>(params_, p + "_w", {3, 3, in, C}, rng));
      lw.conv_b.push_back(params_.add_constant(p + "_b", {C}, T(0)));
      in = C;
    }
    const std::size_t outs[3] = {C, C, 2 * cfg_.max_stages};
    for (std::size_t k = 0; k < 3; ++k) {
      const std::string p = "learner.fc" + std::to_string(k);
      lw.fc_w.push_back(params_.add_uniform(p + "_w", {in, outs[k]},
                                            T(1.0 / std::sqrt(double(in))), rng));
      lw.fc_b.push_back(params_.add_constant(p + "_b", {outs[k]}, T(0)));
      in = outs[k];
    }
    learner_ = std::move(lw);
  }
  denoiser_.emplace(cfg_, params_, rng);
}

template <class T>
Tensor<T> Model<T>::init_z0(const cassi::SensingOperator& op, const Tensor<T>& y) const {
  if (op.bands() != cfg_.bands)
    throw ShapeError("init_z0: operator has " + std::to_string(op.bands()) +
                     " bands, model expects " + std::to_string(cfg_.bands));
  return ops::conv2d(degradation_input(op, y), init_w_, init_b_, 1, 1);
}

template <class T>
StageParams<T> Model<T>::learn_params(const cassi::SensingOperator& op, const Tensor<T>& y,
                                      std::size_t stages) const {
  if (stages < 1 || stages > cfg_.max_stages)
    throw Error("learn_params: stages must lie in [1, " + std::to_string(cfg_.max_stages) + "]");
  StageParams<T> out;
  out.eta = Tensor<T>::full({stages}, T(cfg_.fixed_eta));
  out.rho = Tensor<T>::full({stages}, T(cfg_.fixed_rho));
  if (!learner_) return out;
  const auto& lw = *learner_;
  auto f = degradation_input(op, y);
  for (std::size_t k = 0; k < 6; ++k) {
    f = ops::conv2d(f, lw.conv_w[k], lw.conv_b[k], 1, 1);
    if (k % 3 != 2) f = ops::gelu(f);
  }
  f = ops::avg_pool2d(f, f.dim(0), f.dim(1), f.dim(0), f.dim(1));
  f = ops::reshape(f, {1, f.dim(2)});
  for (std::size_t k = 0; k < 3; ++k) {
    f = ops::linear(f, lw.fc_w[k], lw.fc_b[k]);
    if (k < 2) f = ops::gelu(f);
  }
  const auto v = ops::add_scalar(ops::softplus(ops::reshape(f, {2 * lw.max_stages})), T(kFloor));
  if (cfg_.learnable_eta) out.eta = ops::slice(v, 0, 0, stages);
  if (cfg_.learnable_rho) out.rho = ops::slice(v, 0, lw.max_stages, lw.max_stages + stages);
  return out;
}

template <class T>
Tensor<T> Model<T>::run_stages(const cassi::SensingOperator& op, const Tensor<T>& y,
                               std::size_t stages, StageTrace<T>* trace) const {
  if (stages < 1) throw Error("run_stages: stages must be >= 1");
  auto z = init_z0(op, y);
  const auto sp = learn_params(op, y, stages);
  if (trace) trace->z.push_back(z);
  for (std::size_t t = 0; t < stages; ++t) {
    const auto x = data_projection(z, op, y, ops::slice(sp.eta, 0, t, t + 1));
    z = denoiser_->forward(x, ops::slice(sp.rho, 0, t, t + 1));
    if (trace) {
      trace->x.push_back(x);
      trace->z.push_back(z);
    }
  }
  return z;
}

template <class T>
HsiCube reconstruct(const Model<T>& model, const cassi::SensingOperator& op, const Plane& y) {
  NoGradGuard guard;
  const auto z = model.run(op, cassi::to_tensor<T>(y));
  return cassi::unshift_bands(cassi::to_cube(z), op.shift_step(), op.width());
}

namespace {

HsiCube crop_cube(const HsiCube& c, std::size_t i0, std::size_t j0, std::size_t h,
                  std::size_t w) {
  HsiCube out = HsiCube::zeros(h, w, c.bands);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j)
      for (std::size_t b = 0; b < c.bands; ++b) out.at(i, j, b) = c.at(i0 + i, j0 + j, b);
  return out;
}

Plane crop_plane(const Plane& p, std::size_t i0, std::size_t j0, std::size_t h, std::size_t w) {
  Plane out = Plane::zeros(h, w);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) out.at(i, j) = p.at(i0 + i, j0 + j);
  return out;
}

}  // namespace

template <class T>
TrainLog train(Model<T>& model, const std::vector<HsiCube>& train_set,
               const std::vector<HsiCube>& val_set, const Plane& mask,
               const std::function<void(const std::string&)>& log) {
  const Config& cfg = model.config();
  if (train_set.empty()) throw Error("train: empty dataset");
  for (const auto& c : train_set)
    if (c.height != mask.height || c.width != mask.width || c.bands != cfg.bands)
      throw ShapeError("train: cube " + to_string(c.shape()) + " does not match mask " +
                       to_string(Shape{mask.height, mask.width}) + " and " +
                       std::to_string(cfg.bands) + " bands");
  const std::size_t crop_h = std::min(cfg.crop, mask.height);
  const std::size_t crop_w = std::min(cfg.crop, mask.width);
  const auto noise = cfg.noise_model();
  Rng rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
  Adam<T> opt(model.params(), AdamConfig{cfg.learning_rate});
  TrainLog out;
  std::uniform_int_distribution<std::size_t> pick(0, train_set.size() - 1);
  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    if (cfg.lr_halve_every > 0 && step > 1 && (step - 1) % cfg.lr_halve_every == 0)
      opt.set_learning_rate(opt.config().learning_rate * 0.5);
    Tensor<T> total;
    for (std::size_t b = 0; b < cfg.batch; ++b) {
      const HsiCube& src = train_set[pick(rng)];
      const std::size_t i0 =
          std::uniform_int_distribution<std::size_t>(0, src.height - crop_h)(rng);
      const std::size_t j0 = std::uniform_int_distribution<std::size_t>(0, src.width - crop_w)(rng);
      const cassi::SensingOperator op(crop_plane(mask, i0, j0, crop_h, crop_w), cfg.shift_step,
                                      cfg.bands);
      const HsiCube gt = cassi::shift_bands(crop_cube(src, i0, j0, crop_h, crop_w), cfg.shift_step);
      const auto y = cassi::add_noise({op.project(gt), {}}, noise, rng);
      const auto z = model.run(op, cassi::to_tensor<T>(y.values));
      const auto loss = charbonnier_loss(z, cassi::to_tensor<T>(gt), T(cfg.charbonnier_eps));
      total = total.defined() ? ops::add(total, loss) : loss;
    }
    total = ops::scale(total, T(1.0 / double(cfg.batch)));
    total.backward();
    opt.step();
    out.loss.emplace_back(step, double(total.item()));
    if (log && (step == 1 || step % 10 == 0))
      log("step " + std::to_string(step) + " loss " + std::to_string(total.item()));
    if (!val_set.empty() && cfg.val_every > 0 &&
        (step % cfg.val_every == 0 || step == cfg.steps)) {
      const double v = evaluate_psnr(model, val_set, mask, cfg.seed + 1);
      out.val_psnr.emplace_back(step, v);
      if (log) log("step " + std::to_string(step) + " val_psnr " + std::to_string(v));
    }
  }
  return out;
}

template <class T>
double evaluate_psnr(const Model<T>& model, const std::vector<HsiCube>& cubes, const Plane& mask,
                     std::uint64_t seed) {
  const Config& cfg = model.config();
  const cassi::SensingOperator op(mask, cfg.shift_step, cfg.bands);
  const auto noise = cfg.noise_model();
  Rng rng(seed);
  double s = 0;
  for (const auto& c : cubes) {
    const auto y = cassi::simulate(op, c, noise, rng);
    s += psnr(reconstruct(model, op, y.values), c);
  }
  return cubes.empty() ? 0.0 : s / double(cubes.size());
}

double baseline_psnr(const Config& cfg, const std::vector<HsiCube>& cubes, const Plane& mask,
                     std::uint64_t seed) {
  const cassi::SensingOperator op(mask, cfg.shift_step, cfg.bands);
  const auto noise = cfg.noise_model();
  Rng rng(seed);
  double s = 0;
  for (const auto& c : cubes) {
    const auto y = cassi::simulate(op, c, noise, rng);
    const auto x = cassi::normalized_adjoint(op, y.values);
    s += psnr(cassi::unshift_bands(x, op.shift_step(), op.width()), c);
  }
  return cubes.empty() ? 0.0 : s / double(cubes.size());
}

#define DHM_UNFOLD_INSTANTIATE(T)                                                              \
  template Tensor<T> data_projection(const Tensor<T>&, const cassi::SensingOperator&,          \
                                     const Tensor<T>&, const Tensor<T>&);                      \
  template Tensor<T> charbonnier_loss(const Tensor<T>&, const Tensor<T>&, T);                  \
  template Tensor<T> degradation_input(const cassi::SensingOperator&, const Tensor<T>&);       \
  template class Model<T>;                                                                     \
  template HsiCube reconstruct(const Model<T>&, const cassi::SensingOperator&, const Plane&);  \
  template TrainLog train(Model<T>&, const std::vector<HsiCube>&, const std::vector<HsiCube>&, \
                          const Plane&, const std::function<void(const std::string&)>&);       \
  template double evaluate_psnr(const Model<T>&, const std::vector<HsiCube>&, const Plane&,    \
                                std::uint64_t);
DHM_UNFOLD_INSTANTIATE(float)
DHM_UNFOLD_INSTANTIATE(double)

}  // namespace dhm::unfold
