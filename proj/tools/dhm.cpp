// dhm: simulate, train, reconstruct, eval, gradcheck, bench.

#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "dhm/bench.hpp"
#include "dhm/cassi.hpp"
#include "dhm/checkpoint.hpp"
#include "dhm/config.hpp"
#include "dhm/gradcheck.hpp"
#include "dhm/io.hpp"
#include "dhm/metrics.hpp"
#include "dhm/parallel.hpp"
#include "dhm/unfolding.hpp"

using namespace dhm;

namespace {

struct Common {
  std::string config_path;
  std::int64_t seed = -1;
  std::size_t threads = 0;
  std::vector<std::string> overrides;
  std::string out;
};

Config build_config(const Common& c, const std::string& base_text = "") {
  Config cfg;
  if (!base_text.empty()) cfg.apply_text(base_text);
  if (!c.config_path.empty()) cfg.apply_text(Config::load(c.config_path).to_text());
  for (const auto& o : c.overrides) cfg.apply_override(o);
  if (c.seed >= 0) cfg.seed = std::uint64_t(c.seed);
  cfg.validate();
  return cfg;
}

void apply_threads(const Common& c) {
  std::size_t n = c.threads;
  if (n == 0)
    if (const char* env = std::getenv("DHM_THREADS")) n = std::strtoull(env, nullptr, 10);
  set_thread_count(n == 0 ? 1 : n);
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out << text;
}

void emit(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-")
    std::cout << text;
  else
    write_text(path, text);
}

Plane load_or_make_mask(const std::string& path, bool random, const Config& cfg, std::size_t h,
                        std::size_t w) {
  if (!path.empty() && !random) return io::read_mask(path);
  Rng rng(cfg.seed);
  return cassi::random_mask(h, w, rng);
}

unfold::Model<float> load_model(const std::string& ckpt, const std::vector<std::string>& sets) {
  const auto contents = checkpoint::load(ckpt);
  Config cfg = Config::from_text(contents.config_text);
  for (const auto& o : sets) cfg.apply_override(o);
  unfold::Model<float> model(cfg);
  checkpoint::assign(model.params(), contents);
  return model;
}

int cmd_simulate(const Common& c, const std::string& cube_path, const std::string& mask_path,
                 bool random_mask, std::int64_t shift, const std::string& noise,
                 const std::string& mask_out) {
  Config cfg = build_config(c);
  if (shift >= 0) cfg.shift_step = std::size_t(shift);
  if (!noise.empty()) cfg.set("noise", noise);
  if (c.out.empty()) throw Error("simulate: --out is required");
  const HsiCube cube = io::read_cube(cube_path);
  if (mask_path.empty() && !random_mask)
    throw Error("simulate: pass --mask PATH or --random-mask");
  const Plane mask = load_or_make_mask(mask_path, random_mask, cfg, cube.height, cube.width);
  const cassi::SensingOperator op(mask, cfg.shift_step, cube.bands);
  Rng rng(cfg.seed + 1);
  const auto y = cassi::simulate(op, cube, cfg.noise_model(), rng);
  io::write_measurement(c.out, y.values);
  const std::string mask_file = mask_out.empty() ? c.out + ".mask" : mask_out;
  if (random_mask) io::write_mask(mask_file, mask);
  std::ostringstream m;
  m << "measurement=" << c.out << "\n"
    << "cube=" << cube_path << "\n"
    << "mask_source=" << (random_mask ? "random:bernoulli0.5" : "file") << "\n"
    << "mask=" << (random_mask ? mask_file : mask_path) << "\n"
    << "height=" << y.values.height << "\nwidth=" << cube.width
    << "\nshifted_width=" << y.values.width << "\nbands=" << cube.bands
    << "\nshift_step=" << cfg.shift_step << "\nnoise=" << y.noise.to_string()
    << "\nseed=" << cfg.seed << "\n";
  write_text(c.out + ".manifest", m.str());
  std::cerr << "wrote " << c.out << " (" << y.values.height << "x" << y.values.width << ")\n";
  return 0;
}

int cmd_train(const Common& c, const std::string& mask_path, const std::string& log_path) {
  const Config cfg = build_config(c);
  if (c.out.empty()) throw Error("train: --out is required");
  const auto data = synth_dataset(cfg.train_count + cfg.val_count, cfg.height, cfg.width,
                                  cfg.bands, cfg.seed);
  const std::vector<HsiCube> tr(data.begin(), data.begin() + std::ptrdiff_t(cfg.train_count));
  const std::vector<HsiCube> va(data.begin() + std::ptrdiff_t(cfg.train_count), data.end());
  const Plane mask = load_or_make_mask(mask_path, mask_path.empty(), cfg, cfg.height, cfg.width);
  unfold::Model<float> model(cfg);
  std::cerr << "parameters " << model.params().element_count() << "\n";
  const auto log = unfold::train<float>(model, tr, va, mask,
                                        [](const std::string& s) { std::cerr << s << "\n"; });
  checkpoint::save(c.out, model.params(), cfg.to_text());
  if (mask_path.empty()) io::write_mask(c.out + ".mask", mask);
  std::ostringstream t;
  t << "step\tloss\tval_psnr_db\n";
  std::size_t v = 0;
  for (const auto& [step, loss] : log.loss) {
    t << step << '\t' << loss << '\t';
    if (v < log.val_psnr.size() && log.val_psnr[v].first == step) t << log.val_psnr[v++].second;
    t << '\n';
  }
  emit(log_path, t.str());
  return 0;
}

int cmd_reconstruct(const Common& c, const std::string& ckpt, const std::string& meas,
                    const std::string& mask_path) {
  if (c.out.empty()) throw Error("reconstruct: --out is required");
  const auto model = load_model(ckpt, c.overrides);
  const Plane y = io::read_measurement(meas);
  const Plane mask = io::read_mask(mask_path);
  const cassi::SensingOperator op(mask, model.config().shift_step, model.config().bands);
  io::write_cube(c.out, unfold::reconstruct(model, op, y));
  return 0;
}

int cmd_eval(const Common& c, const std::string& ckpt, const std::string& mask_path,
             const std::vector<std::string>& cubes, bool baseline, const std::string& kv_path) {
  const auto t0 = std::chrono::steady_clock::now();
  auto model = load_model(ckpt, c.overrides);
  Config cfg = model.config();
  if (c.seed >= 0) cfg.seed = std::uint64_t(c.seed);
  std::vector<HsiCube> scenes;
  std::vector<std::string> names;
  if (cubes.empty()) {
    // held out: a seed the training split never used
    scenes = synth_dataset(cfg.val_count, cfg.height, cfg.width, cfg.bands, cfg.seed + 7919);
    for (std::size_t i = 0; i < scenes.size(); ++i) names.push_back("synth" + std::to_string(i));
  } else {
    for (const auto& p : cubes) {
      scenes.push_back(io::read_cube(p));
      names.push_back(p);
    }
  }
  const Plane mask = io::read_mask(mask_path);
  const cassi::SensingOperator op(mask, cfg.shift_step, cfg.bands);
  Rng rng(cfg.seed + 1);
  EvalReport rep;
  rep.config_fingerprint = fingerprint(cfg.to_text());
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const auto y = cassi::simulate(op, scenes[i], cfg.noise_model(), rng);
    const HsiCube rec = baseline ? cassi::unshift_bands(cassi::normalized_adjoint(op, y.values),
                                                        op.shift_step(), op.width())
                                 : unfold::reconstruct(model, op, y.values);
    rep.scenes.push_back({names[i], psnr(rec, scenes[i]), ssim(rec, scenes[i])});
  }
  rep.runtime_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  emit(c.out, rep.to_tsv());
  if (!kv_path.empty()) write_text(kv_path, rep.to_key_value());
  return 0;
}

int cmd_gradcheck(const Common& c, bool inject, const std::string& filter, std::size_t probes) {
  gradcheck::SuiteOptions o;
  o.seed = c.seed >= 0 ? std::uint64_t(c.seed) : 0;
  o.inject_fault = inject;
  o.filter = filter;
  o.e2e_probes_per_tensor = probes;
  const auto results = gradcheck::run_suite(o);
  emit(c.out, gradcheck::format_report(results));
  if (results.empty()) throw Error("gradcheck: no case matches '" + filter + "'");
  return gradcheck::all_passed(results) ? 0 : 1;
}

int cmd_bench(const Common& c, bench::Options o) {
  o.seed = c.seed >= 0 ? std::uint64_t(c.seed) : 0;
  if (c.threads > 0 || std::getenv("DHM_THREADS")) o.threads = thread_count();
  if (o.min_log2 > o.max_log2 || o.max_log2 > 26) throw Error("bench: bad length range");
  emit(c.out, bench::to_tsv(bench::run(o)));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Snapshot spectral reconstruction with a state-space unfolding network"};
  app.require_subcommand(1);
  app.fallthrough();
  Common c;
  app.add_option("--config", c.config_path, "key=value config file");
  app.add_option("--seed", c.seed, "random seed (default 0)");
  app.add_option("--threads", c.threads, "worker threads (fallback: DHM_THREADS)");
  app.add_option("--set", c.overrides, "config override key=value (repeatable, last wins)");
  app.add_option("--out", c.out, "output path");

  auto* sim = app.add_subcommand("simulate", "cube -> coded measurement");
  std::string cube_path, mask_path, noise, mask_out;
  bool random_mask = false;
  std::int64_t shift = -1;
  sim->add_option("--cube", cube_path, "HSC1 cube")->required();
  sim->add_option("--mask", mask_path, "MSK1 mask");
  sim->add_flag("--random-mask", random_mask, "draw a Bernoulli(0.5) mask from the seed");
  sim->add_option("--shift", shift, "dispersion step");
  sim->add_option("--noise", noise, "none | gaussian:SIGMA | shot:BITS");
  sim->add_option("--mask-out", mask_out, "where to store a generated mask");

  auto* tr = app.add_subcommand("train", "train on synthetic cubes");
  std::string log_path;
  tr->add_option("--mask", mask_path, "MSK1 mask (default: random from seed)");
  tr->add_option("--log", log_path, "TSV of per-step loss (default stdout)");

  auto* rec = app.add_subcommand("reconstruct", "measurement -> cube");
  std::string ckpt, meas;
  rec->add_option("--checkpoint", ckpt)->required();
  rec->add_option("--measurement", meas)->required();
  rec->add_option("--mask", mask_path)->required();

  auto* ev = app.add_subcommand("eval", "PSNR/SSIM report");
  std::vector<std::string> cubes;
  bool baseline = false;
  std::string kv_path;
  ev->add_option("--checkpoint", ckpt)->required();
  ev->add_option("--mask", mask_path)->required();
  ev->add_option("--cube", cubes, "reference cubes (default: held-out synthetic set)");
  ev->add_flag("--baseline", baseline, "score the psi-normalized adjoint instead");
  ev->add_option("--kv", kv_path, "also write a key=value report");

  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  bool inject = false;
  std::string filter;
  std::size_t probes = 2;
  gc->add_flag("--inject-fault", inject, "add a primitive with a wrong-sign adjoint");
  gc->add_option("--filter", filter, "run cases whose name contains this");
  gc->add_option("--probes", probes, "probes per weight tensor in the end-to-end case");

  auto* bn = app.add_subcommand("bench", "scan kernel timing");
  bench::Options bo;
  bn->add_option("--min-log2", bo.min_log2);
  bn->add_option("--max-log2", bo.max_log2);
  bn->add_option("--reps", bo.reps);
  bn->add_option("--groups", bo.groups);
  bn->add_option("--channels", bo.channels);
  bn->add_option("--state", bo.state);

  CLI11_PARSE(app, argc, argv);
  try {
    apply_threads(c);
    if (*sim) return cmd_simulate(c, cube_path, mask_path, random_mask, shift, noise, mask_out);
    if (*tr) return cmd_train(c, mask_path, log_path);
    if (*rec) return cmd_reconstruct(c, ckpt, meas, mask_path);
    if (*ev) return cmd_eval(c, ckpt, mask_path, cubes, baseline, kv_path);
    if (*gc) return cmd_gradcheck(c, inject, filter, probes);
    if (*bn) return cmd_bench(c, bo);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
