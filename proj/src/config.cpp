#include "dhm/config.hpp"

#include <fstream>
#include <functional>
#include <sstream>

namespace dhm {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* want) {
  throw Error("config: key '" + key + "' expects " + want + ", got '" + value + "'");
}

std::size_t parse_size(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    if (!v.empty() && v[0] == '-') bad_value(key, v, "a non-negative integer");
    const unsigned long long x = std::stoull(v, &used);
    if (used != v.size()) bad_value(key, v, "a non-negative integer");
    return std::size_t(x);
  } catch (const Error&) {
    throw;
  } catch (const std::exception&) {
    bad_value(key, v, "a non-negative integer");
  }
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used != v.size()) bad_value(key, v, "a number");
    return x;
  } catch (const Error&) {
    throw;
  } catch (const std::exception&) {
    bad_value(key, v, "a number");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  bad_value(key, v, "true or false");
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

struct Field {
  std::string key;
  std::function<void(Config&, const std::string&)> set;
  std::function<std::string(const Config&)> get;
};

#define SIZE_FIELD(name)                                                               \
  Field{#name, [](Config& c, const std::string& v) { c.name = parse_size(#name, v); }, \
        [](const Config& c) { return std::to_string(c.name); }}
#define DOUBLE_FIELD(name)                                                               \
  Field{#name, [](Config& c, const std::string& v) { c.name = parse_double(#name, v); }, \
        [](const Config& c) { return fmt(c.name); }}
#define BOOL_FIELD(name)                                                               \
  Field{#name, [](Config& c, const std::string& v) { c.name = parse_bool(#name, v); }, \
        [](const Config& c) { return std::string(c.name ? "true" : "false"); }}

const std::vector<Field>& fields() {
  static const std::vector<Field> f = {
      SIZE_FIELD(channels),
      SIZE_FIELD(window),
      SIZE_FIELD(encoder_depth),
      SIZE_FIELD(bottleneck_depth),
      SIZE_FIELD(state_dim),
      Field{"variant",
            [](Config& c, const std::string& v) {
              if (v == "full")
                c.variant = Variant::full;
              else if (v == "light")
                c.variant = Variant::light;
              else
                bad_value("variant", v, "full or light");
            },
            [](const Config& c) {
              return std::string(c.variant == Variant::full ? "full" : "light");
            }},
      Field{"block_order",
            [](Config& c, const std::string& v) {
              if (v == "gs_ls")
                c.block_order = BlockOrder::gs_ls;
              else if (v == "ls_gs")
                c.block_order = BlockOrder::ls_gs;
              else
                bad_value("block_order", v, "gs_ls or ls_gs");
            },
            [](const Config& c) {
              return std::string(c.block_order == BlockOrder::gs_ls ? "gs_ls" : "ls_gs");
            }},
      SIZE_FIELD(stages),
      SIZE_FIELD(max_stages),
      BOOL_FIELD(learnable_eta),
      BOOL_FIELD(learnable_rho),
      DOUBLE_FIELD(fixed_eta),
      DOUBLE_FIELD(fixed_rho),
      DOUBLE_FIELD(charbonnier_eps),
      SIZE_FIELD(height),
      SIZE_FIELD(width),
      SIZE_FIELD(bands),
      SIZE_FIELD(shift_step),
      Field{"noise",
            [](Config& c, const std::string& v) {
              cassi::NoiseModel::parse(v);
              c.noise = v;
            },
            [](const Config& c) { return c.noise; }},
      SIZE_FIELD(train_count),
      SIZE_FIELD(val_count),
      SIZE_FIELD(crop),
      DOUBLE_FIELD(learning_rate),
      SIZE_FIELD(steps),
      SIZE_FIELD(batch),
      SIZE_FIELD(lr_halve_every),
      SIZE_FIELD(val_every),
      Field{"seed", [](Config& c, const std::string& v) { c.seed = parse_size("seed", v); },
            [](const Config& c) { return std::to_string(c.seed); }},
      BOOL_FIELD(parallel_scan),
  };
  return f;
}

}  // namespace

const std::vector<std::string>& Config::keys() {
  static const std::vector<std::string> k = [] {
    std::vector<std::string> out;
    for (const auto& f : fields()) out.push_back(f.key);
    return out;
  }();
  return k;
}

void Config::set(const std::string& key, const std::string& value) {
  for (const auto& f : fields())
    if (f.key == key) {
      f.set(*this, trim(value));
      return;
    }
  throw Error("config: unknown key '" + key + "'");
}

void Config::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos)
    throw Error("config: expected key=value, got '" + assignment + "'");
  set(trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

void Config::apply_text(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    try {
      apply_override(line);
    } catch (const Error& e) {
      throw Error(std::string(e.what()) + " (line " + std::to_string(lineno) + ")");
    }
  }
}

std::string Config::to_text() const {
  std::string out;
  for (const auto& f : fields()) out += f.key + "=" + f.get(*this) + "\n";
  return out;
}

Config Config::from_text(const std::string& text) {
  Config c;
  c.apply_text(text);
  return c;
}

Config Config::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return from_text(ss.str());
}

Config Config::full_scale() {
  Config c;
  c.channels = 28;
  c.window = 8;
  c.encoder_depth = 2;
  c.bottleneck_depth = 1;
  c.state_dim = 0;
  c.height = c.width = c.crop = 256;
  c.bands = 28;
  c.stages = 3;
  return c;
}

void Config::validate() const {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) throw Error("config: " + what);
  };
  need(channels >= 1, "channels must be >= 1");
  need(window >= 1, "window must be >= 1");
  need(encoder_depth >= 1 && bottleneck_depth >= 1, "depths must be >= 1");
  need(bands >= 1, "bands must be >= 1");
  need(stages >= 1, "stages must be >= 1");
  need(max_stages >= stages, "max_stages must be >= stages");
  need(fixed_eta > 0 && fixed_rho > 0, "fixed_eta and fixed_rho must be > 0");
  need(charbonnier_eps > 0, "charbonnier_eps must be > 0");
  need(height >= 1 && width >= 1, "height and width must be >= 1");
  need(crop >= 1 && crop <= height && crop <= width, "crop must lie in [1, min(height, width)]");
  need(learning_rate > 0, "learning_rate must be > 0");
  need(batch >= 1, "batch must be >= 1");
}

}  // namespace dhm
