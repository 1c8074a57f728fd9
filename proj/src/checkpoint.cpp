#include "dhm/checkpoint.hpp"

#include <unordered_map>

#include "dhm/io.hpp"

namespace dhm::checkpoint {

template <class T>
std::vector<std::uint8_t> encode(const ParameterSet<T>& params, const std::string& config_text) {
  io::ByteWriter w;
  w.bytes("DHMW");
  w.u16(1);
  w.u32(std::uint32_t(config_text.size()));
  w.bytes(config_text);
  w.u32(std::uint32_t(params.size()));
  for (const auto& [name, t] : params.items()) {
    if (name.size() > 0xFFFF) throw Error("checkpoint: parameter name too long");
    w.u16(std::uint16_t(name.size()));
    w.bytes(name);
    w.u8(std::uint8_t(t.rank()));
    for (auto e : t.shape()) w.u32(std::uint32_t(e));
    w.u8(std::uint8_t(dtype_of<T>()));
    for (T v : t.values()) {
      if constexpr (std::is_same_v<T, float>)
        w.f32(v);
      else
        w.f64(v);
    }
  }
  return w.take();
}

Contents decode(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes);
  r.expect_magic("DHMW");
  Contents c;
  c.version = r.u16();
  if (c.version != 1) r.fail("unsupported checkpoint version " + std::to_string(c.version));
  c.config_text = r.bytes(r.u32());
  const std::uint32_t count = r.u32();
  for (std::uint32_t k = 0; k < count; ++k) {
    Record rec;
    rec.name = r.bytes(r.u16());
    const std::uint8_t rank = r.u8();
    for (std::uint8_t a = 0; a < rank; ++a) rec.shape.push_back(r.u32());
    const std::uint8_t dt = r.u8();
    if (dt > 1) r.fail("unknown dtype code " + std::to_string(dt));
    rec.dtype = DType(dt);
    const std::uint64_t n = numel(rec.shape);
    if (n * (dt == 0 ? 4 : 8) > bytes.size())
      r.fail("record '" + rec.name + "' larger than the file");
    rec.values.resize(n);
    for (auto& v : rec.values) v = dt == 0 ? double(r.f32()) : r.f64();
    c.records.push_back(std::move(rec));
  }
  r.expect_end();
  return c;
}

template <class T>
void assign(ParameterSet<T>& params, const Contents& contents) {
  std::unordered_map<std::string, const Record*> by_name;
  for (const auto& rec : contents.records) by_name[rec.name] = &rec;
  for (const auto& [name, t] : params.items()) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw Error("checkpoint: missing parameter '" + name + "'");
    const Record& rec = *it->second;
    if (rec.shape != t.shape())
      throw ShapeError("checkpoint: parameter '" + name + "' has shape " + to_string(rec.shape) +
                       ", model expects " + to_string(t.shape()));
    Tensor<T> dst = t;
    auto v = dst.mutable_values();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<T>(rec.values[i]);
  }
  if (by_name.size() != params.size())
    throw Error("checkpoint: holds " + std::to_string(by_name.size()) +
                " parameters, model has " + std::to_string(params.size()));
}

template <class T>
void save(const std::string& path, const ParameterSet<T>& params, const std::string& config_text) {
  io::write_file(path, encode(params, config_text));
}

Contents load(const std::string& path) { return decode(io::read_file(path)); }

#define DHM_CKPT_INSTANTIATE(T)                                                              \
  template std::vector<std::uint8_t> encode(const ParameterSet<T>&, const std::string&);    \
  template void assign(ParameterSet<T>&, const Contents&);                                  \
  template void save(const std::string&, const ParameterSet<T>&, const std::string&);
DHM_CKPT_INSTANTIATE(float)
DHM_CKPT_INSTANTIATE(double)

}  // namespace dhm::checkpoint
