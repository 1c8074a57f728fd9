#include "dhm/io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

namespace dhm {

void HsiCube::validate(const char* what) const {
  if (height == 0 || width == 0 || bands == 0)
    throw ShapeError(std::string(what) + ": extents must be >= 1, got " +
                     to_string(Shape{height, width, bands}));
  if (values.size() != height * width * bands)
    throw ShapeError(std::string(what) + ": buffer does not match " +
                     to_string(Shape{height, width, bands}));
  for (double v : values)
    if (!std::isfinite(v)) throw Error(std::string(what) + ": non-finite value");
}

void Plane::validate(const char* what) const {
  if (height == 0 || width == 0)
    throw ShapeError(std::string(what) + ": extents must be >= 1");
  if (values.size() != height * width)
    throw ShapeError(std::string(what) + ": buffer does not match " +
                     to_string(Shape{height, width}));
  for (double v : values)
    if (!std::isfinite(v)) throw Error(std::string(what) + ": non-finite value");
}

}  // namespace dhm

namespace dhm::io {

void ByteWriter::u16(std::uint16_t v) {
  for (int i = 0; i < 2; ++i) buf_.push_back(std::uint8_t(v >> (8 * i)));
}
void ByteWriter::u32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf_.push_back(std::uint8_t(v >> (8 * i)));
}
void ByteWriter::f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
void ByteWriter::f64(double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) buf_.push_back(std::uint8_t(bits >> (8 * i)));
}

void ByteReader::fail(const std::string& what) const { throw FormatError(what, pos_); }

void ByteReader::need(std::size_t n) {
  if (data_.size() - pos_ < n)
    fail("unexpected end of data: need " + std::to_string(n) + " more bytes, " +
         std::to_string(data_.size() - pos_) + " available");
}

std::uint8_t ByteReader::u8() {
  need(1);
  return data_[pos_++];
}
std::uint16_t ByteReader::u16() {
  need(2);
  std::uint16_t v = std::uint16_t(data_[pos_] | (data_[pos_ + 1] << 8));
  pos_ += 2;
  return v;
}
std::uint32_t ByteReader::u32() {
  need(4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t(data_[pos_ + i]) << (8 * i);
  pos_ += 4;
  return v;
}
float ByteReader::f32() { return std::bit_cast<float>(u32()); }
double ByteReader::f64() {
  need(8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(data_[pos_ + i]) << (8 * i);
  pos_ += 8;
  return std::bit_cast<double>(v);
}
std::string ByteReader::bytes(std::size_t n) {
  need(n);
  std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
  pos_ += n;
  return s;
}
void ByteReader::expect_magic(std::string_view magic) {
  const std::size_t at = pos_;
  if (data_.size() - pos_ < magic.size() ||
      std::memcmp(data_.data() + pos_, magic.data(), magic.size()) != 0)
    throw FormatError("bad magic, expected \"" + std::string(magic) + "\"", at);
  pos_ += magic.size();
}
void ByteReader::expect_end() {
  if (!at_end())
    fail(std::to_string(data_.size() - pos_) + " trailing bytes after payload");
}

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "' for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!out) throw Error("write to '" + path + "' failed");
}

namespace {

std::uint32_t checked_u32(std::size_t v, const char* what) {
  if (v > 0xFFFFFFFFu) throw Error(std::string(what) + " exceeds u32 range");
  return std::uint32_t(v);
}

std::vector<std::uint8_t> encode_plane(const char* magic, const Plane& p) {
  ByteWriter w;
  w.bytes(magic);
  w.u32(checked_u32(p.height, "height"));
  w.u32(checked_u32(p.width, "width"));
  for (double v : p.values) w.f32(float(v));
  return w.take();
}

Plane decode_plane(const char* magic, std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect_magic(magic);
  Plane p;
  p.height = r.u32();
  p.width = r.u32();
  if (p.height == 0 || p.width == 0) r.fail("zero extent in header");
  const std::uint64_t n = std::uint64_t(p.height) * p.width;
  if (n * 4 > bytes.size()) r.fail("payload shorter than header extents imply");
  p.values.resize(n);
  for (auto& v : p.values) v = r.f32();
  r.expect_end();
  return p;
}

}  // namespace

std::vector<std::uint8_t> encode_cube(const HsiCube& c, DType dtype) {
  ByteWriter w;
  w.bytes("HSC1");
  w.u32(checked_u32(c.height, "height"));
  w.u32(checked_u32(c.width, "width"));
  w.u32(checked_u32(c.bands, "bands"));
  w.u8(std::uint8_t(dtype));
  for (std::size_t b = 0; b < c.bands; ++b)
    for (std::size_t i = 0; i < c.height; ++i)
      for (std::size_t j = 0; j < c.width; ++j) {
        const double v = c.at(i, j, b);
        if (dtype == DType::f32)
          w.f32(float(v));
        else
          w.f64(v);
      }
  return w.take();
}

HsiCube decode_cube(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect_magic("HSC1");
  HsiCube c;
  c.height = r.u32();
  c.width = r.u32();
  c.bands = r.u32();
  if (c.height == 0 || c.width == 0 || c.bands == 0) r.fail("zero extent in header");
  const std::uint8_t dt = r.u8();
  if (dt > 1) r.fail("unknown dtype code " + std::to_string(dt));
  const std::uint64_t n = std::uint64_t(c.height) * c.width * c.bands;
  if (n * (dt == 0 ? 4 : 8) > bytes.size()) r.fail("payload shorter than header extents imply");
  c.values.assign(n, 0.0);
  for (std::size_t b = 0; b < c.bands; ++b)
    for (std::size_t i = 0; i < c.height; ++i)
      for (std::size_t j = 0; j < c.width; ++j) c.at(i, j, b) = dt == 0 ? r.f32() : r.f64();
  r.expect_end();
  return c;
}

std::vector<std::uint8_t> encode_mask(const Plane& m) { return encode_plane("MSK1", m); }
Plane decode_mask(std::span<const std::uint8_t> bytes) { return decode_plane("MSK1", bytes); }
std::vector<std::uint8_t> encode_measurement(const Plane& y) { return encode_plane("MEA1", y); }
Plane decode_measurement(std::span<const std::uint8_t> bytes) {
  return decode_plane("MEA1", bytes);
}

}  // namespace dhm::io
