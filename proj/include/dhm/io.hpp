#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dhm/cube.hpp"

// Little-endian binary formats:
//   HSC1  u32 H, u32 W, u32 bands, u8 dtype {0: f32, 1: f64}, band-major planar values
//   MSK1  u32 H, u32 W, f32 values (row-major)
//   MEA1  u32 H, u32 W*, f32 values (row-major)
namespace dhm::io {

class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u16(std::uint16_t v);
  void u32(std::uint32_t v);
  void f32(float v);
  void f64(double v);
  void bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
  const std::vector<std::uint8_t>& data() const { return buf_; }
  std::vector<std::uint8_t> take() { return std::move(buf_); }

 private:
  std::vector<std::uint8_t> buf_;
};

/// Bounds-checked reader; every failure is a FormatError carrying the offset.
class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}
  std::uint8_t u8();
  std::uint16_t u16();
  std::uint32_t u32();
  float f32();
  double f64();
  std::string bytes(std::size_t n);
  void expect_magic(std::string_view magic);
  std::uint64_t offset() const { return pos_; }
  bool at_end() const { return pos_ == data_.size(); }
  void expect_end();
  [[noreturn]] void fail(const std::string& what) const;

 private:
  void need(std::size_t n);
  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> encode_cube(const HsiCube& cube, DType dtype = DType::f32);
HsiCube decode_cube(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_mask(const Plane& mask);
Plane decode_mask(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_measurement(const Plane& y);
Plane decode_measurement(std::span<const std::uint8_t> bytes);

inline void write_cube(const std::string& path, const HsiCube& c, DType dtype = DType::f32) {
  write_file(path, encode_cube(c, dtype));
}
inline HsiCube read_cube(const std::string& path) { return decode_cube(read_file(path)); }
inline void write_mask(const std::string& path, const Plane& m) { write_file(path, encode_mask(m)); }
inline Plane read_mask(const std::string& path) { return decode_mask(read_file(path)); }
inline void write_measurement(const std::string& path, const Plane& y) {
  write_file(path, encode_measurement(y));
}
inline Plane read_measurement(const std::string& path) {
  return decode_measurement(read_file(path));
}

}  // namespace dhm::io
