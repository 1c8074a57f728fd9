#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dhm/parameters.hpp"

// DHMW weight file, little-endian:
//   "DHMW", u16 version (1), u32 config length, config text (key=value lines),
//   u32 record count, then per record:
//   u16 name length, name, u8 rank, u32 extent * rank, u8 dtype {0: f32, 1: f64}, values.
namespace dhm::checkpoint {

struct Record {
  std::string name;
  Shape shape;
  DType dtype = DType::f32;
  std::vector<double> values;
};

struct Contents {
  std::uint16_t version = 1;
  std::string config_text;
  std::vector<Record> records;
};

template <class T>
std::vector<std::uint8_t> encode(const ParameterSet<T>& params, const std::string& config_text);
Contents decode(std::span<const std::uint8_t> bytes);

/// Copies records into `params` (converting dtype). Every parameter must be
/// present with a matching shape; extra records are an error too.
template <class T>
void assign(ParameterSet<T>& params, const Contents& contents);

template <class T>
void save(const std::string& path, const ParameterSet<T>& params, const std::string& config_text);
Contents load(const std::string& path);

}  // namespace dhm::checkpoint
