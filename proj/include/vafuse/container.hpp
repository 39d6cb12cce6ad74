#pragma once

#include "vafuse/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace vafuse {

/// One entry of the flat binary tensor container.
struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<double> values;

  friend bool operator==(const NamedArray&, const NamedArray&) = default;
};

inline constexpr char kContainerMagic[4] = {'V', 'A', 'F', 'C'};
inline constexpr std::uint32_t kContainerVersion = 1;

/// Layout, all integers u32 little-endian:
///   "VAFC" | version | count |
///   per entry: name_len | name bytes (UTF-8) | rank | extents... | f64 LE values...
std::string encode_container(const std::vector<NamedArray>& entries);
std::vector<NamedArray> decode_container(const std::string& bytes);

void write_container(const std::filesystem::path& path, const std::vector<NamedArray>& entries);
std::vector<NamedArray> read_container(const std::filesystem::path& path);

NamedArray to_named(const std::string& name, const Tensor& t);
Tensor to_tensor(const NamedArray& entry, bool requires_grad = false);

}  // namespace vafuse
