#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "lpq/diff/tensor.hpp"

namespace lpq::fixtures {

// "LPQ1" container: magic, u16 version, u32 entry count, then per entry
// u16 name length, UTF-8 name, u8 rank, u32 extents, f32 row-major payload.
// All integers and floats little-endian. Integer-valued payloads (code
// indices, label volumes) are stored as exact f32 values.
using TensorMap = std::map<std::string, diff::Tensor>;

inline constexpr std::uint16_t kContainerVersion = 1;

std::vector<std::uint8_t> encode_container(const TensorMap& tensors);
TensorMap decode_container(const std::vector<std::uint8_t>& bytes);

void write_container(const std::filesystem::path& path, const TensorMap& tensors);
TensorMap read_container(const std::filesystem::path& path);

}  // namespace lpq::fixtures
