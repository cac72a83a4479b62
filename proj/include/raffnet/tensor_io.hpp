#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "raffnet/types.hpp"

namespace raffnet {

using TensorMap = std::map<std::string, Matrix>;

inline constexpr std::uint32_t kTensorFormatVersion = 1;

// Little-endian container: magic, version, count, then per tensor the name,
// shape and column-major float64 data.
void write_tensors(const TensorMap& tensors, const std::filesystem::path& path);
TensorMap read_tensors(const std::filesystem::path& path);

}  // namespace raffnet
