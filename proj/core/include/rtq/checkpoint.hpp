#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "rtq/tensor.hpp"

namespace rtq {

/// One named record of a checkpoint file.
///
/// Layout (all integers little-endian):
///   "RTQ1" | version u32 | count u32 |
///   count x { name_len u32 | name (UTF-8) | rank u32 | dims u64[rank] | f64[prod(dims)] }
struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::vector<double> data;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_checkpoint(const std::vector<CheckpointEntry>& entries);
/// Throws VersionError on bad magic or unsupported version, IoError on truncation.
std::vector<CheckpointEntry> decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, const std::vector<CheckpointEntry>& entries);
std::vector<CheckpointEntry> load_checkpoint(const std::filesystem::path& path);

}  // namespace rtq
