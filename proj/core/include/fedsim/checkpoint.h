#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fedsim/param_vector.h"

namespace fedsim {

// CRC-64/XZ (reflected 0x42F0E1EBA9EA3693, init/xorout ~0).
std::uint64_t crc64(const void* data, std::size_t len);
std::uint64_t crc64_update(std::uint64_t crc, const void* data, std::size_t len);

struct CheckpointMeta {
  std::uint32_t version = 1;
  std::uint64_t round = 0;
};

struct Checkpoint {
  CheckpointMeta meta;
  ParamVector params;
};

// Binary model snapshot:
//   "PHCK" | u32 version | u64 round | u64 param_count | u64 crc |
//   entry table (u32 name_len, name, u32 rank, u64 dims...) | f64 payload
// All integers and floats little-endian; crc covers the table and payload.
// Writes go to `<path>.tmp` and are renamed into place, so a reader never
// observes a half-written file.
void write_checkpoint(const std::filesystem::path& path, const ParamVector& params,
                      const CheckpointMeta& meta);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace fedsim
