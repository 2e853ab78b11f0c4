#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace ove6d::nn {

/// One named entry of an OVCK file: either an f32 tensor or an opaque byte string.
struct CheckpointRecord {
  enum class Kind : std::uint8_t { F32 = 1, Bytes = 2 };

  std::string name;
  Kind kind = Kind::F32;
  std::vector<int> shape;
  std::vector<float> values;
  std::string bytes;
};

inline constexpr std::uint16_t kCheckpointVersion = 1;

/// Layout: "OVCK", u16 version, u32 record count, then per record: u16 name length + name,
/// u8 kind, u8 rank, rank x u32 dims, payload (f32 little-endian, or dims[0] bytes).
void save_checkpoint(const std::filesystem::path& path, const std::vector<CheckpointRecord>& records);
std::vector<CheckpointRecord> load_checkpoint(const std::filesystem::path& path);

}  // namespace ove6d::nn
