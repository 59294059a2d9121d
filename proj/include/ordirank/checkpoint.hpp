#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "ordirank/models.hpp"

namespace ordirank {

inline constexpr char kCheckpointMagic[4] = {'2', 'S', 'R', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct TrainingMeta {
  std::int32_t epoch = 0;  // 1-based epoch the parameters were taken from
  double val_loss = 0.0;
  std::uint64_t seed = 0;

  bool operator==(const TrainingMeta&) const = default;
};

struct Checkpoint {
  SubClassifier model;
  TrainingMeta meta;
};

/**
 * Binary layout (all integers little-endian):
 *
 *   "2SRK" | u32 version
 *   u32 len | arch text (ArchSpec::serialize)
 *   u8 split | i32 epoch | f64 val_loss | u64 seed
 *   u32 record count, then per record:
 *     u32 len | name | u8 ndim | u32 dims[ndim] | f32 payload[prod(dims)]
 */
std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
// Throws FormatError (with byte offset) on bad magic, version mismatch or truncation.
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace ordirank
