#pragma once
// Checkpoint container (all integers little-endian):
//
//   "ADCKPT01"                        8-byte magic
//   u32 version                       currently 1
//   u64 arch_hash                     UNetConfig::arch_hash()
//   u32 in_channels, base_channels, blocks_per_level, temb_dim, norm_groups
//   u32 levels, then levels x u32 channel multiplier
//   u32 tensor_count
//   tensor_count records:
//     u32 name_len, name bytes, u32 ndim, ndim x u32 dims,
//     prod(dims) float32 payload
//   "END!"                            4-byte trailer
//
// Optimizer state for resumable training uses the same header with magic
// "ADOPTS01", then u64 step, u32 epochs_done, the first- and second-moment
// tensor blocks and the "END!" trailer.

#include <filesystem>
#include <optional>

#include "autoddpm/unet.hpp"

namespace autoddpm {

inline constexpr std::uint32_t kCheckpointVersion = 1;

void checkpoint_save(const UNetParams<float>& params, const std::filesystem::path& path);
// Throws DataError on bad magic, truncation, version or hash mismatch.
// When expected is given, the stored architecture must hash identically.
UNetParams<float> checkpoint_load(const std::filesystem::path& path,
                                  const std::optional<UNetConfig>& expected = std::nullopt);

struct AdamState {
  std::uint64_t step = 0;
  std::uint32_t epochs_done = 0;
  UNetParams<float> m, v;
};

void optimizer_state_save(const AdamState& state, const std::filesystem::path& path);
AdamState optimizer_state_load(const std::filesystem::path& path, const UNetConfig& expected);

}  // namespace autoddpm
