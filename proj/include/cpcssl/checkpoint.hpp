#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "cpcssl/training.hpp"

namespace cpcssl {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Everything needed to continue a run: parameters, optimizer moments, the
/// root random stream and the number of finished epochs.
///
/// On disk: "CPCS", u32 version, mode byte, u32 record count, then records of
/// (u32 name length, name, u32 rank, u64 dims, f64 values), then the CRC32 of
/// all preceding bytes. Integers and floats are little-endian. Records are
/// named param/<name>, adam/m/<name>, adam/v/<name>, adam/step, rng, epoch.
struct Checkpoint {
  Mode mode = Mode::cpc;
  ParameterStore params;
  AdamState adam;
  RngState rng;
  Index epoch = 0;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
/// Verifies the checksum before reading any record.
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

/// Writes to a sibling temporary file and renames it into place.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

Checkpoint make_checkpoint(const Trainer& trainer);
void restore_trainer(Trainer& trainer, const Checkpoint& ckpt);

}  // namespace cpcssl
