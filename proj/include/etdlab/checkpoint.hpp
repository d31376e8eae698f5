#pragma once

#include <filesystem>
#include <optional>

#include "etdlab/act.hpp"

namespace etdlab {

/// Checkpoint header metadata. A k=1 partition trains identically to the
/// plain stack and adds nothing at load time, so `etd` is normalized to
/// absent when iterations == 1; plain and k=1 runs produce byte-identical
/// files.
struct CheckpointMeta {
  ModelConfig model;
  std::optional<EtdConfig> etd;
  std::optional<ActOptions> adaptive;
  int64_t step = 0;
  std::string rng_state;
};

struct LoadedCheckpoint {
  ModelParams params;
  std::optional<RouterParams> router;
  CheckpointMeta meta;
};

/// Versioned binary: magic "ETDCKPT1", little-endian u64 header length,
/// UTF-8 JSON header (config, partition, step count, RNG state, tensor
/// table), then raw little-endian f64 payloads in header order. Writes are
/// atomic (temp file + rename). Non-finite values are refused.
void save_checkpoint(const std::filesystem::path& path, ModelParams& params,
                     RouterParams* router, const CheckpointMeta& meta);

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace etdlab
