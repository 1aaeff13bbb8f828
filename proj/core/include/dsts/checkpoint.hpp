#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "dsts/keyvalue.hpp"
#include "dsts/model.hpp"

namespace dsts {

KeyValues to_key_values(const ModelConfig& config);
/// Reads the keys written by to_key_values; other keys are ignored and
/// missing ones keep their defaults.
ModelConfig model_config_from(const KeyValues& kv);

/// Binary layout, little-endian:
///   "DSTSCKPT", u32 version, u64 n + n bytes of model config text,
///   u64 n + n bytes of free-form run config text, u64 block count, then per
///   block: u32 name length, name, u32 rank, rank x u64 dims, f64 data.
/// Blocks are the parameters in slot order followed by the running mean and
/// variance of every BN layer.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const Model& model, const std::string& run_config = {});

struct LoadedCheckpoint {
  Model model;
  std::string run_config;
};
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace dsts
