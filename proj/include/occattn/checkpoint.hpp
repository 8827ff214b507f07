#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "occattn/model.hpp"

namespace occattn {

struct CheckpointMeta {
  std::size_t step = 0;
  double val_loss = 0.0;
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, std::string>> run_config;  // echoed key=value settings
};

struct Checkpoint {
  OccupancyModel model;
  CheckpointMeta meta;
};

/// Binary layout: magic "OACKPT1\n", u32 version, u32 length + JSON header (model config
/// and metadata), u32 tensor count, then per tensor: u32 name length, name, u8 kind
/// (0 parameter, 1 buffer), u32 rank, u32 extents, float32 payload. Little-endian.
std::string serialize_checkpoint(const OccupancyModel& model, const CheckpointMeta& meta);
/// Validates every expected name and shape; throws FormatError on any mismatch.
Checkpoint parse_checkpoint(const std::string& bytes);

void save_checkpoint(const OccupancyModel& model, const CheckpointMeta& meta, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::string model_config_json(const ModelConfig& config);
ModelConfig parse_model_config_json(const std::string& text);

}  // namespace occattn
