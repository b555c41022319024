#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>

#include "mattforge/model.hpp"

namespace mattforge {

inline constexpr const char* kToolVersion = "0.1.0";

struct CheckpointInfo {
  std::uint64_t seed = 0;
  std::int64_t step = 0;
  std::string kind = "model";
  /// JSON object stored verbatim under "extra" in the manifest.
  std::string extra_json = "{}";
};

struct LoadedCheckpoint {
  Parameters<float> params;
  CheckpointInfo info;
  std::map<std::string, MatrixF> extra_tensors;
};

/// Writes `dir/manifest.json` and `dir/weights.bin`. The weights file holds
/// little-endian float32 tensors, row-major, concatenated in manifest order;
/// model tensors come first, followed by `extra_tensors` in key order.
void save_checkpoint(const std::filesystem::path& dir, const Parameters<float>& params, const CheckpointInfo& info,
                     const std::map<std::string, MatrixF>& extra_tensors = {});

LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir);

std::string model_config_to_json(const ModelConfig& config);
ModelConfig model_config_from_json(std::string_view json_text);

/// FNV-1a over every parameter byte; cheap identity check for frozen weights.
std::uint64_t parameter_fingerprint(const Parameters<float>& params);

}  // namespace mattforge
