#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>

#include <json.hpp>

#include "raffnet/fecal.hpp"
#include "raffnet/model.hpp"
#include "raffnet/training.hpp"

namespace raffnet {

struct CalibrationSpec {
  bool enabled = false;
  int patches = 200;  // of each kind
  CalibrationOptions options;
};

nlohmann::json to_json(const CalibrationSpec& c);
CalibrationSpec calibration_spec_from_json(const nlohmann::json& j);

struct RunConfig {
  std::filesystem::path manifest;  // absolute after loading
  std::filesystem::path output;
  std::uint64_t seed = 0;
  ModelConfig model;
  TrainConfig train;
  CalibrationSpec calibration;
};

// "default", a preset count, a path (relative to base_dir) or an inline object.
AnchorConfig resolve_anchors(const nlohmann::json& j, const std::filesystem::path& base_dir);

// Model keys may sit under "model" or at the top level. The top-level seed
// seeds both model initialization and training.
RunConfig run_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
RunConfig load_run_config(const std::filesystem::path& path);
nlohmann::json to_json(const RunConfig& cfg);

void set_seed(RunConfig& cfg, std::uint64_t seed);

// Fits the fecal adapter on synthetic patches when enabled and the preset
// has a fecal branch; nullopt otherwise.
std::optional<CalibrationResult> calibrate(RaffNet& model, const CalibrationSpec& spec, std::uint64_t seed);

}  // namespace raffnet
