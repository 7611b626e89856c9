#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include "dualswin/inference.hpp"
#include "dualswin/network.hpp"
#include "dualswin/raster_io.hpp"
#include "dualswin/trainer.hpp"

namespace dualswin {

struct DataConfig {
  std::string root = "data";
  std::string output_root = "runs";
  RasterFormat format = RasterFormat::Raw;
  MaskSource mask_source = MaskSource::Sibling;
  bool operator==(const DataConfig&) const = default;
};

/// Optional external encoder weights (tensor-map directories) and a name
/// mapping file. Empty strings mean random initialization.
struct PretrainedConfig {
  std::string rgb;
  std::string aux;
  std::string mapping;
  bool operator==(const PretrainedConfig&) const = default;
};

struct InferenceConfig {
  TtaPolicy tta = TtaPolicy::preset("4view");
  double tau = 0.51;
  bool operator==(const InferenceConfig&) const = default;
};

/// One YAML document. `seed` is the root of every random stream and is
/// copied into train.seed.
struct ExperimentConfig {
  std::uint64_t seed = 0;
  DataConfig data;
  ModelConfig model;
  PretrainedConfig pretrained;
  TrainConfig train;
  InferenceConfig inference;

  bool operator==(const ExperimentConfig&) const = default;
};

/// Throws ConfigError on syntax errors, unknown keys or invalid values.
ExperimentConfig parse_config(const std::string& yaml);
ExperimentConfig load_config(const std::filesystem::path& path);
std::string serialize_config(const ExperimentConfig& cfg);

ModelConfig parse_model_config(const std::string& yaml);
std::string serialize_model_config(const ModelConfig& cfg);

/// DUALSWIN_DATA_ROOT and DUALSWIN_OUTPUT_ROOT replace data.root and
/// data.output_root when set.
void apply_env_overrides(ExperimentConfig& cfg);

/// Loads pretrained encoder weights named in `pretrained`, if any.
void load_pretrained_encoders(DualSwinNet& model, const PretrainedConfig& pretrained);

/// Checkpoint directory: model.yaml, manifest.json + tensors.bin, and
/// stats.txt / meta.txt when given.
void save_checkpoint(const std::filesystem::path& dir, const ModelConfig& cfg, const TensorMap& state,
                     const std::optional<NormStats>& stats = std::nullopt,
                     const std::map<std::string, std::string>& meta = {});

struct LoadedCheckpoint {
  ModelConfig config;
  DualSwinNet model{nullptr};
  std::optional<NormStats> stats;
  std::map<std::string, std::string> meta;
};

/// Throws CheckpointLoadError. The model is returned in eval mode.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace dualswin
