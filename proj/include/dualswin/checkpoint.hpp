#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace dualswin {

/// Ordered name -> tensor list (parameters followed by buffers).
using TensorMap = std::vector<std::pair<std::string, torch::Tensor>>;

/// Checkpoint directory layout:
///   manifest.json  {"format": "dualswin-tensors-v1",
///                   "tensors": [{"name", "shape", "offset", "numel"}...]}
///   tensors.bin    concatenated MMT1 records, one per tensor, each stored as
///                  C=1, H=1, W=numel float32 values.
void save_tensor_map(const std::filesystem::path& dir, const TensorMap& tensors);
TensorMap load_tensor_map(const std::filesystem::path& dir);

/// Parameters then buffers, with their registered hierarchical names.
TensorMap named_state(const torch::nn::Module& module);

/// Copies matching tensors into `module`. Throws CheckpointLoadError on a
/// missing name or shape clash.
void load_state(torch::nn::Module& module, const TensorMap& tensors);

/// Deep copy (detached clones) of a module's state, for best-of snapshots.
TensorMap clone_state(const torch::nn::Module& module);

}  // namespace dualswin
