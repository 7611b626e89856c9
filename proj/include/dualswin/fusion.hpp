#pragma once

#include <torch/torch.h>

#include <array>
#include <string>
#include <vector>

#include "dualswin/encoder.hpp"

namespace dualswin {

enum class FusionMode { ConcatProject, WeightedSum };

FusionMode parse_fusion_mode(const std::string& name);
std::string to_string(FusionMode mode);

/// F = conv1x1([rgb || aux]) with a 2C -> C kernel and bias. Pointwise only.
torch::Tensor fuse_concat(const torch::Tensor& rgb, const torch::Tensor& aux, torch::nn::Conv2d& projection);

/// F = sigmoid(alpha) * rgb + (1 - sigmoid(alpha)) * aux.
torch::Tensor fuse_weighted_sum(const torch::Tensor& rgb, const torch::Tensor& aux, const torch::Tensor& alpha);

/// Per-scale cross-modal fusion: one parameter set per pyramid level.
class CrossModalFusionImpl : public torch::nn::Module {
 public:
  CrossModalFusionImpl(FusionMode mode, std::array<int, 4> channels);
  FeaturePyramid forward(const FeaturePyramid& rgb, const FeaturePyramid& aux);

  FusionMode mode() const { return mode_; }
  /// Concat-mode kernels (2C_l -> C_l), empty in weighted-sum mode.
  std::vector<torch::nn::Conv2d> projections;
  /// Weighted-sum logits, one scalar per scale, empty in concat mode.
  std::vector<torch::Tensor> alphas;

 private:
  FusionMode mode_;
};
TORCH_MODULE(CrossModalFusion);

/// Conv1x1 (no bias) -> BatchNorm -> ReLU, mapping C_l to the decoder width.
class DecoderProjectionImpl : public torch::nn::Module {
 public:
  DecoderProjectionImpl(int in_channels, int out_channels);
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::Conv2d conv{nullptr};
  torch::nn::BatchNorm2d bn{nullptr};
};
TORCH_MODULE(DecoderProjection);

torch::Tensor project_to_decoder_width(const torch::Tensor& level, DecoderProjection& projection);

}  // namespace dualswin
