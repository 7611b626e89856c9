#include "dualswin/fusion.hpp"

#include "dualswin/error.hpp"

namespace dualswin {

FusionMode parse_fusion_mode(const std::string& name) {
  if (name == "concat_project") return FusionMode::ConcatProject;
  if (name == "weighted_sum") return FusionMode::WeightedSum;
  fail(ErrorKind::ConfigError, "unknown fusion mode '" + name + "' (expected concat_project|weighted_sum)");
}

std::string to_string(FusionMode mode) {
  return mode == FusionMode::WeightedSum ? "weighted_sum" : "concat_project";
}

namespace {
void require_same_shape(const torch::Tensor& a, const torch::Tensor& b) {
  if (a.sizes() != b.sizes()) fail(ErrorKind::ShapeMismatch, "fusion inputs differ in shape");
}
}  // namespace

torch::Tensor fuse_concat(const torch::Tensor& rgb, const torch::Tensor& aux, torch::nn::Conv2d& projection) {
  require_same_shape(rgb, aux);
  if (projection->weight.size(1) != 2 * rgb.size(1))
    fail(ErrorKind::ShapeMismatch, "fusion kernel expects " + std::to_string(projection->weight.size(1)) +
                                       " input channels, got 2 x " + std::to_string(rgb.size(1)));
  return projection->forward(torch::cat({rgb, aux}, 1));
}

torch::Tensor fuse_weighted_sum(const torch::Tensor& rgb, const torch::Tensor& aux, const torch::Tensor& alpha) {
  require_same_shape(rgb, aux);
  auto w = torch::sigmoid(alpha);
  return w * rgb + (1 - w) * aux;
}

CrossModalFusionImpl::CrossModalFusionImpl(FusionMode mode, std::array<int, 4> channels) : mode_(mode) {
  for (int l = 0; l < 4; ++l) {
    const auto name = std::to_string(l);
    if (mode == FusionMode::ConcatProject) {
      projections.push_back(register_module(
          "proj" + name, torch::nn::Conv2d(torch::nn::Conv2dOptions(2 * channels[l], channels[l], 1).bias(true))));
    } else {
      alphas.push_back(register_parameter("alpha" + name, torch::zeros({})));
    }
  }
}

FeaturePyramid CrossModalFusionImpl::forward(const FeaturePyramid& rgb, const FeaturePyramid& aux) {
  if (rgb.levels.size() != 4 || aux.levels.size() != 4) fail(ErrorKind::ShapeMismatch, "fusion expects 4 levels");
  FeaturePyramid out;
  for (std::size_t l = 0; l < 4; ++l) {
    out.levels.push_back(mode_ == FusionMode::ConcatProject
                             ? fuse_concat(rgb.levels[l], aux.levels[l], projections[l])
                             : fuse_weighted_sum(rgb.levels[l], aux.levels[l], alphas[l]));
  }
  return out;
}

DecoderProjectionImpl::DecoderProjectionImpl(int in_channels, int out_channels) {
  conv = register_module("conv",
                         torch::nn::Conv2d(torch::nn::Conv2dOptions(in_channels, out_channels, 1).bias(false)));
  bn = register_module("bn", torch::nn::BatchNorm2d(out_channels));
}

torch::Tensor DecoderProjectionImpl::forward(const torch::Tensor& x) {
  if (x.size(1) != conv->weight.size(1))
    fail(ErrorKind::ShapeMismatch, "projection expects " + std::to_string(conv->weight.size(1)) + " channels");
  return torch::relu(bn->forward(conv->forward(x)));
}

torch::Tensor project_to_decoder_width(const torch::Tensor& level, DecoderProjection& projection) {
  return projection->forward(level);
}

}  // namespace dualswin
