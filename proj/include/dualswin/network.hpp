#pragma once

#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dualswin/decoder.hpp"
#include "dualswin/encoder.hpp"
#include "dualswin/fusion.hpp"
#include "dualswin/tile_io.hpp"

namespace dualswin {

struct ModelConfig {
  /// Shared by both streams; in_channels is overridden per stream (3 / 4).
  EncoderConfig encoder = EncoderConfig::desk(kRgbChannels);
  FusionMode fusion_mode = FusionMode::ConcatProject;
  DecoderKind decoder = DecoderKind::UnetPP;
  int decoder_width = 64;
  int out_size = 128;
  double head_dropout = 0.1;
  bool deep_supervision = false;
  int se_reduction = 4;
  /// false zeroes that auxiliary channel (thermal, slope, DEM, grayscale)
  /// after normalization and before encoding.
  std::array<bool, 4> aux_channel_mask = {true, true, true, true};

  /// SwinV2-S encoders, window 8, 256-wide decoder, 128 x 128 output.
  static ModelConfig full();
  static ModelConfig desk();

  EncoderConfig rgb_encoder() const;
  EncoderConfig aux_encoder() const;
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

struct NetworkOutput {
  torch::Tensor logits;                   // B x 1 x out x out
  std::vector<torch::Tensor> aux_logits;  // deep supervision, same size as logits
};

/// Dual encoders -> per-scale fusion -> decoder-width projections -> decoder
/// -> classification head.
class DualSwinNetImpl : public torch::nn::Module {
 public:
  explicit DualSwinNetImpl(ModelConfig cfg);

  torch::Tensor forward(const ModalPair& pair);
  NetworkOutput forward_outputs(const ModalPair& pair);
  /// Encoder outputs after the aux channel mask has been applied to the input.
  std::pair<FeaturePyramid, FeaturePyramid> encode(const ModalPair& pair);
  /// Everything after the encoders.
  NetworkOutput forward_from_pyramids(const FeaturePyramid& rgb, const FeaturePyramid& aux);

  const ModelConfig& config() const { return cfg_; }

  SwinEncoder encoder_rgb{nullptr};
  SwinEncoder encoder_aux{nullptr};
  CrossModalFusion fusion{nullptr};
  torch::nn::ModuleList projections;
  Decoder decoder{nullptr};
  ClassificationHead head{nullptr};

 private:
  ModelConfig cfg_;
};
TORCH_MODULE(DualSwinNet);

/// Eval-mode sigmoid of the logits, without autograd. Restores the previous
/// train/eval mode.
torch::Tensor predict_prob(DualSwinNet& model, const ModalPair& pair);

/// Parameter counts. `groups` partitions the model:
///   encoder_rgb, encoder_aux, fusion (per-scale fusion kernels),
///   projections, unetpp (plus hybrid/deep-supervision parts), head.
/// `views` are sums of groups:
///   fusion_plus_projections, decoder_total (projections + unetpp + head).
struct ParameterAudit {
  std::map<std::string, std::int64_t> groups;
  std::map<std::string, std::int64_t> views;
  std::int64_t total = 0;

  std::string to_text() const;
};

ParameterAudit parameter_audit(const DualSwinNet& model);
std::int64_t count_parameters(const torch::nn::Module& module);

}  // namespace dualswin
