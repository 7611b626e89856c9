#pragma once

#include <torch/torch.h>

#include <map>
#include <string>
#include <utility>
#include <vector>

namespace dualswin {

enum class DecoderKind { UnetPP, Hybrid };

DecoderKind parse_decoder_kind(const std::string& name);
std::string to_string(DecoderKind kind);

/// Bilinear 2x upsampling, half-pixel centers (align_corners = false).
torch::Tensor upsample2x(const torch::Tensor& x);
torch::Tensor resize_bilinear(const torch::Tensor& x, std::int64_t h, std::int64_t w);

/// One dense node x^{i,j} and the tensors it concatenates, in order.
struct UnetPPNode {
  int i = 0;
  int j = 0;
  std::vector<std::pair<int, int>> inputs;  // last entry is the upsampled x^{i+1,j-1}
  int arity() const { return static_cast<int>(inputs.size()); }
  int in_channels(int width) const { return arity() * width; }
};

/// Dense nodes (j >= 1, i + j <= levels - 1) in topological order: j ascending,
/// then i ascending.
std::vector<UnetPPNode> unetpp_graph(int levels);

/// (3x3 conv, no bias) -> BN -> ReLU, twice.
class ConvBlockImpl : public torch::nn::Module {
 public:
  ConvBlockImpl(int in_channels, int out_channels);
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::Conv2d conv1{nullptr}, conv2{nullptr};
  torch::nn::BatchNorm2d bn1{nullptr}, bn2{nullptr};
};
TORCH_MODULE(ConvBlock);

/// Nested dense-skip decoder over a projected pyramid.
class UnetPPImpl : public torch::nn::Module {
 public:
  UnetPPImpl(int width, int levels = 4, bool deep_supervision = false);

  /// Returns x^{0, levels-1} at the finest resolution.
  torch::Tensor forward(const std::vector<torch::Tensor>& pyramid);
  /// Every node keyed by (i, j), inputs x^{i,0} included.
  std::map<std::pair<int, int>, torch::Tensor> forward_nodes(const std::vector<torch::Tensor>& pyramid);

  const std::vector<UnetPPNode>& graph() const { return graph_; }
  int width() const { return width_; }
  bool deep_supervision() const { return deep_supervision_; }
  /// Registered as "x{i}_{j}".
  std::map<std::pair<int, int>, ConvBlock> blocks;

 private:
  int width_;
  int levels_;
  bool deep_supervision_;
  std::vector<UnetPPNode> graph_;
};
TORCH_MODULE(UnetPP);

/// Per-level 1x1 conv to the shared width, bilinear upsampling to the finest
/// level, concatenation and one 1x1 fusion conv.
class MlpHeadImpl : public torch::nn::Module {
 public:
  MlpHeadImpl(int width, int levels = 4);
  torch::Tensor forward(const std::vector<torch::Tensor>& pyramid);

  std::vector<torch::nn::Conv2d> level_proj;
  torch::nn::Conv2d fuse{nullptr};
};
TORCH_MODULE(MlpHead);

/// Squeeze-and-excitation channel gate: pool -> C/r -> ReLU -> C -> sigmoid.
class SeGateImpl : public torch::nn::Module {
 public:
  SeGateImpl(int channels, int reduction = 4);
  /// B x C x H x W -> B x C, values in (0, 1).
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::Linear fc1{nullptr}, fc2{nullptr};
};
TORCH_MODULE(SeGate);

torch::Tensor se_gate(const torch::Tensor& x, SeGate& gate);

/// z = ReLU(BN(conv1x1([u || s]))), output z * gate(z).
class HybridFuseImpl : public torch::nn::Module {
 public:
  HybridFuseImpl(int width, int reduction = 4);
  torch::Tensor forward(const torch::Tensor& u, const torch::Tensor& s);
  /// Same as forward with the gate output replaced by `gate_override` (B x C).
  torch::Tensor forward_with_gate(const torch::Tensor& u, const torch::Tensor& s, const torch::Tensor& gate_override);

  torch::nn::Conv2d conv{nullptr};
  torch::nn::BatchNorm2d bn{nullptr};
  SeGate gate{nullptr};

 private:
  torch::Tensor mix(const torch::Tensor& u, const torch::Tensor& s);
};
TORCH_MODULE(HybridFuse);

torch::Tensor hybrid_fuse(const torch::Tensor& u, const torch::Tensor& s, HybridFuse& fuse);

/// Conv3x3 -> BN -> ReLU -> dropout -> conv1x1 to one channel -> bilinear
/// resize to out_size x out_size.
class ClassificationHeadImpl : public torch::nn::Module {
 public:
  ClassificationHeadImpl(int width, int out_size, double dropout = 0.1);
  torch::Tensor forward(const torch::Tensor& x);

  int out_size() const { return out_size_; }
  torch::nn::Conv2d conv{nullptr};
  torch::nn::BatchNorm2d bn{nullptr};
  torch::nn::Dropout dropout{nullptr};
  torch::nn::Conv2d classifier{nullptr};

 private:
  int out_size_;
};
TORCH_MODULE(ClassificationHead);

struct DecoderOutput {
  torch::Tensor features;                 // B x width x H_1 x W_1
  std::vector<torch::Tensor> aux_logits;  // deep-supervision logits at H_1, may be empty
};

/// Decoder variants behind one interface. Hybrid runs UNet++ and the MLP head
/// on the same projected pyramid and fuses them.
class DecoderImpl : public torch::nn::Module {
 public:
  DecoderImpl(DecoderKind kind, int width, bool deep_supervision = false, int se_reduction = 4);
  DecoderOutput forward(const std::vector<torch::Tensor>& pyramid);

  DecoderKind kind() const { return kind_; }
  UnetPP unetpp{nullptr};
  MlpHead mlp{nullptr};
  HybridFuse hybrid{nullptr};
  /// 1x1 logit heads on x^{0,1} and x^{0,2}, only with deep supervision.
  std::vector<torch::nn::Conv2d> aux_heads;

 private:
  DecoderKind kind_;
};
TORCH_MODULE(Decoder);

}  // namespace dualswin
