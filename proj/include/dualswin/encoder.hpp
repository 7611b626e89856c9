#pragma once

#include <torch/torch.h>

#include <array>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "dualswin/tile_io.hpp"

namespace dualswin {

/// Hierarchical shifted-window encoder settings. Stage s has width
/// base_dim * 2^s and runs at stride patch_stride * 2^s.
struct EncoderConfig {
  int in_channels = 3;
  int base_dim = 32;
  std::array<int, 4> depths = {2, 2, 2, 2};
  std::array<int, 4> heads = {2, 4, 8, 16};
  int window = 4;
  int patch_stride = 4;
  double mlp_ratio = 4.0;
  int cpb_hidden = 512;
  // Window larger than a stage's token grid shrinks to the grid side (and the
  // shift is dropped) instead of raising WindowGridMismatch.
  bool auto_shrink = true;

  /// SwinV2-Small, window 8: C=96, depths {2,2,18,2}, heads {3,6,12,24}.
  static EncoderConfig full(int in_channels);
  /// Test-suite default: C=32, depths {2,2,2,2}, heads {2,4,8,16}, window 4.
  static EncoderConfig desk(int in_channels);

  int stage_dim(int stage) const { return base_dim << stage; }
  int stride(int stage) const { return patch_stride << stage; }
  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
};

/// Four NCHW feature maps at strides {4, 8, 16, 32}.
struct FeaturePyramid {
  std::vector<torch::Tensor> levels;
};

/// Patch-embedding convolution weights (out x in x k x k) and bias.
struct PatchEmbedKernel {
  torch::Tensor weight;
  torch::Tensor bias;
};

/// The 4-channel auxiliary kernel: input slices 0..2 copy the RGB kernel and
/// slice 3 is their per-position mean. The bias is copied unchanged.
PatchEmbedKernel warm_init_aux_patch_embed(const PatchEmbedKernel& rgb);

/// Signed log-spaced coordinate fed to the position-bias MLP:
/// sign(d) * log2(1 + |d|) / log2(1 + max_offset); 0 when max_offset == 0.
double log_cpb_coordinate(int delta, int max_offset);
/// ((2w-1)^2 x 2) table of MLP inputs for all relative offsets (dy, dx) in a
/// window of side w, offsets enumerated row-major from (-(w-1), -(w-1)).
torch::Tensor log_cpb_table(int window);
/// (w^2 x w^2) index into log_cpb_table for every (query, key) token pair.
torch::Tensor relative_position_index(int window);

/// Continuous position bias network: Linear(2 -> hidden) -> ReLU ->
/// Linear(hidden -> heads, no bias).
torch::nn::Sequential make_cpb_mlp(int heads, int hidden);
/// Bias of shape heads x w^2 x w^2 for a window of side w.
torch::Tensor log_cpb_bias(torch::nn::Sequential& cpb_mlp, int window);

/// Scaled-cosine multi-head attention inside one window.
class WindowAttentionImpl : public torch::nn::Module {
 public:
  WindowAttentionImpl(int dim, int heads, int cpb_hidden);
  /// windows: (num_windows * B) x w^2 x dim. mask: num_windows x w^2 x w^2
  /// additive mask or undefined.
  torch::Tensor forward(const torch::Tensor& windows, int window, const torch::Tensor& mask = {});

  int heads() const { return heads_; }
  torch::nn::Linear qkv{nullptr};
  torch::nn::Linear proj{nullptr};
  torch::Tensor q_bias, v_bias, logit_scale;
  torch::nn::Sequential cpb_mlp{nullptr};

 private:
  int heads_;
};
TORCH_MODULE(WindowAttention);

/// Effective (window, shift) for an h x w token grid.
std::pair<int, int> effective_window(int window, int shift, std::int64_t h, std::int64_t w, bool auto_shrink);

/// Cyclic roll of a B x H x W x C token grid by (shift, shift).
torch::Tensor roll_grid(const torch::Tensor& grid, int shift);

/// Swin shifted-window mask (num_windows x w^2 x w^2): 0 within a region,
/// -100 across the cyclic-shift seams.
torch::Tensor shifted_window_mask(std::int64_t h, std::int64_t w, int window, int shift,
                                  torch::TensorOptions options);

/// Window self-attention over tokens (B x h*w x d): roll by -shift, partition
/// into windows, attend with the seam mask, merge and roll back.
/// Throws WindowGridMismatch when the window does not tile the grid.
torch::Tensor windowed_self_attention(const torch::Tensor& tokens, std::int64_t h, std::int64_t w, int window,
                                      int shift, WindowAttention& attention);

/// Residual post-norm transformer block (Swin-V2 ordering):
///   x = x + norm1(attn(x)); x = x + norm2(mlp(x)).
class SwinBlockImpl : public torch::nn::Module {
 public:
  SwinBlockImpl(int dim, int heads, int window, bool shifted, double mlp_ratio, int cpb_hidden, bool auto_shrink);
  /// x: B x H x W x C.
  torch::Tensor forward(const torch::Tensor& x);

  WindowAttention attn{nullptr};
  torch::nn::LayerNorm norm1{nullptr}, norm2{nullptr};
  torch::nn::Sequential mlp{nullptr};

 private:
  int window_;
  bool shifted_;
  bool auto_shrink_;
};
TORCH_MODULE(SwinBlock);

/// 2x2 neighbourhood concat -> Linear(4C -> 2C) -> LayerNorm(2C).
class PatchMergingImpl : public torch::nn::Module {
 public:
  explicit PatchMergingImpl(int dim);
  torch::Tensor forward(const torch::Tensor& x);  // B x H x W x C -> B x H/2 x W/2 x 2C

  torch::nn::Linear reduction{nullptr};
  torch::nn::LayerNorm norm{nullptr};
};
TORCH_MODULE(PatchMerging);

/// Conv(k = stride = patch_stride) followed by LayerNorm; emits B x H x W x C.
class PatchEmbedImpl : public torch::nn::Module {
 public:
  PatchEmbedImpl(int in_channels, int dim, int patch_stride);
  torch::Tensor forward(const torch::Tensor& x);

  PatchEmbedKernel kernel() const;
  void set_kernel(const PatchEmbedKernel& k);

  torch::nn::Conv2d proj{nullptr};
  torch::nn::LayerNorm norm{nullptr};
};
TORCH_MODULE(PatchEmbed);

class SwinStageImpl : public torch::nn::Module {
 public:
  SwinStageImpl(const EncoderConfig& cfg, int stage);
  torch::Tensor forward(torch::Tensor x);  // B x H x W x C_in -> B x H' x W' x C_stage

  PatchMerging downsample{nullptr};
  torch::nn::ModuleList blocks;
};
TORCH_MODULE(SwinStage);

class SwinEncoderImpl : public torch::nn::Module {
 public:
  explicit SwinEncoderImpl(EncoderConfig cfg);
  /// x: B x in_channels x H x W with H, W divisible by 32. Throws ShapeNotDivisible.
  FeaturePyramid forward(const torch::Tensor& x);

  const EncoderConfig& config() const { return cfg_; }
  PatchEmbed patch_embed{nullptr};
  torch::nn::ModuleList layers;

 private:
  EncoderConfig cfg_;
};
TORCH_MODULE(SwinEncoder);

/// Independent RGB and auxiliary streams with no parameter sharing.
class DualEncoderImpl : public torch::nn::Module {
 public:
  DualEncoderImpl(const EncoderConfig& rgb_cfg, const EncoderConfig& aux_cfg);
  std::pair<FeaturePyramid, FeaturePyramid> forward(const ModalPair& pair);

  SwinEncoder rgb{nullptr};
  SwinEncoder aux{nullptr};
};
TORCH_MODULE(DualEncoder);

/// Throws ConfigMismatch when the two encoders would emit different pyramids.
void check_pyramid_compatible(const EncoderConfig& a, const EncoderConfig& b);

std::pair<FeaturePyramid, FeaturePyramid> dual_encode(SwinEncoder& enc_rgb, SwinEncoder& enc_aux,
                                                      const ModalPair& pair);

/// Outcome of importing external weights into an encoder.
struct LoadReport {
  std::vector<std::string> loaded;
  std::vector<std::string> missing;     // encoder tensors absent from the checkpoint
  std::vector<std::string> unexpected;  // checkpoint tensors with no destination
  bool warm_initialized_patch_embed = false;
};

/// Name mapping text file. Lines:
///   # comment
///   prefix <checkpoint-prefix> <encoder-prefix>
///   <checkpoint-name> <encoder-name>
/// Names without a rule map to themselves.
class NameMapping {
 public:
  static NameMapping identity() { return {}; }
  static NameMapping load(const std::filesystem::path& path);
  std::string map(const std::string& checkpoint_name) const;

 private:
  std::vector<std::pair<std::string, std::string>> prefixes_;
  std::vector<std::pair<std::string, std::string>> exact_;
};

/// Overwrites encoder weights whose mapped names match. A 3-channel
/// patch-embed kernel loaded into a 4-channel encoder goes through
/// warm_init_aux_patch_embed. Throws ShapeConflict on any other shape clash.
LoadReport load_pretrained(SwinEncoder& encoder, const std::filesystem::path& checkpoint_dir,
                           const NameMapping& mapping = NameMapping::identity());
LoadReport load_pretrained(SwinEncoder& encoder,
                           const std::vector<std::pair<std::string, torch::Tensor>>& tensors,
                           const NameMapping& mapping = NameMapping::identity());

}  // namespace dualswin
