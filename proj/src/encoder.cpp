#include "dualswin/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "dualswin/checkpoint.hpp"
#include "dualswin/error.hpp"

namespace F = torch::nn::functional;
using torch::indexing::Slice;

namespace dualswin {

// Constants for the block internals (Swin-V2 defaults):
//   logit scale init log(10), clamped at log(100); seam mask value -100;
//   LayerNorm eps 1e-5; Linear weights ~ N(0, 0.02) truncated at 2 sigma,
//   Linear biases 0; q/v biases 0, no k bias.
namespace {
constexpr double kLogitScaleInit = 2.302585092994046;  // log(10)
constexpr double kLogitScaleMax = 4.605170185988092;   // log(100)
constexpr double kSeamMask = -100.0;

void init_linear(torch::nn::Linear& lin) {
  torch::NoGradGuard no_grad;
  lin->weight.normal_(0.0, 0.02).clamp_(-0.04, 0.04);
  if (lin->bias.defined()) lin->bias.zero_();
}
}  // namespace

EncoderConfig EncoderConfig::full(int in_channels) {
  EncoderConfig c;
  c.in_channels = in_channels;
  c.base_dim = 96;
  c.depths = {2, 2, 18, 2};
  c.heads = {3, 6, 12, 24};
  c.window = 8;
  return c;
}

EncoderConfig EncoderConfig::desk(int in_channels) {
  EncoderConfig c;
  c.in_channels = in_channels;
  return c;
}

void EncoderConfig::validate() const {
  if (in_channels != 3 && in_channels != 4) fail(ErrorKind::ConfigError, "encoder in_channels must be 3 or 4");
  if (base_dim <= 0 || window <= 0 || patch_stride <= 0 || mlp_ratio <= 0.0 || cpb_hidden <= 0)
    fail(ErrorKind::ConfigError, "encoder sizes must be positive");
  for (int s = 0; s < 4; ++s) {
    if (depths[s] < 0) fail(ErrorKind::ConfigError, "stage depth must be non-negative");
    if (heads[s] <= 0 || stage_dim(s) % heads[s] != 0)
      fail(ErrorKind::ConfigError, "stage width must be divisible by its head count");
  }
}

PatchEmbedKernel warm_init_aux_patch_embed(const PatchEmbedKernel& rgb) {
  if (rgb.weight.dim() != 4 || rgb.weight.size(1) != 3)
    fail(ErrorKind::ShapeMismatch, "warm init expects a 3-channel patch-embed kernel");
  PatchEmbedKernel out;
  auto w = rgb.weight.detach();
  auto mean = (w.select(1, 0) + w.select(1, 1) + w.select(1, 2)) / 3.0;
  out.weight = torch::cat({w, mean.unsqueeze(1)}, 1).contiguous();
  out.bias = rgb.bias.defined() ? rgb.bias.detach().clone() : torch::Tensor();
  return out;
}

double log_cpb_coordinate(int delta, int max_offset) {
  if (max_offset <= 0 || delta == 0) return 0.0;
  const double mag = std::log2(1.0 + std::abs(delta)) / std::log2(1.0 + max_offset);
  return delta < 0 ? -mag : mag;
}

torch::Tensor log_cpb_table(int window) {
  const int span = 2 * window - 1;
  auto table = torch::empty({span * span, 2}, torch::kFloat64);
  auto acc = table.accessor<double, 2>();
  int row = 0;
  for (int dy = -(window - 1); dy <= window - 1; ++dy)
    for (int dx = -(window - 1); dx <= window - 1; ++dx, ++row) {
      acc[row][0] = log_cpb_coordinate(dy, window - 1);
      acc[row][1] = log_cpb_coordinate(dx, window - 1);
    }
  return table;
}

torch::Tensor relative_position_index(int window) {
  const int n = window * window;
  const int span = 2 * window - 1;
  auto index = torch::empty({n, n}, torch::kLong);
  auto acc = index.accessor<std::int64_t, 2>();
  for (int q = 0; q < n; ++q)
    for (int k = 0; k < n; ++k) {
      const int dy = q / window - k / window + window - 1;
      const int dx = q % window - k % window + window - 1;
      acc[q][k] = dy * span + dx;
    }
  return index;
}

torch::nn::Sequential make_cpb_mlp(int heads, int hidden) {
  return torch::nn::Sequential(torch::nn::Linear(torch::nn::LinearOptions(2, hidden).bias(true)), torch::nn::ReLU(),
                               torch::nn::Linear(torch::nn::LinearOptions(hidden, heads).bias(false)));
}

torch::Tensor log_cpb_bias(torch::nn::Sequential& cpb_mlp, int window) {
  const auto& first = cpb_mlp->ptr(0)->as<torch::nn::Linear>()->weight;
  auto table = log_cpb_table(window).to(first.options());
  auto bias_table = cpb_mlp->forward(table);  // span^2 x heads
  auto index = relative_position_index(window).to(first.device()).reshape({-1});
  const auto n = static_cast<std::int64_t>(window) * window;
  return bias_table.index_select(0, index).reshape({n, n, -1}).permute({2, 0, 1}).contiguous();
}

WindowAttentionImpl::WindowAttentionImpl(int dim, int heads, int cpb_hidden) : heads_(heads) {
  qkv = register_module("qkv", torch::nn::Linear(torch::nn::LinearOptions(dim, 3 * dim).bias(false)));
  q_bias = register_parameter("q_bias", torch::zeros({dim}));
  v_bias = register_parameter("v_bias", torch::zeros({dim}));
  logit_scale = register_parameter("logit_scale", torch::full({heads, 1, 1}, kLogitScaleInit));
  cpb_mlp = register_module("cpb_mlp", make_cpb_mlp(heads, cpb_hidden));
  proj = register_module("proj", torch::nn::Linear(dim, dim));
  init_linear(qkv);
  init_linear(proj);
}

torch::Tensor WindowAttentionImpl::forward(const torch::Tensor& x, int window, const torch::Tensor& mask) {
  const auto bw = x.size(0), n = x.size(1), c = x.size(2);
  const auto head_dim = c / heads_;
  auto bias = torch::cat({q_bias, torch::zeros_like(v_bias), v_bias});
  auto qkv_out = F::linear(x, qkv->weight, bias).reshape({bw, n, 3, heads_, head_dim}).permute({2, 0, 3, 1, 4});
  auto q = qkv_out[0], k = qkv_out[1], v = qkv_out[2];

  auto attn = torch::matmul(F::normalize(q, F::NormalizeFuncOptions().dim(-1)),
                            F::normalize(k, F::NormalizeFuncOptions().dim(-1)).transpose(-2, -1));
  attn = attn * torch::clamp_max(logit_scale, kLogitScaleMax).exp();
  attn = attn + log_cpb_bias(cpb_mlp, window).unsqueeze(0);
  if (mask.defined()) {
    const auto nw = mask.size(0);
    attn = attn.view({bw / nw, nw, heads_, n, n}) + mask.unsqueeze(1).unsqueeze(0);
    attn = attn.view({bw, heads_, n, n});
  }
  attn = torch::softmax(attn, -1);
  auto out = torch::matmul(attn, v).transpose(1, 2).reshape({bw, n, c});
  return proj->forward(out);
}

std::pair<int, int> effective_window(int window, int shift, std::int64_t h, std::int64_t w, bool auto_shrink) {
  const auto side = std::min(h, w);
  if (auto_shrink && window >= side) return {static_cast<int>(side), 0};
  return {window, shift};
}

torch::Tensor roll_grid(const torch::Tensor& grid, int shift) {
  if (shift == 0) return grid;
  return torch::roll(grid, {shift, shift}, {1, 2});
}

torch::Tensor shifted_window_mask(std::int64_t h, std::int64_t w, int window, int shift,
                                  torch::TensorOptions options) {
  auto region = torch::zeros({h, w}, torch::kLong);
  const std::int64_t hb[4] = {0, h - window, h - shift, h};
  const std::int64_t wb[4] = {0, w - window, w - shift, w};
  std::int64_t label = 0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j, ++label)
      region.index_put_({Slice(hb[i], hb[i + 1]), Slice(wb[j], wb[j + 1])}, label);
  auto windows = region.view({h / window, window, w / window, window}).permute({0, 2, 1, 3}).reshape(
      {-1, static_cast<std::int64_t>(window) * window});
  auto diff = windows.unsqueeze(1) - windows.unsqueeze(2);
  return torch::where(diff != 0, torch::full({}, kSeamMask, options), torch::zeros({}, options))
      .to(options);
}

torch::Tensor windowed_self_attention(const torch::Tensor& tokens, std::int64_t h, std::int64_t w, int window,
                                      int shift, WindowAttention& attention) {
  const auto b = tokens.size(0), c = tokens.size(2);
  if (tokens.size(1) != h * w) fail(ErrorKind::ShapeMismatch, "token count does not match the grid");
  if (window <= 0 || h % window != 0 || w % window != 0)
    fail(ErrorKind::WindowGridMismatch, "window " + std::to_string(window) + " does not tile a " + std::to_string(h) +
                                            "x" + std::to_string(w) + " grid");
  if (shift < 0 || shift >= window) fail(ErrorKind::WindowGridMismatch, "shift must lie in [0, window)");

  auto grid = roll_grid(tokens.view({b, h, w, c}), -shift);
  auto windows = grid.view({b, h / window, window, w / window, window, c})
                     .permute({0, 1, 3, 2, 4, 5})
                     .reshape({-1, static_cast<std::int64_t>(window) * window, c});
  torch::Tensor mask;
  if (shift > 0) mask = shifted_window_mask(h, w, window, shift, tokens.options());
  auto attended = attention->forward(windows, window, mask);
  auto merged = attended.view({b, h / window, w / window, window, window, c})
                    .permute({0, 1, 3, 2, 4, 5})
                    .reshape({b, h, w, c});
  return roll_grid(merged, shift).reshape({b, h * w, c});
}

SwinBlockImpl::SwinBlockImpl(int dim, int heads, int window, bool shifted, double mlp_ratio, int cpb_hidden,
                             bool auto_shrink)
    : window_(window), shifted_(shifted), auto_shrink_(auto_shrink) {
  norm1 = register_module("norm1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
  attn = register_module("attn", WindowAttention(dim, heads, cpb_hidden));
  norm2 = register_module("norm2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
  const int hidden = static_cast<int>(dim * mlp_ratio);
  torch::nn::Linear fc1(dim, hidden), fc2(hidden, dim);
  init_linear(fc1);
  init_linear(fc2);
  mlp = torch::nn::Sequential();
  mlp->push_back("fc1", fc1);
  mlp->push_back("act", torch::nn::GELU());
  mlp->push_back("fc2", fc2);
  register_module("mlp", mlp);
}

torch::Tensor SwinBlockImpl::forward(const torch::Tensor& x) {
  const auto b = x.size(0), h = x.size(1), w = x.size(2), c = x.size(3);
  const auto [win, shift] = effective_window(window_, shifted_ ? window_ / 2 : 0, h, w, auto_shrink_);
  auto tokens = x.reshape({b, h * w, c});
  tokens = tokens + norm1->forward(windowed_self_attention(tokens, h, w, win, shift, attn));
  tokens = tokens + norm2->forward(mlp->forward(tokens));
  return tokens.view({b, h, w, c});
}

PatchMergingImpl::PatchMergingImpl(int dim) {
  reduction = register_module("reduction", torch::nn::Linear(torch::nn::LinearOptions(4 * dim, 2 * dim).bias(false)));
  norm = register_module("norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({2 * dim})));
  init_linear(reduction);
}

torch::Tensor PatchMergingImpl::forward(const torch::Tensor& x) {
  const auto b = x.size(0), h = x.size(1), w = x.size(2), c = x.size(3);
  auto merged = x.reshape({b, h / 2, 2, w / 2, 2, c}).permute({0, 1, 3, 4, 2, 5}).reshape({b, h / 2, w / 2, 4 * c});
  return norm->forward(reduction->forward(merged));
}

PatchEmbedImpl::PatchEmbedImpl(int in_channels, int dim, int patch_stride) {
  proj = register_module(
      "proj", torch::nn::Conv2d(torch::nn::Conv2dOptions(in_channels, dim, patch_stride).stride(patch_stride)));
  norm = register_module("norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
}

torch::Tensor PatchEmbedImpl::forward(const torch::Tensor& x) {
  return norm->forward(proj->forward(x).permute({0, 2, 3, 1}));
}

PatchEmbedKernel PatchEmbedImpl::kernel() const { return {proj->weight.detach().clone(), proj->bias.detach().clone()}; }

void PatchEmbedImpl::set_kernel(const PatchEmbedKernel& k) {
  if (k.weight.sizes() != proj->weight.sizes()) fail(ErrorKind::ShapeConflict, "patch-embed kernel shape differs");
  torch::NoGradGuard no_grad;
  proj->weight.copy_(k.weight);
  if (k.bias.defined()) proj->bias.copy_(k.bias);
}

SwinStageImpl::SwinStageImpl(const EncoderConfig& cfg, int stage) {
  const int dim = cfg.stage_dim(stage);
  if (stage > 0) downsample = register_module("downsample", PatchMerging(cfg.stage_dim(stage - 1)));
  for (int i = 0; i < cfg.depths[stage]; ++i)
    blocks->push_back(SwinBlock(dim, cfg.heads[stage], cfg.window, i % 2 == 1, cfg.mlp_ratio, cfg.cpb_hidden,
                                cfg.auto_shrink));
  register_module("blocks", blocks);
}

torch::Tensor SwinStageImpl::forward(torch::Tensor x) {
  if (downsample) x = downsample->forward(x);
  for (auto& block : *blocks) x = block->as<SwinBlock>()->forward(x);
  return x;
}

SwinEncoderImpl::SwinEncoderImpl(EncoderConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  patch_embed = register_module("patch_embed", PatchEmbed(cfg_.in_channels, cfg_.base_dim, cfg_.patch_stride));
  for (int s = 0; s < 4; ++s) layers->push_back(SwinStage(cfg_, s));
  register_module("layers", layers);
}

FeaturePyramid SwinEncoderImpl::forward(const torch::Tensor& x) {
  if (x.dim() != 4 || x.size(1) != cfg_.in_channels)
    fail(ErrorKind::ShapeMismatch, "encoder expects B x " + std::to_string(cfg_.in_channels) + " x H x W");
  const auto total_stride = cfg_.stride(3);
  if (x.size(2) % total_stride != 0 || x.size(3) % total_stride != 0)
    fail(ErrorKind::ShapeNotDivisible, "input " + std::to_string(x.size(2)) + "x" + std::to_string(x.size(3)) +
                                           " is not divisible by " + std::to_string(total_stride));
  FeaturePyramid pyramid;
  if (x.size(0) == 0) {
    for (int s = 0; s < 4; ++s)
      pyramid.levels.push_back(
          torch::zeros({0, cfg_.stage_dim(s), x.size(2) / cfg_.stride(s), x.size(3) / cfg_.stride(s)}, x.options()));
    return pyramid;
  }
  auto h = patch_embed->forward(x);
  for (auto& layer : *layers) {
    h = layer->as<SwinStage>()->forward(h);
    pyramid.levels.push_back(h.permute({0, 3, 1, 2}).contiguous());
  }
  return pyramid;
}

void check_pyramid_compatible(const EncoderConfig& a, const EncoderConfig& b) {
  if (a.base_dim != b.base_dim || a.patch_stride != b.patch_stride)
    fail(ErrorKind::ConfigMismatch, "RGB and auxiliary encoders emit different pyramid shapes");
}

DualEncoderImpl::DualEncoderImpl(const EncoderConfig& rgb_cfg, const EncoderConfig& aux_cfg) {
  check_pyramid_compatible(rgb_cfg, aux_cfg);
  if (rgb_cfg.in_channels != 3 || aux_cfg.in_channels != 4)
    fail(ErrorKind::ConfigMismatch, "RGB stream takes 3 channels and auxiliary stream 4");
  rgb = register_module("rgb", SwinEncoder(rgb_cfg));
  aux = register_module("aux", SwinEncoder(aux_cfg));
}

std::pair<FeaturePyramid, FeaturePyramid> DualEncoderImpl::forward(const ModalPair& pair) {
  return dual_encode(rgb, aux, pair);
}

std::pair<FeaturePyramid, FeaturePyramid> dual_encode(SwinEncoder& enc_rgb, SwinEncoder& enc_aux,
                                                      const ModalPair& pair) {
  check_pyramid_compatible(enc_rgb->config(), enc_aux->config());
  auto batch = [](const torch::Tensor& t) { return t.dim() == 3 ? t.unsqueeze(0) : t; };
  return {enc_rgb->forward(batch(pair.rgb)), enc_aux->forward(batch(pair.aux))};
}

NameMapping NameMapping::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::IoError, "cannot read name mapping " + path.string());
  NameMapping m;
  std::string line;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::istringstream ls(line);
    std::string a, b, c;
    if (!(ls >> a)) continue;
    if (a == "prefix") {
      if (!(ls >> b >> c)) fail(ErrorKind::ConfigError, "prefix rule needs two names: " + line);
      m.prefixes_.emplace_back(b, c);
    } else {
      if (!(ls >> b)) fail(ErrorKind::ConfigError, "mapping rule needs two names: " + line);
      m.exact_.emplace_back(a, b);
    }
  }
  return m;
}

std::string NameMapping::map(const std::string& name) const {
  for (const auto& [from, to] : exact_)
    if (from == name) return to;
  for (const auto& [from, to] : prefixes_)
    if (name.rfind(from, 0) == 0) return to + name.substr(from.size());
  return name;
}

LoadReport load_pretrained(SwinEncoder& encoder, const TensorMap& tensors, const NameMapping& mapping) {
  LoadReport report;
  std::map<std::string, torch::Tensor> targets;
  for (auto& [name, t] : named_state(*encoder)) targets.emplace(name, t);
  std::map<std::string, bool> filled;
  torch::NoGradGuard no_grad;
  for (const auto& [ckpt_name, src] : tensors) {
    const auto name = mapping.map(ckpt_name);
    auto it = targets.find(name);
    if (it == targets.end()) {
      report.unexpected.push_back(ckpt_name);
      continue;
    }
    auto& dst = it->second;
    if (src.sizes() == dst.sizes()) {
      dst.copy_(src.to(dst.dtype()));
    } else if (name == "patch_embed.proj.weight" && src.dim() == 4 && src.size(1) == 3 && dst.size(1) == 4 &&
               src.size(0) == dst.size(0) && src.size(2) == dst.size(2) && src.size(3) == dst.size(3)) {
      dst.copy_(warm_init_aux_patch_embed({src, torch::Tensor()}).weight.to(dst.dtype()));
      report.warm_initialized_patch_embed = true;
    } else {
      std::ostringstream msg;
      msg << name << ": checkpoint " << src.sizes() << " vs encoder " << dst.sizes();
      fail(ErrorKind::ShapeConflict, msg.str());
    }
    filled[name] = true;
    report.loaded.push_back(name);
  }
  for (const auto& [name, t] : targets)
    if (!filled.count(name)) report.missing.push_back(name);
  return report;
}

LoadReport load_pretrained(SwinEncoder& encoder, const std::filesystem::path& checkpoint_dir,
                           const NameMapping& mapping) {
  return load_pretrained(encoder, load_tensor_map(checkpoint_dir), mapping);
}

}  // namespace dualswin
