#include "dualswin/decoder.hpp"

#include "dualswin/error.hpp"

namespace F = torch::nn::functional;

namespace dualswin {

DecoderKind parse_decoder_kind(const std::string& name) {
  if (name == "unetpp") return DecoderKind::UnetPP;
  if (name == "hybrid") return DecoderKind::Hybrid;
  fail(ErrorKind::ConfigError, "unknown decoder '" + name + "' (expected unetpp|hybrid)");
}

std::string to_string(DecoderKind kind) { return kind == DecoderKind::Hybrid ? "hybrid" : "unetpp"; }

torch::Tensor resize_bilinear(const torch::Tensor& x, std::int64_t h, std::int64_t w) {
  if (x.size(-2) == h && x.size(-1) == w) return x;
  return F::interpolate(x, F::InterpolateFuncOptions()
                               .size(std::vector<std::int64_t>{h, w})
                               .mode(torch::kBilinear)
                               .align_corners(false));
}

torch::Tensor upsample2x(const torch::Tensor& x) { return resize_bilinear(x, 2 * x.size(-2), 2 * x.size(-1)); }

std::vector<UnetPPNode> unetpp_graph(int levels) {
  std::vector<UnetPPNode> graph;
  for (int j = 1; j < levels; ++j)
    for (int i = 0; i + j < levels; ++i) {
      UnetPPNode node{i, j, {}};
      for (int k = 0; k < j; ++k) node.inputs.emplace_back(i, k);
      node.inputs.emplace_back(i + 1, j - 1);
      graph.push_back(std::move(node));
    }
  return graph;
}

namespace {
torch::nn::Conv2d conv3x3(int in, int out, bool bias) {
  return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).padding(1).bias(bias));
}
torch::nn::Conv2d conv1x1(int in, int out, bool bias) {
  return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 1).bias(bias));
}

void check_pyramid(const std::vector<torch::Tensor>& pyramid, int levels, int width) {
  if (static_cast<int>(pyramid.size()) != levels)
    fail(ErrorKind::ShapeMismatch, "decoder expects " + std::to_string(levels) + " pyramid levels");
  for (std::size_t l = 0; l < pyramid.size(); ++l) {
    if (pyramid[l].dim() != 4 || pyramid[l].size(1) != width)
      fail(ErrorKind::ShapeMismatch, "pyramid level " + std::to_string(l) + " must be B x " +
                                         std::to_string(width) + " x H x W");
    if (l > 0 && (pyramid[l - 1].size(-1) != 2 * pyramid[l].size(-1) ||
                  pyramid[l - 1].size(-2) != 2 * pyramid[l].size(-2)))
      fail(ErrorKind::ShapeMismatch, "pyramid levels must halve in resolution");
  }
}
}  // namespace

ConvBlockImpl::ConvBlockImpl(int in_channels, int out_channels) {
  conv1 = register_module("conv1", conv3x3(in_channels, out_channels, false));
  bn1 = register_module("bn1", torch::nn::BatchNorm2d(out_channels));
  conv2 = register_module("conv2", conv3x3(out_channels, out_channels, false));
  bn2 = register_module("bn2", torch::nn::BatchNorm2d(out_channels));
}

torch::Tensor ConvBlockImpl::forward(const torch::Tensor& x) {
  auto y = torch::relu(bn1->forward(conv1->forward(x)));
  return torch::relu(bn2->forward(conv2->forward(y)));
}

UnetPPImpl::UnetPPImpl(int width, int levels, bool deep_supervision)
    : width_(width), levels_(levels), deep_supervision_(deep_supervision), graph_(unetpp_graph(levels)) {
  for (const auto& node : graph_) {
    const auto name = "x" + std::to_string(node.i) + "_" + std::to_string(node.j);
    blocks.emplace(std::make_pair(node.i, node.j),
                   register_module(name, ConvBlock(node.in_channels(width), width)));
  }
}

std::map<std::pair<int, int>, torch::Tensor> UnetPPImpl::forward_nodes(const std::vector<torch::Tensor>& pyramid) {
  check_pyramid(pyramid, levels_, width_);
  std::map<std::pair<int, int>, torch::Tensor> x;
  for (int i = 0; i < levels_; ++i) x[{i, 0}] = pyramid[i];
  for (const auto& node : graph_) {
    std::vector<torch::Tensor> parts;
    for (std::size_t k = 0; k + 1 < node.inputs.size(); ++k) parts.push_back(x.at(node.inputs[k]));
    auto up = upsample2x(x.at(node.inputs.back()));
    if (up.sizes() != parts.front().sizes())
      fail(ErrorKind::ShapeMismatch, "upsampled node does not match its siblings");
    parts.push_back(up);
    x[{node.i, node.j}] = blocks.at({node.i, node.j})->forward(torch::cat(parts, 1));
  }
  return x;
}

torch::Tensor UnetPPImpl::forward(const std::vector<torch::Tensor>& pyramid) {
  return forward_nodes(pyramid).at({0, levels_ - 1});
}

MlpHeadImpl::MlpHeadImpl(int width, int levels) {
  for (int l = 0; l < levels; ++l)
    level_proj.push_back(register_module("proj" + std::to_string(l), conv1x1(width, width, true)));
  fuse = register_module("fuse", conv1x1(levels * width, width, true));
}

torch::Tensor MlpHeadImpl::forward(const std::vector<torch::Tensor>& pyramid) {
  check_pyramid(pyramid, static_cast<int>(level_proj.size()), level_proj.front()->weight.size(1));
  const auto h = pyramid[0].size(-2), w = pyramid[0].size(-1);
  std::vector<torch::Tensor> parts;
  for (std::size_t l = 0; l < pyramid.size(); ++l)
    parts.push_back(resize_bilinear(level_proj[l]->forward(pyramid[l]), h, w));
  return fuse->forward(torch::cat(parts, 1));
}

SeGateImpl::SeGateImpl(int channels, int reduction) {
  if (reduction < 1 || channels % reduction != 0)
    fail(ErrorKind::BadReduction, "SE reduction " + std::to_string(reduction) + " does not divide " +
                                      std::to_string(channels) + " channels");
  fc1 = register_module("fc1", torch::nn::Linear(channels, channels / reduction));
  fc2 = register_module("fc2", torch::nn::Linear(channels / reduction, channels));
}

torch::Tensor SeGateImpl::forward(const torch::Tensor& x) {
  auto pooled = x.mean({-2, -1});
  return torch::sigmoid(fc2->forward(torch::relu(fc1->forward(pooled))));
}

torch::Tensor se_gate(const torch::Tensor& x, SeGate& gate) { return gate->forward(x); }

HybridFuseImpl::HybridFuseImpl(int width, int reduction) {
  conv = register_module("conv", conv1x1(2 * width, width, false));
  bn = register_module("bn", torch::nn::BatchNorm2d(width));
  gate = register_module("gate", SeGate(width, reduction));
}

torch::Tensor HybridFuseImpl::mix(const torch::Tensor& u, const torch::Tensor& s) {
  if (u.sizes() != s.sizes()) fail(ErrorKind::ShapeMismatch, "hybrid branches must be aligned");
  return torch::relu(bn->forward(conv->forward(torch::cat({u, s}, 1))));
}

torch::Tensor HybridFuseImpl::forward(const torch::Tensor& u, const torch::Tensor& s) {
  auto z = mix(u, s);
  return z * gate->forward(z).unsqueeze(-1).unsqueeze(-1);
}

torch::Tensor HybridFuseImpl::forward_with_gate(const torch::Tensor& u, const torch::Tensor& s,
                                                const torch::Tensor& gate_override) {
  auto z = mix(u, s);
  return z * gate_override.unsqueeze(-1).unsqueeze(-1);
}

torch::Tensor hybrid_fuse(const torch::Tensor& u, const torch::Tensor& s, HybridFuse& fuse) {
  return fuse->forward(u, s);
}

ClassificationHeadImpl::ClassificationHeadImpl(int width, int out_size, double dropout_p) : out_size_(out_size) {
  conv = register_module("conv", conv3x3(width, width, false));
  bn = register_module("bn", torch::nn::BatchNorm2d(width));
  dropout = register_module("dropout", torch::nn::Dropout(dropout_p));
  classifier = register_module("classifier", conv1x1(width, 1, true));
}

torch::Tensor ClassificationHeadImpl::forward(const torch::Tensor& x) {
  auto y = dropout->forward(torch::relu(bn->forward(conv->forward(x))));
  return resize_bilinear(classifier->forward(y), out_size_, out_size_);
}

DecoderImpl::DecoderImpl(DecoderKind kind, int width, bool deep_supervision, int se_reduction) : kind_(kind) {
  unetpp = register_module("unetpp", UnetPP(width, 4, deep_supervision));
  if (kind == DecoderKind::Hybrid) {
    mlp = register_module("mlp", MlpHead(width));
    hybrid = register_module("hybrid", HybridFuse(width, se_reduction));
  }
  if (deep_supervision)
    for (int j = 1; j <= 2; ++j)
      aux_heads.push_back(register_module("aux_head" + std::to_string(j), conv1x1(width, 1, true)));
}

DecoderOutput DecoderImpl::forward(const std::vector<torch::Tensor>& pyramid) {
  DecoderOutput out;
  auto nodes = unetpp->forward_nodes(pyramid);
  out.features = nodes.at({0, 3});
  if (kind_ == DecoderKind::Hybrid) {
    auto s = mlp->forward(pyramid);
    if (s.sizes() != out.features.sizes()) fail(ErrorKind::ShapeMismatch, "MLP head misaligned with UNet++ output");
    out.features = hybrid->forward(out.features, s);
  }
  for (std::size_t k = 0; k < aux_heads.size(); ++k)
    out.aux_logits.push_back(aux_heads[k]->forward(nodes.at({0, static_cast<int>(k) + 1})));
  return out;
}

}  // namespace dualswin
