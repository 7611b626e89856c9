#include "dualswin/network.hpp"

#include <sstream>

#include "dualswin/error.hpp"

namespace dualswin {

ModelConfig ModelConfig::full() {
  ModelConfig c;
  c.encoder = EncoderConfig::full(kRgbChannels);
  c.decoder_width = 256;
  c.out_size = 128;
  return c;
}

ModelConfig ModelConfig::desk() { return ModelConfig{}; }

EncoderConfig ModelConfig::rgb_encoder() const {
  auto e = encoder;
  e.in_channels = kRgbChannels;
  return e;
}

EncoderConfig ModelConfig::aux_encoder() const {
  auto e = encoder;
  e.in_channels = kAuxChannels;
  return e;
}

void ModelConfig::validate() const {
  rgb_encoder().validate();
  if (decoder_width < 1) fail(ErrorKind::ConfigError, "decoder width must be positive");
  if (out_size < 32 || out_size % 32 != 0) fail(ErrorKind::ConfigError, "out_size must be a positive multiple of 32");
  if (head_dropout < 0.0 || head_dropout >= 1.0) fail(ErrorKind::ConfigError, "head dropout must lie in [0, 1)");
  if (decoder == DecoderKind::Hybrid && (se_reduction < 1 || decoder_width % se_reduction != 0))
    fail(ErrorKind::BadReduction, "SE reduction must divide the decoder width");
}

DualSwinNetImpl::DualSwinNetImpl(ModelConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  encoder_rgb = register_module("encoder_rgb", SwinEncoder(cfg_.rgb_encoder()));
  encoder_aux = register_module("encoder_aux", SwinEncoder(cfg_.aux_encoder()));
  std::array<int, 4> dims{};
  for (int l = 0; l < 4; ++l) dims[l] = cfg_.encoder.stage_dim(l);
  fusion = register_module("fusion", CrossModalFusion(cfg_.fusion_mode, dims));
  for (int l = 0; l < 4; ++l) projections->push_back(DecoderProjection(dims[l], cfg_.decoder_width));
  projections = register_module("projections", projections);
  decoder = register_module("decoder",
                            Decoder(cfg_.decoder, cfg_.decoder_width, cfg_.deep_supervision, cfg_.se_reduction));
  head = register_module("head", ClassificationHead(cfg_.decoder_width, cfg_.out_size, cfg_.head_dropout));
}

std::pair<FeaturePyramid, FeaturePyramid> DualSwinNetImpl::encode(const ModalPair& pair) {
  if (pair.rgb.size(-1) != cfg_.out_size || pair.rgb.size(-2) != cfg_.out_size)
    fail(ErrorKind::ShapeMismatch, "input tiles must be " + std::to_string(cfg_.out_size) + " x " +
                                       std::to_string(cfg_.out_size));
  ModalPair masked = pair;
  bool all_on = true;
  for (bool b : cfg_.aux_channel_mask) all_on = all_on && b;
  if (!all_on) {
    auto keep = torch::empty({kAuxChannels}, pair.aux.options());
    for (int c = 0; c < kAuxChannels; ++c) keep[c] = cfg_.aux_channel_mask[c] ? 1.0 : 0.0;
    masked.aux = pair.aux * keep.view({kAuxChannels, 1, 1});
  }
  return dual_encode(encoder_rgb, encoder_aux, masked);
}

NetworkOutput DualSwinNetImpl::forward_from_pyramids(const FeaturePyramid& rgb, const FeaturePyramid& aux) {
  auto fused = fusion->forward(rgb, aux);
  std::vector<torch::Tensor> projected;
  for (int l = 0; l < 4; ++l) projected.push_back(projections[l]->as<DecoderProjectionImpl>()->forward(fused.levels[l]));
  auto dec = decoder->forward(projected);
  NetworkOutput out;
  out.logits = head->forward(dec.features);
  for (auto& a : dec.aux_logits) out.aux_logits.push_back(resize_bilinear(a, cfg_.out_size, cfg_.out_size));
  return out;
}

NetworkOutput DualSwinNetImpl::forward_outputs(const ModalPair& pair) {
  auto [rgb, aux] = encode(pair);
  return forward_from_pyramids(rgb, aux);
}

torch::Tensor DualSwinNetImpl::forward(const ModalPair& pair) { return forward_outputs(pair).logits; }

torch::Tensor predict_prob(DualSwinNet& model, const ModalPair& pair) {
  const bool was_training = model->is_training();
  model->eval();
  torch::NoGradGuard no_grad;
  auto probs = torch::sigmoid(model->forward(pair));
  if (was_training) model->train();
  return probs;
}

std::int64_t count_parameters(const torch::nn::Module& module) {
  std::int64_t n = 0;
  for (const auto& p : module.parameters()) n += p.numel();
  return n;
}

ParameterAudit parameter_audit(const DualSwinNet& model) {
  ParameterAudit a;
  a.groups["encoder_rgb"] = count_parameters(*model->encoder_rgb);
  a.groups["encoder_aux"] = count_parameters(*model->encoder_aux);
  a.groups["fusion"] = count_parameters(*model->fusion);
  a.groups["projections"] = count_parameters(*model->projections);
  a.groups["unetpp"] = count_parameters(*model->decoder);
  a.groups["head"] = count_parameters(*model->head);
  a.total = count_parameters(*model);
  a.views["fusion_plus_projections"] = a.groups["fusion"] + a.groups["projections"];
  a.views["decoder_total"] = a.groups["projections"] + a.groups["unetpp"] + a.groups["head"];
  return a;
}

std::string ParameterAudit::to_text() const {
  std::ostringstream out;
  std::int64_t sum = 0;
  for (const auto& [name, n] : groups) {
    out << name << ' ' << n << '\n';
    sum += n;
  }
  for (const auto& [name, n] : views) out << name << ' ' << n << '\n';
  out << "total " << total << '\n';
  out << "groups_sum " << sum << '\n';
  return out.str();
}

}  // namespace dualswin
