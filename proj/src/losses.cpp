#include "dualswin/losses.hpp"

#include <array>
#include <utility>

#include "dualswin/error.hpp"

namespace F = torch::nn::functional;

namespace dualswin {

namespace {
constexpr std::array<std::pair<LossKind, const char*>, 10> kNames = {{
    {LossKind::Bce, "bce"},
    {LossKind::BceWeighted, "bce_weighted"},
    {LossKind::Dice, "dice"},
    {LossKind::BceDice, "bce_dice"},
    {LossKind::Composite, "composite"},
    {LossKind::Focal, "focal"},
    {LossKind::FocalDice, "focal_dice"},
    {LossKind::SoftIou, "soft_iou"},
    {LossKind::BceSoftIou, "bce_soft_iou"},
    {LossKind::Tversky, "tversky"},
}};

void require_same_shape(const torch::Tensor& a, const torch::Tensor& b) {
  if (a.sizes() != b.sizes()) fail(ErrorKind::ShapeMismatch, "loss inputs differ in shape");
}
}  // namespace

LossKind parse_loss_kind(const std::string& name) {
  for (const auto& [kind, n] : kNames)
    if (name == n) return kind;
  fail(ErrorKind::ConfigError, "unknown loss kind '" + name + "'");
}

std::string to_string(LossKind kind) {
  for (const auto& [k, n] : kNames)
    if (k == kind) return n;
  return "?";
}

void LossConfig::validate() const {
  if (!w_plus_auto && !(w_plus > 0.0)) fail(ErrorKind::ConfigError, "w_plus must be positive");
  if (!(dice_eps > 0.0)) fail(ErrorKind::ConfigError, "dice_eps must be positive");
  if (focal_gamma < 0.0) fail(ErrorKind::ConfigError, "focal_gamma must be nonnegative");
  if (tversky_alpha < 0.0 || tversky_alpha > 1.0) fail(ErrorKind::ConfigError, "tversky_alpha must lie in [0, 1]");
}

torch::Tensor bce_weighted(const torch::Tensor& logits, const torch::Tensor& y, double w_plus) {
  require_same_shape(logits, y);
  // -log sigmoid(z) = softplus(-z), -log(1 - sigmoid(z)) = softplus(z)
  auto pos = F::softplus(-logits);
  auto neg = F::softplus(logits);
  return (w_plus * y * pos + (1 - y) * neg).mean();
}

torch::Tensor bce(const torch::Tensor& logits, const torch::Tensor& y) { return bce_weighted(logits, y, 1.0); }

torch::Tensor soft_dice(const torch::Tensor& probs, const torch::Tensor& y, double eps) {
  require_same_shape(probs, y);
  return 1 - 2 * (probs * y).sum() / (probs.sum() + y.sum() + eps);
}

torch::Tensor composite_loss(const torch::Tensor& logits, const torch::Tensor& y, const LossConfig& cfg) {
  return 0.5 * bce_weighted(logits, y, cfg.w_plus) + 0.5 * soft_dice(torch::sigmoid(logits), y, cfg.dice_eps);
}

torch::Tensor soft_iou_loss(const torch::Tensor& probs, const torch::Tensor& y, double eps) {
  require_same_shape(probs, y);
  auto inter = (probs * y).sum();
  return 1 - (inter + eps) / (probs.sum() + y.sum() - inter + eps);
}

torch::Tensor focal_loss(const torch::Tensor& logits, const torch::Tensor& y, double gamma) {
  require_same_shape(logits, y);
  // log p_t = -softplus(-z) for y = 1, -softplus(z) for y = 0.
  auto signed_z = (2 * y - 1) * logits;
  auto log_pt = -F::softplus(-signed_z);
  auto pt = torch::exp(log_pt);
  auto modulator = gamma == 0.0 ? torch::ones_like(pt) : torch::pow(1 - pt, gamma);
  return (-modulator * log_pt).mean();
}

torch::Tensor tversky_loss(const torch::Tensor& probs, const torch::Tensor& y, double alpha, double eps) {
  require_same_shape(probs, y);
  auto tp = (probs * y).sum();
  auto fp = (probs * (1 - y)).sum();
  auto fn = ((1 - probs) * y).sum();
  return 1 - (tp + eps) / (tp + alpha * fp + (1 - alpha) * fn + eps);
}

torch::Tensor compute_loss(const torch::Tensor& logits, const torch::Tensor& y, const LossConfig& cfg) {
  switch (cfg.kind) {
    case LossKind::Bce:
      return bce(logits, y);
    case LossKind::BceWeighted:
      return bce_weighted(logits, y, cfg.w_plus);
    case LossKind::Dice:
      return soft_dice(torch::sigmoid(logits), y, cfg.dice_eps);
    case LossKind::BceDice:
      return 0.5 * bce(logits, y) + 0.5 * soft_dice(torch::sigmoid(logits), y, cfg.dice_eps);
    case LossKind::Composite:
      return composite_loss(logits, y, cfg);
    case LossKind::Focal:
      return focal_loss(logits, y, cfg.focal_gamma);
    case LossKind::FocalDice:
      return 0.5 * focal_loss(logits, y, cfg.focal_gamma) + 0.5 * soft_dice(torch::sigmoid(logits), y, cfg.dice_eps);
    case LossKind::SoftIou:
      return soft_iou_loss(torch::sigmoid(logits), y, cfg.dice_eps);
    case LossKind::BceSoftIou:
      return 0.5 * bce(logits, y) + 0.5 * soft_iou_loss(torch::sigmoid(logits), y, cfg.dice_eps);
    case LossKind::Tversky:
      return tversky_loss(torch::sigmoid(logits), y, cfg.tversky_alpha, cfg.dice_eps);
  }
  fail(ErrorKind::ConfigError, "unhandled loss kind");
}

}  // namespace dualswin
