#pragma once

#include <torch/torch.h>

#include <string>

namespace dualswin {

enum class LossKind { Bce, BceWeighted, Dice, BceDice, Composite, Focal, FocalDice, SoftIou, BceSoftIou, Tversky };

LossKind parse_loss_kind(const std::string& name);
std::string to_string(LossKind kind);

struct LossConfig {
  LossKind kind = LossKind::Composite;
  double w_plus = 1.0;
  bool w_plus_auto = true;  // replaced by N_neg / N_pos of the training masks
  double dice_eps = 1e-7;
  double focal_gamma = 2.0;
  double tversky_alpha = 0.3;

  void validate() const;
  bool operator==(const LossConfig&) const = default;
};

// Every reduction is over all elements of the batch at once. Inputs may have
// any shape as long as they agree.

/// mean(-[w+ y log p + (1 - y) log(1 - p)]), p = sigmoid(z), via softplus.
torch::Tensor bce_weighted(const torch::Tensor& logits, const torch::Tensor& y, double w_plus);
torch::Tensor bce(const torch::Tensor& logits, const torch::Tensor& y);

/// 1 - 2 sum(p y) / (sum p + sum y + eps).
torch::Tensor soft_dice(const torch::Tensor& probs, const torch::Tensor& y, double eps = 1e-7);

/// 1/2 bce_weighted + 1/2 soft_dice(sigmoid(z)).
torch::Tensor composite_loss(const torch::Tensor& logits, const torch::Tensor& y, const LossConfig& cfg);

/// 1 - (sum(p y) + eps) / (sum p + sum y - sum(p y) + eps).
torch::Tensor soft_iou_loss(const torch::Tensor& probs, const torch::Tensor& y, double eps = 1e-7);

/// mean(-(1 - p_t)^gamma log p_t).
torch::Tensor focal_loss(const torch::Tensor& logits, const torch::Tensor& y, double gamma = 2.0);

/// 1 - (TP + eps) / (TP + alpha FP + (1 - alpha) FN + eps) over soft counts.
torch::Tensor tversky_loss(const torch::Tensor& probs, const torch::Tensor& y, double alpha = 0.3,
                           double eps = 1e-7);

/// Dispatch on cfg.kind. Mixed kinds use equal 1/2 weights.
torch::Tensor compute_loss(const torch::Tensor& logits, const torch::Tensor& y, const LossConfig& cfg);

}  // namespace dualswin
