#pragma once

#include "hmhi/mask.hpp"
#include "hmhi/tensor.hpp"

namespace hmhi {

struct LossConfig {
  double w_bce = 1.0;
  double w_focal = 1.0;
  double w_dice = 1.0;
  double focal_gamma = 2.0;
  double dice_eps = 1.0;

  void validate() const;
};

Tensor mask_to_tensor(const Mask& mask);  // [1, H, W] of 0/1

/// w_bce * BCE + w_focal * Focal(gamma) + w_dice * Dice on [1, H, W] logits.
/// BCE and focal are pixel means; Dice = 1 - (2 sum(pg) + eps) / (sum(p) + sum(g) + eps).
Tensor combined_loss(const Tensor& logits, const Mask& gt, const LossConfig& config);

}  // namespace hmhi
