#include "hmhi/losses.hpp"

namespace hmhi {

void LossConfig::validate() const {
  if (w_bce < 0 || w_focal < 0 || w_dice < 0) throw ConfigError("loss weights must be non-negative");
  if (w_bce == 0 && w_focal == 0 && w_dice == 0) throw ConfigError("at least one loss weight must be positive");
  if (focal_gamma < 0) throw ConfigError("focal gamma must be non-negative");
  if (dice_eps < 0) throw ConfigError("dice smoothing must be non-negative");
}

Tensor mask_to_tensor(const Mask& mask) {
  std::vector<double> values(mask.pixels.begin(), mask.pixels.end());
  return Tensor::from({1, mask.height, mask.width}, std::move(values));
}

Tensor combined_loss(const Tensor& logits, const Mask& gt, const LossConfig& config) {
  config.validate();
  const Shape want{1, gt.height, gt.width};
  if (logits.shape() != want) {
    throw ShapeError("combined_loss: logits " + shape_str(logits.shape()) + " vs mask " + shape_str(want));
  }
  if (!gt.is_binary()) throw NumericError("combined_loss: ground truth must be binary");

  const Tensor g = mask_to_tensor(gt);
  const Tensor not_g = Tensor::from(want, [&] {
    std::vector<double> v(gt.pixels.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = 1.0 - gt.pixels[i];
    return v;
  }());
  const Tensor neg = scale(logits, -1.0);
  const Tensor p = sigmoid(logits);
  const Tensor q = sigmoid(neg);  // 1 - p
  const Tensor log_p = log_sigmoid(logits);
  const Tensor log_q = log_sigmoid(neg);

  Tensor total;
  auto accumulate = [&](const Tensor& term, double weight) {
    if (weight == 0.0) return;
    const Tensor weighted = scale(term, weight);
    total = total.defined() ? add(total, weighted) : weighted;
  };

  accumulate(mean_all(scale(add(mul(g, log_p), mul(not_g, log_q)), -1.0)), config.w_bce);
  accumulate(mean_all(scale(add(mul(mul(g, pow_scalar(q, config.focal_gamma)), log_p),
                                mul(mul(not_g, pow_scalar(p, config.focal_gamma)), log_q)),
                            -1.0)),
             config.w_focal);
  if (config.w_dice != 0.0) {
    const Tensor inter = add_scalar(scale(sum_all(mul(p, g)), 2.0), config.dice_eps);
    const Tensor denom = add_scalar(add(sum_all(p), sum_all(g)), config.dice_eps);
    accumulate(add_scalar(scale(div(inter, denom), -1.0), 1.0), config.w_dice);
  }
  return total;
}

}  // namespace hmhi
