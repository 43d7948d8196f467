#pragma once

#include <span>

#include "octseg/tensor.hpp"

namespace octseg {

/// Weighted BCE + soft Dice. Presets 1-5 reproduce the five training runs:
/// BCE, Dice, equal mix, 0.7/0.3 and 0.3/0.7.
struct LossConfig {
  int id = 4;
  double w_bce = 0.7;
  double w_dice = 0.3;
  double dice_smooth = 1.0;

  static LossConfig preset(int id);
  void validate() const;
  bool operator==(const LossConfig&) const = default;
};

/// Mean binary cross-entropy over all pixels, evaluated from logits as
/// max(z, 0) - z*y + log(1 + exp(-|z|)).
template <typename T>
T bce_loss(std::span<const T> logits, std::span<const T> targets);

/// 1 - (2*sum(p*y) + eps) / (sum(p) + sum(y) + eps), sums over the whole batch.
template <typename T>
T dice_loss(std::span<const T> probs, std::span<const T> targets, double smooth = 1.0);

template <typename T>
T combined_loss(const LossConfig& config, std::span<const T> logits, std::span<const T> targets);

/// Loss value and its gradient with respect to the logits.
template <typename T>
T combined_loss_with_grad(const LossConfig& config, std::span<const T> logits, std::span<const T> targets,
                          std::span<T> grad_logits);

// Tensor conveniences; shapes must match.
template <typename T>
T bce_loss(const Tensor<T>& logits, const Tensor<T>& targets);
template <typename T>
T dice_loss(const Tensor<T>& probs, const Tensor<T>& targets, double smooth = 1.0);
template <typename T>
T combined_loss(const LossConfig& config, const Tensor<T>& logits, const Tensor<T>& targets);

}  // namespace octseg
