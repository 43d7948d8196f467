#include "octseg/loss.hpp"

#include <algorithm>
#include <cmath>
#include <vector>
#include <string>

#include "octseg/error.hpp"

namespace octseg {

LossConfig LossConfig::preset(int id) {
  switch (id) {
    case 1: return {1, 1.0, 0.0, 1.0};
    case 2: return {2, 0.0, 1.0, 1.0};
    case 3: return {3, 0.5, 0.5, 1.0};
    case 4: return {4, 0.7, 0.3, 1.0};
    case 5: return {5, 0.3, 0.7, 1.0};
    default: throw ConfigError("unknown loss preset " + std::to_string(id) + " (expected 1..5)");
  }
}

void LossConfig::validate() const {
  if (id < 1 || id > 5) throw ConfigError("unknown loss preset " + std::to_string(id) + " (expected 1..5)");
  if (w_bce < 0.0 || w_bce > 1.0 || w_dice < 0.0 || w_dice > 1.0) {
    throw ConfigError("loss weights must lie in [0, 1]");
  }
  if (dice_smooth <= 0.0) throw ConfigError("dice smoothing must be positive");
}

namespace {

template <typename T>
void require_same(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw ShapeError(std::string(what) + ": " + std::to_string(a) + " predictions vs " + std::to_string(b) +
                     " targets");
  }
  if (a == 0) throw ShapeError(std::string(what) + ": empty input");
}

template <typename T>
T logistic(T z) {
  return z >= T{0} ? T{1} / (T{1} + std::exp(-z)) : std::exp(z) / (T{1} + std::exp(z));
}

struct DiceSums {
  double intersection = 0.0;
  double prob_sum = 0.0;
  double target_sum = 0.0;
};

}  // namespace

template <typename T>
T bce_loss(std::span<const T> logits, std::span<const T> targets) {
  require_same<T>(logits.size(), targets.size(), "bce_loss");
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double z = static_cast<double>(logits[i]);
    const double y = static_cast<double>(targets[i]);
    sum += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
  }
  return static_cast<T>(sum / static_cast<double>(logits.size()));
}

template <typename T>
T dice_loss(std::span<const T> probs, std::span<const T> targets, double smooth) {
  require_same<T>(probs.size(), targets.size(), "dice_loss");
  DiceSums s;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = static_cast<double>(probs[i]);
    const double y = static_cast<double>(targets[i]);
    s.intersection += p * y;
    s.prob_sum += p;
    s.target_sum += y;
  }
  return static_cast<T>(1.0 - (2.0 * s.intersection + smooth) / (s.prob_sum + s.target_sum + smooth));
}

template <typename T>
T combined_loss(const LossConfig& config, std::span<const T> logits, std::span<const T> targets) {
  config.validate();
  require_same<T>(logits.size(), targets.size(), "combined_loss");
  double total = 0.0;
  if (config.w_bce > 0.0) total += config.w_bce * static_cast<double>(bce_loss(logits, targets));
  if (config.w_dice > 0.0) {
    std::vector<T> probs(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) probs[i] = logistic(logits[i]);
    total += config.w_dice * static_cast<double>(dice_loss<T>(probs, targets, config.dice_smooth));
  }
  return static_cast<T>(total);
}

template <typename T>
T combined_loss_with_grad(const LossConfig& config, std::span<const T> logits, std::span<const T> targets,
                          std::span<T> grad_logits) {
  config.validate();
  require_same<T>(logits.size(), targets.size(), "combined_loss");
  if (grad_logits.size() != logits.size()) throw ShapeError("combined_loss: gradient buffer size mismatch");
  const auto n = logits.size();
  std::vector<double> probs(n);
  DiceSums s;
  double bce = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double z = static_cast<double>(logits[i]);
    const double y = static_cast<double>(targets[i]);
    probs[i] = logistic(z);
    bce += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
    s.intersection += probs[i] * y;
    s.prob_sum += probs[i];
    s.target_sum += y;
  }
  bce /= static_cast<double>(n);
  const double num = 2.0 * s.intersection + config.dice_smooth;
  const double den = s.prob_sum + s.target_sum + config.dice_smooth;
  const double dice = 1.0 - num / den;

  for (std::size_t i = 0; i < n; ++i) {
    const double y = static_cast<double>(targets[i]);
    double g = 0.0;
    if (config.w_bce > 0.0) g += config.w_bce * (probs[i] - y) / static_cast<double>(n);
    if (config.w_dice > 0.0) {
      // d(dice)/dp = -(2y*den - num) / den^2, chained through dp/dz = p(1-p).
      const double dd_dp = -(2.0 * y * den - num) / (den * den);
      g += config.w_dice * dd_dp * probs[i] * (1.0 - probs[i]);
    }
    grad_logits[i] = static_cast<T>(g);
  }
  double total = 0.0;
  if (config.w_bce > 0.0) total += config.w_bce * bce;
  if (config.w_dice > 0.0) total += config.w_dice * dice;
  return static_cast<T>(total);
}

template <typename T>
T bce_loss(const Tensor<T>& logits, const Tensor<T>& targets) {
  if (logits.shape() != targets.shape()) throw ShapeError("bce_loss: shape mismatch");
  return bce_loss<T>(logits.values(), targets.values());
}

template <typename T>
T dice_loss(const Tensor<T>& probs, const Tensor<T>& targets, double smooth) {
  if (probs.shape() != targets.shape()) throw ShapeError("dice_loss: shape mismatch");
  return dice_loss<T>(probs.values(), targets.values(), smooth);
}

template <typename T>
T combined_loss(const LossConfig& config, const Tensor<T>& logits, const Tensor<T>& targets) {
  if (logits.shape() != targets.shape()) throw ShapeError("combined_loss: shape mismatch");
  return combined_loss<T>(config, logits.values(), targets.values());
}

#define OCTSEG_INSTANTIATE_LOSS(T)                                                                         \
  template T bce_loss<T>(std::span<const T>, std::span<const T>);                                          \
  template T dice_loss<T>(std::span<const T>, std::span<const T>, double);                                 \
  template T combined_loss<T>(const LossConfig&, std::span<const T>, std::span<const T>);                  \
  template T combined_loss_with_grad<T>(const LossConfig&, std::span<const T>, std::span<const T>,         \
                                        std::span<T>);                                                      \
  template T bce_loss<T>(const Tensor<T>&, const Tensor<T>&);                                              \
  template T dice_loss<T>(const Tensor<T>&, const Tensor<T>&, double);                                     \
  template T combined_loss<T>(const LossConfig&, const Tensor<T>&, const Tensor<T>&);

OCTSEG_INSTANTIATE_LOSS(float)
OCTSEG_INSTANTIATE_LOSS(double)

}  // namespace octseg
