#pragma once

#include <array>
#include <string>
#include <string_view>

#include "earu/tensor.hpp"

namespace earu {

inline constexpr double kBceEpsilon = 1e-7;

struct LossWeights {
  double w_bce = 1.0;
  double w_dice = 1.0;

  /// Throws ParameterError for negative, non-finite or all-zero weights.
  void validate() const;
  std::string str() const;
  bool operator==(const LossWeights&) const = default;
};

struct LossPreset {
  std::string_view label;  // "BCE:DICE"
  LossWeights weights;
};

/// BCE-only, Dice-only and the four mixed ratios.
const std::array<LossPreset, 6>& loss_presets();

/// Parses "a:b" as (w_bce, w_dice).
LossWeights parse_loss_ratio(std::string_view text);

template <typename T>
struct LossResult {
  double value = 0.0;
  Tensor<T> grad;  // d value / d pred
};

/// Mean binary cross-entropy with predictions clamped to [eps, 1 - eps]; the
/// gradient is zero where the clamp is active.
template <typename T>
LossResult<T> bce_loss(const Tensor<T>& pred, const Tensor<T>& target);

/// 1 - (2 sum(y p) + 1) / (sum(y) + sum(p) + 1) with sums over the whole batch.
template <typename T>
LossResult<T> dice_loss(const Tensor<T>& pred, const Tensor<T>& target);

template <typename T>
LossResult<T> combo_loss(const Tensor<T>& pred, const Tensor<T>& target, const LossWeights& w);

}  // namespace earu
