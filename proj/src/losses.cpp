#include "earu/losses.hpp"

#include <charconv>
#include <cmath>

namespace earu {

void LossWeights::validate() const {
  if (!std::isfinite(w_bce) || !std::isfinite(w_dice) || w_bce < 0.0 || w_dice < 0.0) {
    throw ParameterError("loss weights must be finite and non-negative, got " + str());
  }
  if (w_bce + w_dice <= 0.0) throw ParameterError("loss weights " + str() + " are both zero");
}

std::string LossWeights::str() const {
  auto fmt = [](double v) {
    char buf[32];
    auto r = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, r.ptr);
  };
  return fmt(w_bce) + ":" + fmt(w_dice);
}

const std::array<LossPreset, 6>& loss_presets() {
  static const std::array<LossPreset, 6> presets{{
      {"1:0", {1.0, 0.0}},
      {"0:1", {0.0, 1.0}},
      {"0.2:0.8", {0.2, 0.8}},
      {"0.5:0.5", {0.5, 0.5}},
      {"0.8:0.2", {0.8, 0.2}},
      {"1:1", {1.0, 1.0}},
  }};
  return presets;
}

LossWeights parse_loss_ratio(std::string_view text) {
  const auto colon = text.find(':');
  if (colon == std::string_view::npos) {
    throw ParameterError("loss ratio '" + std::string(text) + "' must look like BCE:DICE, e.g. 1:1");
  }
  auto parse = [&](std::string_view part) {
    double v = 0.0;
    const auto res = std::from_chars(part.data(), part.data() + part.size(), v);
    if (res.ec != std::errc() || res.ptr != part.data() + part.size()) {
      throw ParameterError("loss ratio '" + std::string(text) + "': cannot parse '" + std::string(part) + "'");
    }
    return v;
  };
  LossWeights w{parse(text.substr(0, colon)), parse(text.substr(colon + 1))};
  w.validate();
  return w;
}

template <typename T>
LossResult<T> bce_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  require_same_shape(pred.shape(), target.shape(), "bce_loss");
  const std::size_t n = pred.numel();
  if (n == 0) throw ShapeError("bce_loss: empty input");
  LossResult<T> r;
  r.grad = Tensor<T>(pred.shape());
  const double lo = kBceEpsilon;
  const double hi = 1.0 - kBceEpsilon;
  const double inv_n = 1.0 / static_cast<double>(n);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double raw = static_cast<double>(pred[i]);
    const double p = std::min(std::max(raw, lo), hi);
    const double y = static_cast<double>(target[i]);
    sum += -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
    const bool clamped = raw < lo || raw > hi;
    r.grad[i] = clamped ? T(0) : static_cast<T>((-(y / p) + (1.0 - y) / (1.0 - p)) * inv_n);
  }
  r.value = sum * inv_n;
  return r;
}

template <typename T>
LossResult<T> dice_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  require_same_shape(pred.shape(), target.shape(), "dice_loss");
  double inter = 0.0, sum_y = 0.0, sum_p = 0.0;
  for (std::size_t i = 0; i < pred.numel(); ++i) {
    const double p = static_cast<double>(pred[i]);
    const double y = static_cast<double>(target[i]);
    inter += y * p;
    sum_y += y;
    sum_p += p;
  }
  const double num = 2.0 * inter + 1.0;
  const double den = sum_y + sum_p + 1.0;
  LossResult<T> r;
  r.value = 1.0 - num / den;
  r.grad = Tensor<T>(pred.shape());
  const double den2 = den * den;
  for (std::size_t i = 0; i < pred.numel(); ++i) {
    const double y = static_cast<double>(target[i]);
    r.grad[i] = static_cast<T>((num - 2.0 * y * den) / den2);
  }
  return r;
}

template <typename T>
LossResult<T> combo_loss(const Tensor<T>& pred, const Tensor<T>& target, const LossWeights& w) {
  w.validate();
  require_same_shape(pred.shape(), target.shape(), "combo_loss");
  LossResult<T> r;
  r.grad = Tensor<T>(pred.shape());
  if (w.w_bce != 0.0) {
    const auto b = bce_loss(pred, target);
    r.value += w.w_bce * b.value;
    for (std::size_t i = 0; i < r.grad.numel(); ++i) r.grad[i] += static_cast<T>(w.w_bce * b.grad[i]);
  }
  if (w.w_dice != 0.0) {
    const auto d = dice_loss(pred, target);
    r.value += w.w_dice * d.value;
    for (std::size_t i = 0; i < r.grad.numel(); ++i) r.grad[i] += static_cast<T>(w.w_dice * d.grad[i]);
  }
  return r;
}

template LossResult<float> bce_loss(const Tensor<float>&, const Tensor<float>&);
template LossResult<double> bce_loss(const Tensor<double>&, const Tensor<double>&);
template LossResult<float> dice_loss(const Tensor<float>&, const Tensor<float>&);
template LossResult<double> dice_loss(const Tensor<double>&, const Tensor<double>&);
template LossResult<float> combo_loss(const Tensor<float>&, const Tensor<float>&, const LossWeights&);
template LossResult<double> combo_loss(const Tensor<double>&, const Tensor<double>&, const LossWeights&);

}  // namespace earu
