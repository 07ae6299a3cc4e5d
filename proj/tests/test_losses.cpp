#include <doctest.h>

#include <cmath>
#include <limits>
#include <numbers>

#include "earu/losses.hpp"
#include "support.hpp"

using namespace earu;
using earu::test::random_tensor;

namespace {

Tensor<double> vec(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor<double>(Shape{1, 1, 1, n}, std::move(v));
}

// Written out directly from the loss definitions.
double ref_bce(const Tensor<double>& p, const Tensor<double>& y) {
  double s = 0;
  for (std::size_t i = 0; i < p.numel(); ++i) {
    const double q = std::clamp(p[i], kBceEpsilon, 1.0 - kBceEpsilon);
    s += -(y[i] * std::log(q) + (1 - y[i]) * std::log(1 - q));
  }
  return s / double(p.numel());
}

double ref_dice(const Tensor<double>& p, const Tensor<double>& y) {
  double inter = 0, sp = 0, sy = 0;
  for (std::size_t i = 0; i < p.numel(); ++i) inter += p[i] * y[i], sp += p[i], sy += y[i];
  return 1.0 - (2 * inter + 1) / (sy + sp + 1);
}

}  // namespace

TEST_CASE("dice loss edge identities") {
  const auto zeros = Tensor<double>(Shape{2, 1, 4, 4}, 0.0);
  CHECK(dice_loss(zeros, zeros).value == 0.0);
  const auto ones = Tensor<double>(Shape{2, 1, 4, 4}, 1.0);
  CHECK(dice_loss(ones, ones).value == 0.0);
  // One positive pixel predicted as background: 1 - 1/2.
  CHECK(dice_loss(vec({0, 0}), vec({1, 0})).value == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("binary cross entropy values") {
  CHECK(std::fabs(bce_loss(vec({0.5}), vec({1})).value - std::numbers::ln2) <= 1e-9);
  CHECK(std::fabs(bce_loss(vec({0.5, 0.5}), vec({0, 1})).value - std::numbers::ln2) <= 1e-9);
  // Saturated predictions are clamped to a finite value.
  const auto sat = bce_loss(vec({0.0, 1.0}), vec({1, 0}));
  CHECK(std::isfinite(sat.value));
  CHECK(sat.value == doctest::Approx(-std::log(kBceEpsilon)).epsilon(1e-9));
  CHECK(sat.grad[0] == 0.0);
  CHECK(sat.grad[1] == 0.0);
  CHECK_THROWS_AS(bce_loss(vec({0.5}), vec({1, 0})), ShapeError);
}

TEST_CASE("loss values and gradients against direct formulas") {
  std::mt19937_64 gen(31);
  for (int t = 0; t < 5; ++t) {
    auto p = random_tensor<double>(Shape{2, 1, 3, 4}, gen, 0.01, 0.99);
    auto y = random_tensor<double>(p.shape(), gen);
    for (auto& v : y.values()) v = v > 0 ? 1.0 : 0.0;
    const auto b = bce_loss(p, y);
    const auto d = dice_loss(p, y);
    CHECK(b.value == doctest::Approx(ref_bce(p, y)).epsilon(1e-12));
    CHECK(d.value == doctest::Approx(ref_dice(p, y)).epsilon(1e-12));
    const auto nb = numeric_gradient(p.values(), [&] { return ref_bce(p, y); }, 1e-6);
    const auto nd = numeric_gradient(p.values(), [&] { return ref_dice(p, y); }, 1e-6);
    for (std::size_t i = 0; i < p.numel(); ++i) {
      CHECK(gradcheck_error(b.grad[i], nb[i]) < 1e-6);
      CHECK(gradcheck_error(d.grad[i], nd[i]) < 1e-6);
    }
  }
}

TEST_CASE("every ratio preset is selectable and additive") {
  const auto& presets = loss_presets();
  const char* labels[] = {"1:0", "0:1", "0.2:0.8", "0.5:0.5", "0.8:0.2", "1:1"};
  const double wb[] = {1, 0, 0.2, 0.5, 0.8, 1}, wd[] = {0, 1, 0.8, 0.5, 0.2, 1};
  std::mt19937_64 gen(32);
  auto p = random_tensor<float>(Shape{2, 1, 4, 4}, gen, 0.01, 0.99);
  auto y = random_tensor<float>(p.shape(), gen);
  for (auto& v : y.values()) v = v > 0 ? 1.0f : 0.0f;
  const auto b = bce_loss(p, y);
  const auto d = dice_loss(p, y);
  for (std::size_t i = 0; i < 6; ++i) {
    CAPTURE(labels[i]);
    CHECK(presets[i].label == labels[i]);
    CHECK(presets[i].weights.w_bce == wb[i]);
    CHECK(presets[i].weights.w_dice == wd[i]);
    CHECK(parse_loss_ratio(labels[i]) == presets[i].weights);
    const auto c = combo_loss(p, y, presets[i].weights);
    CHECK(std::fabs(c.value - (wb[i] * b.value + wd[i] * d.value)) <= 1e-7);
    for (std::size_t k = 0; k < p.numel(); ++k)
      CHECK(std::fabs(c.grad[k] - (wb[i] * b.grad[k] + wd[i] * d.grad[k])) <= 1e-6);
  }
  CHECK(combo_loss(p, y, LossWeights{1, 0}).value == b.value);
}

TEST_CASE("loss weight validation and ratio parsing") {
  CHECK_THROWS_AS(LossWeights({-1, 1}).validate(), ParameterError);
  CHECK_THROWS_AS(LossWeights({0, 0}).validate(), ParameterError);
  CHECK_THROWS_AS(LossWeights({std::numeric_limits<double>::infinity(), 1}).validate(), ParameterError);
  CHECK_THROWS_AS(parse_loss_ratio("1"), ParameterError);
  CHECK_THROWS_AS(parse_loss_ratio("a:b"), ParameterError);
  CHECK_THROWS_AS(parse_loss_ratio("-1:2"), ParameterError);
  CHECK(parse_loss_ratio("2:3") == LossWeights{2, 3});
}
