#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "earu/model.hpp"

namespace earu {

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  bool operator==(const AdamHyper&) const = default;
};

struct AdamMoments {
  std::vector<float> m;
  std::vector<float> v;
  bool operator==(const AdamMoments&) const = default;
};

/// First/second moments keyed by parameter name, plus the step counter.
struct AdamState {
  std::uint64_t step = 0;
  std::map<std::string, AdamMoments> moments;
  bool operator==(const AdamState&) const = default;
};

/// One bias-corrected Adam update of every trainable tensor from its
/// gradient buffer. A fresh state adopts the parameter names; afterwards the
/// trainable names and sizes must match the state exactly (StateError).
void adam_step(ModelParams<float>& params, AdamState& state, double lr, const AdamHyper& hyper = {});

/// Same update on flat named vectors (params and grads keyed identically).
void adam_step(const std::map<std::string, std::span<float>>& params,
               const std::map<std::string, std::span<const float>>& grads, AdamState& state, double lr,
               const AdamHyper& hyper = {});

struct EpochLoss {
  double train = 0.0;
  std::optional<double> val;
  bool operator==(const EpochLoss&) const = default;
};

struct LossCurve {
  std::vector<EpochLoss> epochs;
  bool operator==(const LossCurve&) const = default;
};

/// CSV epoch,train_loss,val_loss with shortest round-trip decimals; an absent
/// validation loss leaves the field empty.
std::string loss_curve_csv(const LossCurve& curve);
void export_loss_curve(const LossCurve& curve, const std::filesystem::path& path);
LossCurve parse_loss_curve_csv(const std::string& text);

}  // namespace earu
