#pragma once

// Central finite-difference checks of the analytic backward passes.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "earu/model.hpp"

namespace earu {

/// Denominator floor so that gradients that are zero up to rounding compare
/// on an absolute scale.
inline constexpr double kGradcheckFloor = 1e-6;

inline double gradcheck_error(double analytic, double numeric, double floor = kGradcheckFloor) {
  return std::fabs(analytic - numeric) / std::max({std::fabs(analytic), std::fabs(numeric), floor});
}

/// Central difference of `loss` w.r.t. every entry of `values`.
inline std::vector<double> numeric_gradient(std::span<double> values, const std::function<double()>& loss,
                                            double step = 1e-3) {
  std::vector<double> g(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double orig = values[i];
    values[i] = orig + step;
    const double up = loss();
    values[i] = orig - step;
    const double down = loss();
    values[i] = orig;
    g[i] = (up - down) / (2.0 * step);
  }
  return g;
}

struct GradcheckEntry {
  std::string name;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double error = 0.0;
};

struct GradcheckReport {
  std::size_t checked = 0;
  double max_error = 0.0;
  GradcheckEntry worst;
  std::vector<GradcheckEntry> failures;  // error >= tolerance
  double tolerance = 1e-3;
  bool passed() const { return failures.empty(); }
};

struct GradcheckOptions {
  std::uint64_t seed = 1;
  std::size_t batch = 2;
  double step = 1e-3;
  double tolerance = 1e-3;
  bool include_input = true;
  // Extra steps tried after `step`; an entry passes when any of them agrees.
  std::vector<double> fallback_steps{1e-4, 1e-5, 1e-6};
  std::size_t max_per_tensor = 64;  // 0 checks every entry; otherwise evenly spaced entries
};

/// Indices checked for a tensor of `n` entries: all of them, or `cap` evenly
/// spaced ones including the first and the last.
std::vector<std::size_t> gradcheck_indices(std::size_t n, std::size_t cap);

/// Checks d(sum(r * forward(x))) for random x and r against the model's
/// backward pass, for every trainable tensor (and the input).
GradcheckReport model_gradcheck(const ModelConfig& cfg, const GradcheckOptions& opt = {});

}  // namespace earu
