#include "earu/inference.hpp"

#include <algorithm>
#include <cmath>

namespace earu {

void InferenceConfig::validate() const {
  if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("inference.threshold must be inside (0, 1)");
  if (batch_slices == 0) throw ConfigError("inference.batch_slices must be at least 1");
}

std::vector<float> predict_slices(ModelParams<float>& params, const ModelConfig& cfg, const float* slices,
                                  std::size_t count, std::size_t size, std::size_t batch_slices) {
  const std::size_t px = size * size;
  for (std::size_t i = 0; i < count * px; ++i) {
    if (!(slices[i] >= 0.0f && slices[i] <= 1.0f)) {
      throw InputError("segment: input value " + std::to_string(slices[i]) +
                       " outside [0, 1]; the volume must be preprocessed first");
    }
  }
  const std::size_t mh = cfg.input_h, mw = cfg.input_w;
  std::vector<float> out(count * mh * mw);
  Rng unused(0);
  for (std::size_t b = 0; b < count; b += batch_slices) {
    const std::size_t n = std::min(batch_slices, count - b);
    Tensor<float> x(Shape{n, 1, mh, mw});
    for (std::size_t i = 0; i < n; ++i) {
      const auto r = resize_bilinear(slices + (b + i) * px, size, size, mh, mw);
      std::copy(r.begin(), r.end(), x.plane(i, 0));
    }
    const Tensor<float> y = forward(params, cfg, x, Mode::infer, unused);
    std::copy(y.values().begin(), y.values().end(), out.begin() + static_cast<long>(b * mh * mw));
  }
  return out;
}

LabelVolume segment_volume(ModelParams<float>& params, const ModelConfig& cfg, const CtVolume& prepared,
                           const VolumeGeometry& original, const InferenceConfig& ic) {
  ic.validate();
  if (prepared.h != prepared.w) throw ShapeError("segment_volume: prepared slices must be square, got " + prepared.dims_str());
  if (prepared.d == 0 || original.d == 0 || original.h == 0 || original.w == 0) {
    throw InputError("segment_volume: empty volume");
  }
  const std::vector<float> prob =
      predict_slices(params, cfg, prepared.voxels.data(), prepared.d, prepared.h, ic.batch_slices);
  const std::size_t mh = cfg.input_h, mw = cfg.input_w;
  std::vector<std::uint8_t> masks(prob.size());
  for (std::size_t i = 0; i < prob.size(); ++i) masks[i] = prob[i] >= ic.threshold ? 1 : 0;

  LabelVolume out(original.d, original.h, original.w, original.spacing);
  for (std::size_t z = 0; z < original.d; ++z) {
    const double pos = static_cast<double>(z) * original.spacing.sz / prepared.spacing.sz;
    const std::size_t src = std::min(static_cast<std::size_t>(std::lround(pos)), prepared.d - 1);
    const auto s = resize_nearest(masks.data() + src * mh * mw, mh, mw, original.h, original.w);
    std::copy(s.begin(), s.end(), out.slice(z));
  }
  return out;
}

LabelVolume segment_ct(ModelParams<float>& params, const ModelConfig& cfg, const CtVolume& raw,
                       const PreprocessConfig& pc, const InferenceConfig& ic) {
  const CtVolume prepared = preprocess_image(raw, pc);
  return segment_volume(params, cfg, prepared, {raw.d, raw.h, raw.w, raw.spacing}, ic);
}

double slice_set_dice(ModelParams<float>& params, const ModelConfig& cfg, const std::vector<SlicePair>& data,
                      const InferenceConfig& ic) {
  ic.validate();
  std::size_t inter = 0, sum_a = 0, sum_b = 0;
  const std::size_t mh = cfg.input_h, mw = cfg.input_w;
  for (const auto& p : data) {
    const auto prob = predict_slices(params, cfg, p.image.data(), 1, p.size, 1);
    const auto gt = resize_nearest(p.mask.data(), p.size, p.size, mh, mw);
    for (std::size_t i = 0; i < prob.size(); ++i) {
      const bool a = prob[i] >= ic.threshold;
      const bool b = gt[i] != 0;
      inter += a && b;
      sum_a += a;
      sum_b += b;
    }
  }
  if (sum_a + sum_b == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(sum_a + sum_b);
}

}  // namespace earu
