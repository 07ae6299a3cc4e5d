#pragma once

#include <vector>

#include "earu/model.hpp"
#include "earu/preprocess.hpp"
#include "earu/volume.hpp"

namespace earu {

struct InferenceConfig {
  double threshold = 0.5;
  std::size_t batch_slices = 8;

  void validate() const;
  bool operator==(const InferenceConfig&) const = default;
};

struct VolumeGeometry {
  std::size_t d = 0, h = 0, w = 0;
  Spacing spacing;
};

/// Probability maps at model resolution for square slices of side `size`
/// (values in [0, 1] required; InputError otherwise).
std::vector<float> predict_slices(ModelParams<float>& params, const ModelConfig& cfg, const float* slices,
                                  std::size_t count, std::size_t size, std::size_t batch_slices = 8);

/// Segments a preprocessed volume slice by slice and maps the mask back to
/// `original` geometry with nearest-neighbour sampling.
LabelVolume segment_volume(ModelParams<float>& params, const ModelConfig& cfg, const CtVolume& prepared,
                           const VolumeGeometry& original, const InferenceConfig& ic = {});

/// Runs the inference preprocessing chain on a raw HU volume, then
/// segment_volume back onto the raw geometry.
LabelVolume segment_ct(ModelParams<float>& params, const ModelConfig& cfg, const CtVolume& raw,
                       const PreprocessConfig& pc = {}, const InferenceConfig& ic = {});

/// Pixel-aggregated Dice of thresholded predictions over a slice set.
double slice_set_dice(ModelParams<float>& params, const ModelConfig& cfg, const std::vector<SlicePair>& data,
                      const InferenceConfig& ic = {});

}  // namespace earu
