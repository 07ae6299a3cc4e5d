#pragma once

// CT preprocessing chain: HU window, histogram equalisation, slice-axis
// resampling, liver-range crop and in-plane resize.

#include <cstdint>
#include <string>
#include <vector>

#include "earu/volume.hpp"

namespace earu {

struct PreprocessConfig {
  double hu_lo = -200.0;
  double hu_hi = 200.0;
  std::size_t hist_bins = 256;
  double target_sz = 1.0;  // mm
  std::size_t crop_margin = 20;
  std::size_t slice_size = 256;

  void validate() const;
  bool operator==(const PreprocessConfig&) const = default;
};

/// One 2-D training sample.
struct SlicePair {
  std::size_t size = 0;  // image is size x size
  std::vector<float> image;
  std::vector<std::uint8_t> mask;
  std::string case_id;
  std::size_t slice_index = 0;   // index in the preprocessed (resampled) volume
  std::string augmentation = "none";

  bool operator==(const SlicePair&) const = default;
};

/// Clamp to [lo, hi] and map affinely onto [0, 1].
CtVolume hu_window(const CtVolume& v, double lo = -200.0, double hi = 200.0);

/// Global equalisation: value t in bin b = min(bins - 1, floor(t * bins)) maps
/// to the fraction of voxels whose bin is <= b.
CtVolume hist_equalize(const CtVolume& v, std::size_t bins = 256);

/// Depth d' = floor((d - 1) * sz / target + 1e-9) + 1; slice i' sits at
/// physical depth i' * target. Images interpolate linearly, masks take the
/// nearest source slice.
CtVolume resample_z(const CtVolume& v, double target_sz = 1.0);
LabelVolume resample_z(const LabelVolume& v, double target_sz = 1.0);

struct CropResult {
  CtVolume image;
  LabelVolume mask;
  std::size_t first = 0;  // retained range [first, last]
  std::size_t last = 0;
};

/// Keeps [first_nonzero - margin, last_nonzero + margin] clamped to the volume.
CropResult crop_liver_range(const CtVolume& v, const LabelVolume& m, std::size_t margin = 20);

/// Resample every slice to size x size: half-pixel bilinear for images,
/// nearest for masks.
CtVolume resize_slices(const CtVolume& v, std::size_t size = 256);
LabelVolume resize_slices(const LabelVolume& v, std::size_t size = 256);

/// 2-D resampling helpers shared with training and inference.
std::vector<float> resize_bilinear(const float* src, std::size_t h, std::size_t w, std::size_t oh, std::size_t ow);
std::vector<std::uint8_t> resize_nearest(const std::uint8_t* src, std::size_t h, std::size_t w, std::size_t oh,
                                         std::size_t ow);

/// Window -> equalise -> resample -> crop -> resize, one pair per kept slice.
std::vector<SlicePair> preprocess_case(const CtVolume& image, const LabelVolume& mask, const std::string& case_id,
                                       const PreprocessConfig& cfg = {});

/// The same chain without the mask-dependent crop (inference input).
CtVolume preprocess_image(const CtVolume& image, const PreprocessConfig& cfg = {});

/// Nonzero voxels become 1.
LabelVolume binarize(const LabelVolume& m);

}  // namespace earu
