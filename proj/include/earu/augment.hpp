#pragma once

// Slice augmentations: zoom, horizontal flip and elastic deformation, applied
// in that order with one geometric map shared by image and mask.

#include <cstdint>
#include <string>
#include <vector>

#include "earu/preprocess.hpp"
#include "earu/rng.hpp"

namespace earu {

struct AugmentConfig {
  double zoom_min = 0.9;
  double zoom_max = 1.1;
  double elastic_sigma = 8.0;  // px
  double elastic_alpha = 20.0;  // px

  void validate() const;
  bool operator==(const AugmentConfig&) const = default;
};

enum AugmentFlag : unsigned { kZoom = 1u, kFlip = 2u, kElastic = 4u };

/// Tag such as "zoom+flip"; "none" for the empty set.
std::string augment_tag(unsigned flags);
unsigned augment_flags_from_tag(const std::string& tag);

/// Backward map: output pixel (y, x) samples the source at (src_y, src_x).
struct WarpField {
  std::size_t size = 0;
  std::vector<double> src_y;
  std::vector<double> src_x;

  static WarpField identity(std::size_t size);
};

/// Scaling by `scale` about the slice centre.
WarpField zoom_field(std::size_t size, double scale);
WarpField flip_field(std::size_t size);
/// Uniform(-1, 1) offsets per pixel, Gaussian-smoothed (sigma) and scaled by alpha.
WarpField elastic_field(std::size_t size, double sigma, double alpha, Rng& rng);

/// Bilinear with edge clamping.
std::vector<float> warp_image(const std::vector<float>& img, const WarpField& f);
/// Nearest neighbour with edge clamping; stays binary.
std::vector<std::uint8_t> warp_mask(const std::vector<std::uint8_t>& mask, const WarpField& f);

/// Applies the transforms in `flags` (non-empty) in the fixed order.
SlicePair augment(const SlicePair& p, unsigned flags, const AugmentConfig& cfg, Rng& rng);

/// Each input pair plus its seven augmented variants.
std::vector<SlicePair> expand_all_combinations(const std::vector<SlicePair>& pairs, const AugmentConfig& cfg, Rng& rng);

}  // namespace earu
