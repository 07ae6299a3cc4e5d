#include "earu/preprocess.hpp"

#include <algorithm>
#include <cmath>

namespace earu {

void PreprocessConfig::validate() const {
  if (!(hu_lo < hu_hi)) throw ConfigError("preprocess: hu_lo must be below hu_hi");
  if (hist_bins < 2) throw ConfigError("preprocess: hist_bins must be at least 2");
  if (!(target_sz > 0.0)) throw ConfigError("preprocess: target_sz must be positive");
  if (slice_size < 2) throw ConfigError("preprocess: slice_size must be at least 2");
}

CtVolume hu_window(const CtVolume& v, double lo, double hi) {
  if (!(lo < hi)) throw ParameterError("hu_window: lo must be below hi");
  CtVolume out = v;
  const double range = hi - lo;
  for (float& x : out.voxels) {
    const double c = std::clamp(static_cast<double>(x), lo, hi);
    x = static_cast<float>((c - lo) / range);
  }
  return out;
}

CtVolume hist_equalize(const CtVolume& v, std::size_t bins) {
  if (bins < 2) throw ParameterError("hist_equalize: need at least 2 bins");
  CtVolume out = v;
  if (v.voxels.empty()) return out;
  auto bin_of = [&](float t) {
    const double b = std::floor(static_cast<double>(t) * static_cast<double>(bins));
    return static_cast<std::size_t>(std::clamp(b, 0.0, static_cast<double>(bins - 1)));
  };
  std::vector<std::size_t> hist(bins, 0);
  for (float t : v.voxels) {
    if (!(t >= 0.0f && t <= 1.0f)) throw InputError("hist_equalize: voxel value outside [0, 1]");
    ++hist[bin_of(t)];
  }
  std::vector<float> cdf(bins);
  std::size_t acc = 0;
  const double total = static_cast<double>(v.voxels.size());
  for (std::size_t b = 0; b < bins; ++b) {
    acc += hist[b];
    cdf[b] = static_cast<float>(static_cast<double>(acc) / total);
  }
  for (float& t : out.voxels) t = cdf[bin_of(t)];
  return out;
}

namespace {

std::size_t resampled_depth(std::size_t d, double sz, double target) {
  return static_cast<std::size_t>(std::floor(static_cast<double>(d - 1) * sz / target + 1e-9)) + 1;
}

template <typename T>
void check_resample(const Volume<T>& v, double target) {
  if (v.d < 2) throw InputError("resample_z: need at least 2 slices, got " + std::to_string(v.d));
  if (!(target > 0.0) || !v.spacing.positive()) throw ParameterError("resample_z: spacing must be positive");
}

}  // namespace

CtVolume resample_z(const CtVolume& v, double target_sz) {
  check_resample(v, target_sz);
  if (v.spacing.sz == target_sz) return v;
  const std::size_t nd = resampled_depth(v.d, v.spacing.sz, target_sz);
  CtVolume out(nd, v.h, v.w, {target_sz, v.spacing.sy, v.spacing.sx});
  for (std::size_t i = 0; i < nd; ++i) {
    const double pos = std::min(static_cast<double>(i) * target_sz / v.spacing.sz, static_cast<double>(v.d - 1));
    const std::size_t z0 = std::min(static_cast<std::size_t>(std::floor(pos)), v.d - 1);
    const std::size_t z1 = std::min(z0 + 1, v.d - 1);
    const double t = pos - static_cast<double>(z0);
    const float* a = v.slice(z0);
    const float* b = v.slice(z1);
    float* dst = out.slice(i);
    for (std::size_t k = 0; k < v.slice_size(); ++k) {
      dst[k] = static_cast<float>((1.0 - t) * a[k] + t * b[k]);
    }
  }
  return out;
}

LabelVolume resample_z(const LabelVolume& v, double target_sz) {
  check_resample(v, target_sz);
  if (v.spacing.sz == target_sz) return v;
  const std::size_t nd = resampled_depth(v.d, v.spacing.sz, target_sz);
  LabelVolume out(nd, v.h, v.w, {target_sz, v.spacing.sy, v.spacing.sx});
  for (std::size_t i = 0; i < nd; ++i) {
    const double pos = static_cast<double>(i) * target_sz / v.spacing.sz;
    const std::size_t z = std::min(static_cast<std::size_t>(std::lround(pos)), v.d - 1);
    std::copy_n(v.slice(z), v.slice_size(), out.slice(i));
  }
  return out;
}

CropResult crop_liver_range(const CtVolume& v, const LabelVolume& m, std::size_t margin) {
  require_same_dims(v, m, "crop_liver_range");
  std::size_t first = m.d, last = 0;
  for (std::size_t z = 0; z < m.d; ++z) {
    const auto* s = m.slice(z);
    if (std::any_of(s, s + m.slice_size(), [](std::uint8_t x) { return x != 0; })) {
      first = std::min(first, z);
      last = z;
    }
  }
  if (first == m.d) throw InputError("crop_liver_range: mask has no foreground slice");
  CropResult r;
  r.first = first > margin ? first - margin : 0;
  r.last = std::min(last + margin, m.d - 1);
  const std::size_t nd = r.last - r.first + 1;
  r.image = CtVolume(nd, v.h, v.w, v.spacing);
  r.mask = LabelVolume(nd, m.h, m.w, m.spacing);
  std::copy_n(v.slice(r.first), nd * v.slice_size(), r.image.voxels.begin());
  std::copy_n(m.slice(r.first), nd * m.slice_size(), r.mask.voxels.begin());
  return r;
}

std::vector<float> resize_bilinear(const float* src, std::size_t h, std::size_t w, std::size_t oh, std::size_t ow) {
  std::vector<float> out(oh * ow);
  if (h == oh && w == ow) {
    std::copy_n(src, h * w, out.begin());
    return out;
  }
  struct Tap {
    std::size_t i0, i1;
    double t;
  };
  auto taps = [](std::size_t in, std::size_t outn) {
    std::vector<Tap> r(outn);
    const double scale = static_cast<double>(in) / static_cast<double>(outn);
    for (std::size_t o = 0; o < outn; ++o) {
      const double pos = std::clamp((static_cast<double>(o) + 0.5) * scale - 0.5, 0.0, static_cast<double>(in - 1));
      const std::size_t i0 = static_cast<std::size_t>(std::floor(pos));
      r[o] = {i0, std::min(i0 + 1, in - 1), pos - static_cast<double>(i0)};
    }
    return r;
  };
  const auto ty = taps(h, oh);
  const auto tx = taps(w, ow);
  for (std::size_t y = 0; y < oh; ++y) {
    const float* r0 = src + ty[y].i0 * w;
    const float* r1 = src + ty[y].i1 * w;
    const double fy = ty[y].t;
    for (std::size_t x = 0; x < ow; ++x) {
      const double fx = tx[x].t;
      const double top = (1.0 - fx) * r0[tx[x].i0] + fx * r0[tx[x].i1];
      const double bot = (1.0 - fx) * r1[tx[x].i0] + fx * r1[tx[x].i1];
      out[y * ow + x] = static_cast<float>((1.0 - fy) * top + fy * bot);
    }
  }
  return out;
}

std::vector<std::uint8_t> resize_nearest(const std::uint8_t* src, std::size_t h, std::size_t w, std::size_t oh,
                                         std::size_t ow) {
  std::vector<std::uint8_t> out(oh * ow);
  auto index = [](std::size_t o, std::size_t in, std::size_t outn) {
    const double pos = (static_cast<double>(o) + 0.5) * static_cast<double>(in) / static_cast<double>(outn);
    return std::min(static_cast<std::size_t>(std::floor(pos)), in - 1);
  };
  for (std::size_t y = 0; y < oh; ++y) {
    const std::size_t sy = index(y, h, oh);
    for (std::size_t x = 0; x < ow; ++x) out[y * ow + x] = src[sy * w + index(x, w, ow)];
  }
  return out;
}

CtVolume resize_slices(const CtVolume& v, std::size_t size) {
  if (v.h < 2 || v.w < 2) throw InputError("resize_slices: slices must be at least 2x2, got " + v.dims_str());
  CtVolume out(v.d, size, size,
               {v.spacing.sz, v.spacing.sy * static_cast<double>(v.h) / static_cast<double>(size),
                v.spacing.sx * static_cast<double>(v.w) / static_cast<double>(size)});
  for (std::size_t z = 0; z < v.d; ++z) {
    const auto s = resize_bilinear(v.slice(z), v.h, v.w, size, size);
    std::copy(s.begin(), s.end(), out.slice(z));
  }
  return out;
}

LabelVolume resize_slices(const LabelVolume& v, std::size_t size) {
  if (v.h < 2 || v.w < 2) throw InputError("resize_slices: slices must be at least 2x2, got " + v.dims_str());
  LabelVolume out(v.d, size, size,
                  {v.spacing.sz, v.spacing.sy * static_cast<double>(v.h) / static_cast<double>(size),
                   v.spacing.sx * static_cast<double>(v.w) / static_cast<double>(size)});
  for (std::size_t z = 0; z < v.d; ++z) {
    const auto s = resize_nearest(v.slice(z), v.h, v.w, size, size);
    std::copy(s.begin(), s.end(), out.slice(z));
  }
  return out;
}

LabelVolume binarize(const LabelVolume& m) {
  LabelVolume out = m;
  for (auto& x : out.voxels) x = x != 0 ? 1 : 0;
  return out;
}

namespace {

template <typename F>
auto stage(const char* name, F&& f) {
  try {
    return f();
  } catch (const InputError& e) {
    throw InputError(std::string(name) + ": " + e.what());
  } catch (const ParameterError& e) {
    throw ParameterError(std::string(name) + ": " + e.what());
  } catch (const ShapeError& e) {
    throw ShapeError(std::string(name) + ": " + e.what());
  }
}

}  // namespace

CtVolume preprocess_image(const CtVolume& image, const PreprocessConfig& cfg) {
  cfg.validate();
  CtVolume v = stage("window", [&] { return hu_window(image, cfg.hu_lo, cfg.hu_hi); });
  v = stage("equalize", [&] { return hist_equalize(v, cfg.hist_bins); });
  v = stage("resample", [&] { return resample_z(v, cfg.target_sz); });
  return stage("resize", [&] { return resize_slices(v, cfg.slice_size); });
}

std::vector<SlicePair> preprocess_case(const CtVolume& image, const LabelVolume& mask, const std::string& case_id,
                                       const PreprocessConfig& cfg) {
  cfg.validate();
  stage("input", [&] {
    require_same_dims(image, mask, "image/mask");
    if (!(image.spacing == mask.spacing)) throw ShapeError("image and mask spacing differ");
    return 0;
  });
  CtVolume v = stage("window", [&] { return hu_window(image, cfg.hu_lo, cfg.hu_hi); });
  v = stage("equalize", [&] { return hist_equalize(v, cfg.hist_bins); });
  v = stage("resample", [&] { return resample_z(v, cfg.target_sz); });
  LabelVolume m = stage("resample", [&] { return resample_z(binarize(mask), cfg.target_sz); });
  CropResult crop = stage("crop", [&] { return crop_liver_range(v, m, cfg.crop_margin); });
  CtVolume img = stage("resize", [&] { return resize_slices(crop.image, cfg.slice_size); });
  LabelVolume msk = stage("resize", [&] { return resize_slices(crop.mask, cfg.slice_size); });

  std::vector<SlicePair> out;
  out.reserve(img.d);
  for (std::size_t z = 0; z < img.d; ++z) {
    SlicePair p;
    p.size = cfg.slice_size;
    p.image.assign(img.slice(z), img.slice(z) + img.slice_size());
    p.mask.assign(msk.slice(z), msk.slice(z) + msk.slice_size());
    p.case_id = case_id;
    p.slice_index = crop.first + z;
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace earu
