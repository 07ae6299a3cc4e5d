#include "earu/augment.hpp"

#include <algorithm>
#include <cmath>

namespace earu {

void AugmentConfig::validate() const {
  if (!(zoom_min > 0.0 && zoom_min <= zoom_max)) throw ConfigError("augment: need 0 < zoom_min <= zoom_max");
  if (!(elastic_sigma > 0.0)) throw ConfigError("augment: elastic_sigma must be positive");
  if (!(elastic_alpha >= 0.0)) throw ConfigError("augment: elastic_alpha must be non-negative");
}

std::string augment_tag(unsigned flags) {
  std::string tag;
  auto add = [&](const char* s) {
    if (!tag.empty()) tag += '+';
    tag += s;
  };
  if (flags & kZoom) add("zoom");
  if (flags & kFlip) add("flip");
  if (flags & kElastic) add("elastic");
  return tag.empty() ? "none" : tag;
}

unsigned augment_flags_from_tag(const std::string& tag) {
  if (tag == "none") return 0;
  unsigned flags = 0;
  std::size_t start = 0;
  while (start <= tag.size()) {
    const std::size_t end = std::min(tag.find('+', start), tag.size());
    const std::string part = tag.substr(start, end - start);
    if (part == "zoom") flags |= kZoom;
    else if (part == "flip") flags |= kFlip;
    else if (part == "elastic") flags |= kElastic;
    else throw ParameterError("unknown augmentation '" + part + "'");
    start = end + 1;
  }
  return flags;
}

WarpField WarpField::identity(std::size_t size) {
  WarpField f;
  f.size = size;
  f.src_y.resize(size * size);
  f.src_x.resize(size * size);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      f.src_y[y * size + x] = static_cast<double>(y);
      f.src_x[y * size + x] = static_cast<double>(x);
    }
  return f;
}

WarpField zoom_field(std::size_t size, double scale) {
  if (!(scale > 0.0)) throw ParameterError("zoom: scale must be positive");
  WarpField f = WarpField::identity(size);
  const double c = static_cast<double>(size) / 2.0;
  for (std::size_t i = 0; i < f.src_y.size(); ++i) {
    f.src_y[i] = (f.src_y[i] + 0.5 - c) / scale + c - 0.5;
    f.src_x[i] = (f.src_x[i] + 0.5 - c) / scale + c - 0.5;
  }
  return f;
}

WarpField flip_field(std::size_t size) {
  WarpField f = WarpField::identity(size);
  for (auto& x : f.src_x) x = static_cast<double>(size - 1) - x;
  return f;
}

namespace {

std::vector<double> gaussian_kernel(double sigma) {
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
    sum += k[i + radius];
  }
  for (auto& v : k) v /= sum;
  return k;
}

// Separable smoothing with edge clamping.
void smooth(std::vector<double>& field, std::size_t size, const std::vector<double>& k) {
  const long radius = static_cast<long>(k.size() / 2);
  const long n = static_cast<long>(size);
  std::vector<double> tmp(field.size());
  for (long y = 0; y < n; ++y)
    for (long x = 0; x < n; ++x) {
      double acc = 0.0;
      for (long t = -radius; t <= radius; ++t) acc += k[t + radius] * field[y * n + std::clamp(x + t, 0L, n - 1)];
      tmp[y * n + x] = acc;
    }
  for (long y = 0; y < n; ++y)
    for (long x = 0; x < n; ++x) {
      double acc = 0.0;
      for (long t = -radius; t <= radius; ++t) acc += k[t + radius] * tmp[std::clamp(y + t, 0L, n - 1) * n + x];
      field[y * n + x] = acc;
    }
}

}  // namespace

WarpField elastic_field(std::size_t size, double sigma, double alpha, Rng& rng) {
  WarpField f = WarpField::identity(size);
  std::vector<double> dy(size * size), dx(size * size);
  for (auto& v : dy) v = rng.uniform(-1.0, 1.0);
  for (auto& v : dx) v = rng.uniform(-1.0, 1.0);
  if (alpha == 0.0) return f;
  const auto k = gaussian_kernel(sigma);
  smooth(dy, size, k);
  smooth(dx, size, k);
  for (std::size_t i = 0; i < f.src_y.size(); ++i) {
    f.src_y[i] += alpha * dy[i];
    f.src_x[i] += alpha * dx[i];
  }
  return f;
}

std::vector<float> warp_image(const std::vector<float>& img, const WarpField& f) {
  const std::size_t n = f.size;
  if (img.size() != n * n) throw ShapeError("warp_image: image size does not match field");
  std::vector<float> out(n * n);
  const double hi = static_cast<double>(n - 1);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double sy = std::clamp(f.src_y[i], 0.0, hi);
    const double sx = std::clamp(f.src_x[i], 0.0, hi);
    const std::size_t y0 = static_cast<std::size_t>(std::floor(sy));
    const std::size_t x0 = static_cast<std::size_t>(std::floor(sx));
    const std::size_t y1 = std::min(y0 + 1, n - 1);
    const std::size_t x1 = std::min(x0 + 1, n - 1);
    const double ty = sy - static_cast<double>(y0);
    const double tx = sx - static_cast<double>(x0);
    const double top = (1.0 - tx) * img[y0 * n + x0] + tx * img[y0 * n + x1];
    const double bot = (1.0 - tx) * img[y1 * n + x0] + tx * img[y1 * n + x1];
    out[i] = static_cast<float>((1.0 - ty) * top + ty * bot);
  }
  return out;
}

std::vector<std::uint8_t> warp_mask(const std::vector<std::uint8_t>& mask, const WarpField& f) {
  const std::size_t n = f.size;
  if (mask.size() != n * n) throw ShapeError("warp_mask: mask size does not match field");
  std::vector<std::uint8_t> out(n * n);
  const double hi = static_cast<double>(n - 1);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto y = static_cast<std::size_t>(std::floor(std::clamp(f.src_y[i], 0.0, hi) + 0.5));
    const auto x = static_cast<std::size_t>(std::floor(std::clamp(f.src_x[i], 0.0, hi) + 0.5));
    out[i] = mask[std::min(y, n - 1) * n + std::min(x, n - 1)];
  }
  return out;
}

SlicePair augment(const SlicePair& p, unsigned flags, const AugmentConfig& cfg, Rng& rng) {
  cfg.validate();
  if ((flags & (kZoom | kFlip | kElastic)) == 0) throw ParameterError("augment: empty augmentation set");
  if (p.image.size() != p.size * p.size || p.mask.size() != p.size * p.size) {
    throw ShapeError("augment: slice buffers do not match size " + std::to_string(p.size));
  }
  SlicePair out = p;
  auto apply = [&](const WarpField& f) {
    out.image = warp_image(out.image, f);
    out.mask = warp_mask(out.mask, f);
  };
  if (flags & kZoom) apply(zoom_field(p.size, rng.uniform(cfg.zoom_min, cfg.zoom_max)));
  if (flags & kFlip) apply(flip_field(p.size));
  if (flags & kElastic) apply(elastic_field(p.size, cfg.elastic_sigma, cfg.elastic_alpha, rng));
  out.augmentation = augment_tag(flags);
  return out;
}

std::vector<SlicePair> expand_all_combinations(const std::vector<SlicePair>& pairs, const AugmentConfig& cfg,
                                               Rng& rng) {
  std::vector<SlicePair> out;
  out.reserve(pairs.size() * 8);
  for (const auto& p : pairs) {
    out.push_back(p);
    for (unsigned flags = 1; flags < 8; ++flags) out.push_back(augment(p, flags, cfg, rng));
  }
  return out;
}

}  // namespace earu
