#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "earu/augment.hpp"
#include "support.hpp"

using namespace earu;

namespace {

SlicePair disc_pair(std::size_t n) {
  SlicePair p;
  p.size = n;
  p.image.resize(n * n);
  p.mask.resize(n * n);
  p.case_id = "c";
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) {
      const double dy = double(y) - 0.4 * n, dx = double(x) - 0.3 * n;
      const bool in = dy * dy + dx * dx < 0.06 * n * n;
      p.mask[y * n + x] = in;
      p.image[y * n + x] = in ? 0.8f : static_cast<float>(x) / float(n);
    }
  return p;
}

}  // namespace

TEST_CASE("augmentation tags round trip") {
  for (unsigned f = 0; f < 8; ++f) CHECK(augment_flags_from_tag(augment_tag(f)) == f);
  CHECK(augment_tag(kZoom | kElastic) == "zoom+elastic");
  CHECK(augment_tag(0) == "none");
  CHECK_THROWS_AS(augment_flags_from_tag("rotate"), ParameterError);
}

TEST_CASE("warp fields") {
  const auto id = WarpField::identity(4);
  CHECK(id.src_x[5] == 1.0);
  CHECK(id.src_y[5] == 1.0);
  const auto fl = flip_field(4);
  CHECK(fl.src_x[0] == 3.0);
  CHECK(fl.src_x[7] == 0.0);
  const auto z1 = zoom_field(6, 1.0);
  for (std::size_t i = 0; i < 36; ++i) CHECK(z1.src_x[i] == doctest::Approx(WarpField::identity(6).src_x[i]));
  // Zooming in by 2 halves offsets from the centre (pixel-centre convention).
  const auto z2 = zoom_field(8, 2.0);
  CHECK(z2.src_x[0] == doctest::Approx((0.5 - 4.0) / 2.0 + 4.0 - 0.5));
  CHECK_THROWS_AS(zoom_field(8, 0.0), ParameterError);

  Rng a(1), b(1);
  const auto e0 = elastic_field(16, 4.0, 0.0, a);
  CHECK(e0.src_x == WarpField::identity(16).src_x);
  elastic_field(16, 4.0, 10.0, b);
  CHECK(a == b);
  Rng c(2);
  const auto e = elastic_field(16, 3.0, 5.0, c);
  double max_off = 0;
  for (std::size_t i = 0; i < e.src_x.size(); ++i) max_off = std::max(max_off, std::fabs(e.src_x[i] - double(i % 16)));
  CHECK(max_off > 0.0);
  CHECK(max_off <= 5.0);
}

TEST_CASE("flip mirrors image and mask identically") {
  const auto p = disc_pair(12);
  Rng rng(3);
  const auto f = augment(p, kFlip, AugmentConfig{}, rng);
  CHECK(f.augmentation == "flip");
  for (std::size_t y = 0; y < 12; ++y)
    for (std::size_t x = 0; x < 12; ++x) {
      CHECK(f.image[y * 12 + x] == p.image[y * 12 + 11 - x]);
      CHECK(f.mask[y * 12 + x] == p.mask[y * 12 + 11 - x]);
    }
  const auto ff = augment(f, kFlip, AugmentConfig{}, rng);
  CHECK(ff.image == p.image);
  CHECK(ff.mask == p.mask);
}

TEST_CASE("warping keeps ranges and binary masks") {
  const auto p = disc_pair(32);
  AugmentConfig cfg;
  cfg.elastic_sigma = 3.0;
  cfg.elastic_alpha = 6.0;
  Rng rng(4);
  for (unsigned flags = 1; flags < 8; ++flags) {
    const auto a = augment(p, flags, cfg, rng);
    CHECK(a.augmentation == augment_tag(flags));
    CHECK(a.size == 32);
    CHECK(a.case_id == p.case_id);
    CHECK(std::all_of(a.mask.begin(), a.mask.end(), [](std::uint8_t m) { return m <= 1; }));
    CHECK(std::all_of(a.image.begin(), a.image.end(), [](float v) { return v >= 0.0f && v <= 1.0f; }));
    // The shared map keeps the disc's intensity under the warped mask.
    std::size_t inside = 0, bright = 0;
    for (std::size_t i = 0; i < a.mask.size(); ++i)
      if (a.mask[i]) ++inside, bright += a.image[i] > 0.6f;
    CHECK(inside > 0);
    CHECK(double(bright) / double(inside) > 0.9);
  }
  CHECK_THROWS_AS(augment(p, 0, cfg, rng), ParameterError);
}

TEST_CASE("expanding all combinations is seeded") {
  const std::vector<SlicePair> in{disc_pair(16), disc_pair(16)};
  AugmentConfig cfg;
  cfg.elastic_sigma = 2.0;
  cfg.elastic_alpha = 3.0;
  Rng a(5), b(5);
  const auto x = expand_all_combinations(in, cfg, a);
  const auto y = expand_all_combinations(in, cfg, b);
  CHECK(x.size() == 16);
  CHECK(x == y);
  std::set<std::string> tags;
  for (std::size_t i = 0; i < 8; ++i) tags.insert(x[i].augmentation);
  CHECK(tags.size() == 8);
  CHECK(x[0].augmentation == "none");
  CHECK(x[0].image == in[0].image);
}

TEST_CASE("augment config validation") {
  AugmentConfig c;
  CHECK_NOTHROW(c.validate());
  c.zoom_min = 1.2;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.elastic_sigma = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}
