#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "earu/errors.hpp"

namespace earu {

/// Physical voxel size in millimetres, slice axis first.
struct Spacing {
  double sz = 1.0;
  double sy = 1.0;
  double sx = 1.0;

  bool operator==(const Spacing&) const = default;
  bool positive() const { return sz > 0.0 && sy > 0.0 && sx > 0.0; }
};

/// Dense 3-D volume stored slice-major (x fastest).
template <typename T>
struct Volume {
  std::size_t d = 0;
  std::size_t h = 0;
  std::size_t w = 0;
  Spacing spacing;
  std::vector<T> voxels;

  Volume() = default;
  Volume(std::size_t d_, std::size_t h_, std::size_t w_, Spacing s = {}, T fill = T(0))
      : d(d_), h(h_), w(w_), spacing(s), voxels(d_ * h_ * w_, fill) {}

  std::size_t size() const { return d * h * w; }
  std::size_t slice_size() const { return h * w; }
  std::size_t index(std::size_t z, std::size_t y, std::size_t x) const { return (z * h + y) * w + x; }
  T& at(std::size_t z, std::size_t y, std::size_t x) { return voxels[index(z, y, x)]; }
  T at(std::size_t z, std::size_t y, std::size_t x) const { return voxels[index(z, y, x)]; }
  T* slice(std::size_t z) { return voxels.data() + z * slice_size(); }
  const T* slice(std::size_t z) const { return voxels.data() + z * slice_size(); }

  bool same_dims(std::size_t d_, std::size_t h_, std::size_t w_) const { return d == d_ && h == h_ && w == w_; }
  template <typename U>
  bool same_dims(const Volume<U>& o) const { return same_dims(o.d, o.h, o.w); }

  std::string dims_str() const {
    return "(" + std::to_string(d) + ", " + std::to_string(h) + ", " + std::to_string(w) + ")";
  }

  bool operator==(const Volume&) const = default;
};

/// CT intensities: HU before windowing, [0, 1] afterwards.
using CtVolume = Volume<float>;
/// Binary mask, voxels in {0, 1}.
using LabelVolume = Volume<std::uint8_t>;

template <typename A, typename B>
void require_same_dims(const Volume<A>& a, const Volume<B>& b, const char* what) {
  if (!a.same_dims(b)) {
    throw ShapeError(std::string(what) + ": dims " + a.dims_str() + " vs " + b.dims_str());
  }
}

}  // namespace earu
