#include "earu/tensor.hpp"

#include <cstring>

namespace earu {

std::string Shape::str() const {
  return "(" + std::to_string(n) + ", " + std::to_string(c) + ", " + std::to_string(h) + ", " +
         std::to_string(w) + ")";
}

void require_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (!(a == b)) {
    throw ShapeError(std::string(what) + ": shape mismatch " + a.str() + " vs " + b.str());
  }
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] + b[i];
  return out;
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.n != sb.n || sa.h != sb.h || sa.w != sb.w) {
    throw ShapeError("concat_channels: shape mismatch " + sa.str() + " vs " + sb.str());
  }
  Tensor<T> out(Shape{sa.n, sa.c + sb.c, sa.h, sa.w});
  const std::size_t pa = sa.c * sa.plane();
  const std::size_t pb = sb.c * sb.plane();
  for (std::size_t n = 0; n < sa.n; ++n) {
    T* dst = out.plane(n, 0);
    std::memcpy(dst, a.data() + n * pa, pa * sizeof(T));
    std::memcpy(dst + pa, b.data() + n * pb, pb * sizeof(T));
  }
  return out;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& g, std::size_t first_channels) {
  const Shape& s = g.shape();
  if (first_channels > s.c) {
    throw ShapeError("split_channels: " + std::to_string(first_channels) + " exceeds " + s.str());
  }
  Tensor<T> a(Shape{s.n, first_channels, s.h, s.w});
  Tensor<T> b(Shape{s.n, s.c - first_channels, s.h, s.w});
  const std::size_t pa = first_channels * s.plane();
  const std::size_t pb = (s.c - first_channels) * s.plane();
  for (std::size_t n = 0; n < s.n; ++n) {
    const T* src = g.plane(n, 0);
    std::memcpy(a.data() + n * pa, src, pa * sizeof(T));
    std::memcpy(b.data() + n * pb, src + pa, pb * sizeof(T));
  }
  return {std::move(a), std::move(b)};
}

template <typename T>
Tensor<T> concat_batch(std::span<const Tensor<T>> parts) {
  if (parts.empty()) return {};
  Shape s = parts[0].shape();
  std::size_t total = 0;
  for (const auto& p : parts) {
    const Shape& ps = p.shape();
    if (ps.c != s.c || ps.h != s.h || ps.w != s.w) {
      throw ShapeError("concat_batch: shape mismatch " + s.str() + " vs " + ps.str());
    }
    total += ps.n;
  }
  s.n = total;
  Tensor<T> out(s);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    std::memcpy(out.data() + offset, p.data(), p.numel() * sizeof(T));
    offset += p.numel();
  }
  return out;
}

template <typename T>
Tensor<T> slice_batch(const Tensor<T>& x, std::size_t begin, std::size_t count) {
  const Shape& s = x.shape();
  if (begin + count > s.n) {
    throw ShapeError("slice_batch: range exceeds batch of " + s.str());
  }
  Tensor<T> out(Shape{count, s.c, s.h, s.w});
  const std::size_t per = s.c * s.plane();
  std::memcpy(out.data(), x.data() + begin * per, count * per * sizeof(T));
  return out;
}

#define EARU_INSTANTIATE(T)                                                                  \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> concat_channels(const Tensor<T>&, const Tensor<T>&);                    \
  template std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>&, std::size_t);    \
  template Tensor<T> concat_batch(std::span<const Tensor<T>>);                               \
  template Tensor<T> slice_batch(const Tensor<T>&, std::size_t, std::size_t);

EARU_INSTANTIATE(float)
EARU_INSTANTIATE(double)
#undef EARU_INSTANTIATE

}  // namespace earu
