#include <algorithm>
#include <cstring>
#include <vector>

#include "earu/ops.hpp"

namespace earu {
namespace {

struct ConvGeometry {
  std::size_t in_c, in_h, in_w;
  std::size_t out_c, out_h, out_w;
  std::size_t kh, kw, stride, pad, groups;
  std::size_t cin_g() const { return in_c / groups; }
  std::size_t cout_g() const { return out_c / groups; }
  std::size_t patch() const { return cin_g() * kh * kw; }
  std::size_t pixels() const { return out_h * out_w; }
  bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
  bool depthwise() const { return groups == in_c && groups == out_c; }
};

template <typename T>
ConvGeometry geometry(const Tensor<T>& x, const ConvParams<T>& p) {
  p.validate();
  const Shape& s = x.shape();
  if (s.c != p.in_channels()) {
    throw ShapeError("conv2d: input " + s.str() + " incompatible with weight " + p.weight.shape().str() +
                     " and groups=" + std::to_string(p.groups));
  }
  const Shape out = conv2d_output_shape(s, p.weight.shape(), p.stride, p.padding, p.groups);
  return ConvGeometry{s.c, s.h, s.w, out.c, out.h, out.w, p.kernel_h(), p.kernel_w(), p.stride, p.padding,
                      p.groups};
}

std::size_t tile_pixels(const ConvGeometry& g) {
  const std::size_t budget = std::size_t{1} << 19;
  return std::clamp<std::size_t>(budget / std::max<std::size_t>(g.patch(), 1), 64, std::max<std::size_t>(g.pixels(), 1));
}

// Calls f(q, iy, ix) for output pixels p0..p0+count-1 at kernel offset
// (ky, kx); iy/ix may fall outside the input.
template <typename F>
void for_each_tap(const ConvGeometry& g, std::size_t p0, std::size_t count, std::size_t ky, std::size_t kx, F&& f) {
  std::size_t oy = p0 / g.out_w;
  std::size_t ox = p0 % g.out_w;
  for (std::size_t q = 0; q < count;) {
    const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
    const std::size_t run = std::min(count - q, g.out_w - ox);
    long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
    for (std::size_t r = 0; r < run; ++r, ix += static_cast<long>(g.stride)) f(q + r, iy, ix);
    q += run;
    ox = 0;
    ++oy;
  }
}

// cols[r * count + q] for patch row r = (ci, ky, kx) and output pixel p0 + q.
template <typename T>
void im2col(const T* x, const ConvGeometry& g, std::size_t p0, std::size_t count, T* cols) {
  const std::size_t kk = g.kh * g.kw;
  const long h = static_cast<long>(g.in_h);
  const long w = static_cast<long>(g.in_w);
  for (std::size_t ci = 0; ci < g.cin_g(); ++ci) {
    const T* plane = x + ci * g.in_h * g.in_w;
    for (std::size_t k = 0; k < kk; ++k) {
      T* row = cols + (ci * kk + k) * count;
      for_each_tap(g, p0, count, k / g.kw, k % g.kw, [&](std::size_t q, long iy, long ix) {
        row[q] = (iy >= 0 && ix >= 0 && iy < h && ix < w) ? plane[iy * w + ix] : T(0);
      });
    }
  }
}

// Transposed layout: colsT[q * patch + r].
template <typename T>
void im2col_transposed(const T* x, const ConvGeometry& g, std::size_t p0, std::size_t count, T* cols_t) {
  const std::size_t kk = g.kh * g.kw;
  const std::size_t patch = g.patch();
  for (std::size_t q = 0; q < count; ++q) {
    const std::size_t pix = p0 + q;
    const long oy = static_cast<long>((pix / g.out_w) * g.stride) - static_cast<long>(g.pad);
    const long ox = static_cast<long>((pix % g.out_w) * g.stride) - static_cast<long>(g.pad);
    T* dst = cols_t + q * patch;
    for (std::size_t ci = 0; ci < g.cin_g(); ++ci) {
      const T* plane = x + ci * g.in_h * g.in_w;
      for (std::size_t k = 0; k < kk; ++k) {
        const long iy = oy + static_cast<long>(k / g.kw);
        const long ix = ox + static_cast<long>(k % g.kw);
        dst[ci * kk + k] = (iy >= 0 && ix >= 0 && iy < static_cast<long>(g.in_h) && ix < static_cast<long>(g.in_w))
                               ? plane[iy * g.in_w + ix]
                               : T(0);
      }
    }
  }
}

template <typename T>
void col2im_accumulate(const T* cols, const ConvGeometry& g, std::size_t p0, std::size_t count, T* gx) {
  const std::size_t kk = g.kh * g.kw;
  const long h = static_cast<long>(g.in_h);
  const long w = static_cast<long>(g.in_w);
  for (std::size_t ci = 0; ci < g.cin_g(); ++ci) {
    T* plane = gx + ci * g.in_h * g.in_w;
    for (std::size_t k = 0; k < kk; ++k) {
      const T* row = cols + (ci * kk + k) * count;
      for_each_tap(g, p0, count, k / g.kw, k % g.kw, [&](std::size_t q, long iy, long ix) {
        if (iy >= 0 && ix >= 0 && iy < h && ix < w) plane[iy * w + ix] += row[q];
      });
    }
  }
}

template <typename T>
void transpose(const T* src, std::size_t rows, std::size_t cols, T* dst) {
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
}

// Output columns [lo, hi) whose tap at kernel column kx lands inside the input.
inline std::pair<std::size_t, std::size_t> valid_columns(const ConvGeometry& g, std::size_t kx) {
  std::size_t lo = 0;
  if (g.pad > kx) lo = (g.pad - kx + g.stride - 1) / g.stride;
  const long last = static_cast<long>(g.in_w) - 1 + static_cast<long>(g.pad) - static_cast<long>(kx);
  std::size_t hi = last < 0 ? 0 : std::min<std::size_t>(g.out_w, static_cast<std::size_t>(last) / g.stride + 1);
  return {std::min(lo, hi), hi};
}

template <typename T>
void depthwise_forward(const T* x, const T* w, const ConvGeometry& g, T* out) {
  for (std::size_t c = 0; c < g.in_c; ++c) {
    const T* plane = x + c * g.in_h * g.in_w;
    const T* kern = w + c * g.kh * g.kw;
    T* dst = out + c * g.pixels();
    std::fill(dst, dst + g.pixels(), T(0));
    for (std::size_t oy = 0; oy < g.out_h; ++oy) {
      T* orow = dst + oy * g.out_w;
      for (std::size_t ky = 0; ky < g.kh; ++ky) {
        const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
        if (iy < 0 || iy >= static_cast<long>(g.in_h)) continue;
        const T* irow = plane + iy * static_cast<long>(g.in_w);
        for (std::size_t kx = 0; kx < g.kw; ++kx) {
          const T k = kern[ky * g.kw + kx];
          const auto [lo, hi] = valid_columns(g, kx);
          const T* src = irow + static_cast<long>(kx) - static_cast<long>(g.pad);
          if (g.stride == 1) {
            for (std::size_t ox = lo; ox < hi; ++ox) orow[ox] += src[ox] * k;
          } else {
            for (std::size_t ox = lo; ox < hi; ++ox) orow[ox] += src[ox * g.stride] * k;
          }
        }
      }
    }
  }
}

template <typename T>
void depthwise_backward(const T* x, const T* w, const T* gout, const ConvGeometry& g, T* gx, T* gw) {
  for (std::size_t c = 0; c < g.in_c; ++c) {
    const T* plane = x + c * g.in_h * g.in_w;
    const T* kern = w + c * g.kh * g.kw;
    const T* go = gout + c * g.pixels();
    T* gplane = gx + c * g.in_h * g.in_w;
    T* gk = gw + c * g.kh * g.kw;
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const T k = kern[ky * g.kw + kx];
        const auto [lo, hi] = valid_columns(g, kx);
        T acc = T(0);
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.in_h)) continue;
          const long off = iy * static_cast<long>(g.in_w) + static_cast<long>(kx) - static_cast<long>(g.pad);
          const T* src = plane + off;
          T* gsrc = gplane + off;
          const T* grow = go + oy * g.out_w;
          for (std::size_t ox = lo; ox < hi; ++ox) {
            acc += grow[ox] * src[ox * g.stride];
            gsrc[ox * g.stride] += grow[ox] * k;
          }
        }
        gk[ky * g.kw + kx] += acc;
      }
    }
  }
}

}  // namespace

template <typename T>
void ConvParams<T>::validate() const {
  const Shape& ws = weight.shape();
  if (groups == 0 || stride == 0) throw ConfigError("conv: groups and stride must be positive");
  if (ws.n % groups != 0) {
    throw ConfigError("conv: out channels " + std::to_string(ws.n) + " not divisible by groups " +
                      std::to_string(groups));
  }
  if (bias && bias->numel() != ws.n) {
    throw ShapeError("conv: bias length " + std::to_string(bias->numel()) + " for weight " + ws.str());
  }
}

Shape conv2d_output_shape(const Shape& x, const Shape& weight, std::size_t stride, std::size_t padding,
                          std::size_t groups) {
  const std::size_t ph = x.h + 2 * padding;
  const std::size_t pw = x.w + 2 * padding;
  if (weight.h > ph || weight.w > pw || weight.h == 0 || weight.w == 0) {
    throw ShapeError("conv2d: kernel " + weight.str() + " does not fit padded input " + x.str());
  }
  if (x.c != weight.c * groups) {
    throw ShapeError("conv2d: input " + x.str() + " incompatible with weight " + weight.str());
  }
  return Shape{x.n, weight.n, (ph - weight.h) / stride + 1, (pw - weight.w) / stride + 1};
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const ConvParams<T>& p) {
  const ConvGeometry g = geometry(x, p);
  const std::size_t batch = x.shape().n;
  Tensor<T> out(Shape{batch, g.out_c, g.out_h, g.out_w});
  const std::size_t in_per = g.in_c * g.in_h * g.in_w;
  const std::size_t out_per = g.out_c * g.pixels();
  const std::size_t npix = g.pixels();

  if (g.depthwise() && p.weight.shape().c == 1) {
    for (std::size_t n = 0; n < batch; ++n) {
      depthwise_forward(x.data() + n * in_per, p.weight.data(), g, out.data() + n * out_per);
    }
  } else {
    const std::size_t patch = g.patch();
    const std::size_t tile = tile_pixels(g);
    std::vector<T> cols(g.pointwise() ? 0 : patch * tile);
    for (std::size_t n = 0; n < batch; ++n) {
      for (std::size_t grp = 0; grp < g.groups; ++grp) {
        const T* xin = x.data() + n * in_per + grp * g.cin_g() * g.in_h * g.in_w;
        const T* w = p.weight.data() + grp * g.cout_g() * patch;
        T* dst = out.data() + n * out_per + grp * g.cout_g() * npix;
        if (g.pointwise()) {
          gemm_accumulate(g.cout_g(), npix, patch, w, patch, xin, npix, dst, npix);
          continue;
        }
        for (std::size_t p0 = 0; p0 < npix; p0 += tile) {
          const std::size_t count = std::min(tile, npix - p0);
          im2col(xin, g, p0, count, cols.data());
          gemm_accumulate(g.cout_g(), count, patch, w, patch, cols.data(), count, dst + p0, npix);
        }
      }
    }
  }
  if (p.bias) {
    for (std::size_t n = 0; n < batch; ++n)
      for (std::size_t o = 0; o < g.out_c; ++o) {
        const T b = (*p.bias)[o];
        T* dst = out.plane(n, o);
        for (std::size_t i = 0; i < npix; ++i) dst[i] += b;
      }
  }
  return out;
}

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& x, const ConvParams<T>& p, const Tensor<T>& grad_out) {
  const ConvGeometry g = geometry(x, p);
  const std::size_t batch = x.shape().n;
  require_same_shape(grad_out.shape(), Shape{batch, g.out_c, g.out_h, g.out_w}, "conv2d_backward grad_out");

  ConvGrads<T> grads{Tensor<T>(x.shape()), Tensor<T>(p.weight.shape()), std::nullopt};
  const std::size_t in_per = g.in_c * g.in_h * g.in_w;
  const std::size_t out_per = g.out_c * g.pixels();
  const std::size_t npix = g.pixels();

  if (p.bias) {
    Tensor<T> gb(p.bias->shape());
    for (std::size_t o = 0; o < g.out_c; ++o) {
      double acc = 0.0;
      for (std::size_t n = 0; n < batch; ++n) {
        const T* src = grad_out.plane(n, o);
        for (std::size_t i = 0; i < npix; ++i) acc += src[i];
      }
      gb[o] = static_cast<T>(acc);
    }
    grads.grad_bias = std::move(gb);
  }

  if (g.depthwise() && p.weight.shape().c == 1) {
    for (std::size_t n = 0; n < batch; ++n) {
      depthwise_backward(x.data() + n * in_per, p.weight.data(), grad_out.data() + n * out_per, g,
                         grads.grad_x.data() + n * in_per, grads.grad_weight.data());
    }
    return grads;
  }

  const std::size_t patch = g.patch();
  const std::size_t tile = tile_pixels(g);
  const std::size_t mg = g.cout_g();
  std::vector<T> cols_t(patch * tile);
  std::vector<T> gcols(patch * tile);
  std::vector<T> w_t(patch * mg);
  for (std::size_t grp = 0; grp < g.groups; ++grp) {
    const T* w = p.weight.data() + grp * mg * patch;
    T* gw = grads.grad_weight.data() + grp * mg * patch;
    transpose(w, mg, patch, w_t.data());
    for (std::size_t n = 0; n < batch; ++n) {
      const T* xin = x.data() + n * in_per + grp * g.cin_g() * g.in_h * g.in_w;
      const T* go = grad_out.data() + n * out_per + grp * mg * npix;
      T* gx = grads.grad_x.data() + n * in_per + grp * g.cin_g() * g.in_h * g.in_w;
      for (std::size_t p0 = 0; p0 < npix; p0 += tile) {
        const std::size_t count = std::min(tile, npix - p0);
        // dW += G[:, tile] * cols^T
        im2col_transposed(xin, g, p0, count, cols_t.data());
        gemm_accumulate(mg, patch, count, go + p0, npix, cols_t.data(), patch, gw, patch);
        // dcols = W^T * G[:, tile]
        if (g.pointwise()) {
          std::vector<T> block(patch * count, T(0));
          gemm_accumulate(patch, count, mg, w_t.data(), mg, go + p0, npix, block.data(), count);
          for (std::size_t r = 0; r < patch; ++r)
            for (std::size_t q = 0; q < count; ++q) gx[r * npix + p0 + q] += block[r * count + q];
        } else {
          std::fill(gcols.begin(), gcols.begin() + patch * count, T(0));
          gemm_accumulate(patch, count, mg, w_t.data(), mg, go + p0, npix, gcols.data(), count);
          col2im_accumulate(gcols.data(), g, p0, count, gx);
        }
      }
    }
  }
  return grads;
}

template struct ConvParams<float>;
template struct ConvParams<double>;
template Tensor<float> conv2d(const Tensor<float>&, const ConvParams<float>&);
template Tensor<double> conv2d(const Tensor<double>&, const ConvParams<double>&);
template ConvGrads<float> conv2d_backward(const Tensor<float>&, const ConvParams<float>&, const Tensor<float>&);
template ConvGrads<double> conv2d_backward(const Tensor<double>&, const ConvParams<double>&,
                                           const Tensor<double>&);

}  // namespace earu
