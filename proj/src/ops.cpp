#include <algorithm>
#include <cmath>
#include <limits>

#include "earu/ops.hpp"

namespace earu {
namespace {

template <typename T>
T clamp_open_unit(double v) {
  // Keeps sigmoid outputs strictly inside (0, 1) after rounding to T.
  constexpr T lo = std::numeric_limits<T>::min();
  constexpr T hi = T(1) - std::numeric_limits<T>::epsilon() / T(2);
  return std::clamp(static_cast<T>(v), lo, hi);
}

struct Lerp {
  std::size_t i0, i1;
  double frac;
};

std::vector<Lerp> upsample_taps(std::size_t n) {
  std::vector<Lerp> taps(2 * n);
  const double hi = static_cast<double>(n - 1);
  for (std::size_t o = 0; o < 2 * n; ++o) {
    const double src = std::clamp((static_cast<double>(o) + 0.5) / 2.0 - 0.5, 0.0, hi);
    const auto i0 = static_cast<std::size_t>(std::floor(src));
    taps[o] = Lerp{i0, std::min(i0 + 1, n - 1), src - static_cast<double>(i0)};
  }
  return taps;
}

}  // namespace

double sigmoid(double t) {
  if (t >= 0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

template <typename T>
BatchNormState<T> BatchNormState<T>::identity(std::size_t channels, double eps, double momentum) {
  const Shape s{channels, 1, 1, 1};
  return BatchNormState<T>{Tensor<T>(s, T(1)), Tensor<T>(s, T(0)), Tensor<T>(s, T(0)), Tensor<T>(s, T(1)), eps,
                           momentum};
}

template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& x, BatchNormState<T>& s, Mode mode, BatchNormCache<T>* cache) {
  const Shape& xs = x.shape();
  if (xs.c != s.channels()) {
    throw ShapeError("batchnorm2d: input " + xs.str() + " vs " + std::to_string(s.channels()) + " channels");
  }
  const std::size_t count = xs.n * xs.plane();
  if (mode == Mode::train && count <= 1) {
    throw DegenerateBatchError("batchnorm2d: n*h*w = " + std::to_string(count) +
                               " in train mode; batch variance undefined");
  }
  Tensor<T> out(xs);
  Tensor<T> x_hat;
  if (cache) x_hat = Tensor<T>(xs);
  std::vector<double> inv_std(xs.c);
  for (std::size_t c = 0; c < xs.c; ++c) {
    double mean;
    double var;
    if (mode == Mode::train) {
      double sum = 0.0;
      for (std::size_t n = 0; n < xs.n; ++n) {
        const T* src = x.plane(n, c);
        for (std::size_t i = 0; i < xs.plane(); ++i) sum += src[i];
      }
      mean = sum / static_cast<double>(count);
      double sq = 0.0;
      for (std::size_t n = 0; n < xs.n; ++n) {
        const T* src = x.plane(n, c);
        for (std::size_t i = 0; i < xs.plane(); ++i) {
          const double d = src[i] - mean;
          sq += d * d;
        }
      }
      var = sq / static_cast<double>(count);
      const double unbiased = sq / static_cast<double>(count - 1);
      s.running_mean[c] = static_cast<T>((1.0 - s.momentum) * s.running_mean[c] + s.momentum * mean);
      s.running_var[c] = static_cast<T>((1.0 - s.momentum) * s.running_var[c] + s.momentum * unbiased);
    } else {
      mean = s.running_mean[c];
      var = s.running_var[c];
    }
    const double is = 1.0 / std::sqrt(var + s.eps);
    inv_std[c] = is;
    const double g = s.gamma[c];
    const double b = s.beta[c];
    for (std::size_t n = 0; n < xs.n; ++n) {
      const T* src = x.plane(n, c);
      T* dst = out.plane(n, c);
      T* xh = cache ? x_hat.plane(n, c) : nullptr;
      for (std::size_t i = 0; i < xs.plane(); ++i) {
        const double h = (src[i] - mean) * is;
        if (xh) xh[i] = static_cast<T>(h);
        dst[i] = static_cast<T>(g * h + b);
      }
    }
  }
  if (cache) {
    cache->mode = mode;
    cache->x_hat = std::move(x_hat);
    cache->inv_std = std::move(inv_std);
  }
  return out;
}

template <typename T>
BatchNormGrads<T> batchnorm2d_backward(const BatchNormState<T>& s, const BatchNormCache<T>& cache,
                                       const Tensor<T>& grad_out) {
  const Shape& xs = cache.x_hat.shape();
  require_same_shape(grad_out.shape(), xs, "batchnorm2d_backward");
  BatchNormGrads<T> g{Tensor<T>(xs), Tensor<T>(s.gamma.shape()), Tensor<T>(s.beta.shape())};
  const double count = static_cast<double>(xs.n * xs.plane());
  for (std::size_t c = 0; c < xs.c; ++c) {
    double sum_dy = 0.0;
    double sum_dy_xh = 0.0;
    for (std::size_t n = 0; n < xs.n; ++n) {
      const T* dy = grad_out.plane(n, c);
      const T* xh = cache.x_hat.plane(n, c);
      for (std::size_t i = 0; i < xs.plane(); ++i) {
        sum_dy += dy[i];
        sum_dy_xh += static_cast<double>(dy[i]) * xh[i];
      }
    }
    g.grad_gamma[c] = static_cast<T>(sum_dy_xh);
    g.grad_beta[c] = static_cast<T>(sum_dy);
    const double scale = static_cast<double>(s.gamma[c]) * cache.inv_std[c];
    for (std::size_t n = 0; n < xs.n; ++n) {
      const T* dy = grad_out.plane(n, c);
      const T* xh = cache.x_hat.plane(n, c);
      T* dx = g.grad_x.plane(n, c);
      if (cache.mode == Mode::train) {
        const double mean_dy = sum_dy / count;
        const double mean_dy_xh = sum_dy_xh / count;
        for (std::size_t i = 0; i < xs.plane(); ++i) {
          dx[i] = static_cast<T>(scale * (dy[i] - mean_dy - xh[i] * mean_dy_xh));
        }
      } else {
        for (std::size_t i = 0; i < xs.plane(); ++i) dx[i] = static_cast<T>(scale * dy[i]);
      }
    }
  }
  return g;
}

template <typename T>
Tensor<T> activate(const Tensor<T>& x, Activation kind) {
  Tensor<T> out(x.shape());
  const std::size_t n = x.numel();
  switch (kind) {
    case Activation::relu:
      for (std::size_t i = 0; i < n; ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
      break;
    case Activation::swish:
      for (std::size_t i = 0; i < n; ++i) {
        const double t = x[i];
        out[i] = static_cast<T>(t * sigmoid(t));
      }
      break;
    case Activation::sigmoid:
      for (std::size_t i = 0; i < n; ++i) out[i] = clamp_open_unit<T>(sigmoid(x[i]));
      break;
  }
  return out;
}

template <typename T>
Tensor<T> activate_backward(const Tensor<T>& x, const Tensor<T>& grad_out, Activation kind) {
  require_same_shape(x.shape(), grad_out.shape(), "activate_backward");
  Tensor<T> gx(x.shape());
  const std::size_t n = x.numel();
  switch (kind) {
    case Activation::relu:
      for (std::size_t i = 0; i < n; ++i) gx[i] = x[i] > T(0) ? grad_out[i] : T(0);
      break;
    case Activation::swish:
      for (std::size_t i = 0; i < n; ++i) {
        const double t = x[i];
        const double sg = sigmoid(t);
        gx[i] = static_cast<T>(grad_out[i] * (sg + t * sg * (1.0 - sg)));
      }
      break;
    case Activation::sigmoid:
      for (std::size_t i = 0; i < n; ++i) {
        const double sg = sigmoid(x[i]);
        gx[i] = static_cast<T>(grad_out[i] * sg * (1.0 - sg));
      }
      break;
  }
  return gx;
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  const Shape& s = x.shape();
  if (s.h == 0 || s.w == 0) throw ShapeError("global_avg_pool: empty plane in " + s.str());
  Tensor<T> out(Shape{s.n, s.c, 1, 1});
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c) {
      const T* src = x.plane(n, c);
      double sum = 0.0;
      for (std::size_t i = 0; i < s.plane(); ++i) sum += src[i];
      out.at(n, c, 0, 0) = static_cast<T>(sum / static_cast<double>(s.plane()));
    }
  return out;
}

template <typename T>
Tensor<T> global_avg_pool_backward(const Shape& input_shape, const Tensor<T>& grad_out) {
  require_same_shape(grad_out.shape(), Shape{input_shape.n, input_shape.c, 1, 1}, "global_avg_pool_backward");
  Tensor<T> gx(input_shape);
  const double inv = 1.0 / static_cast<double>(input_shape.plane());
  for (std::size_t n = 0; n < input_shape.n; ++n)
    for (std::size_t c = 0; c < input_shape.c; ++c) {
      const T v = static_cast<T>(grad_out.at(n, c, 0, 0) * inv);
      T* dst = gx.plane(n, c);
      std::fill(dst, dst + input_shape.plane(), v);
    }
  return gx;
}

template <typename T>
Tensor<T> upsample_bilinear_2x(const Tensor<T>& x) {
  const Shape& s = x.shape();
  if (s.h == 0 || s.w == 0) throw ShapeError("upsample_bilinear_2x: empty plane in " + s.str());
  const auto ty = upsample_taps(s.h);
  const auto tx = upsample_taps(s.w);
  Tensor<T> out(Shape{s.n, s.c, 2 * s.h, 2 * s.w});
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c) {
      const T* src = x.plane(n, c);
      T* dst = out.plane(n, c);
      for (std::size_t oy = 0; oy < 2 * s.h; ++oy) {
        const Lerp& ly = ty[oy];
        const T* r0 = src + ly.i0 * s.w;
        const T* r1 = src + ly.i1 * s.w;
        for (std::size_t ox = 0; ox < 2 * s.w; ++ox) {
          const Lerp& lx = tx[ox];
          const double top = r0[lx.i0] + lx.frac * (static_cast<double>(r0[lx.i1]) - r0[lx.i0]);
          const double bot = r1[lx.i0] + lx.frac * (static_cast<double>(r1[lx.i1]) - r1[lx.i0]);
          dst[oy * 2 * s.w + ox] = static_cast<T>(top + ly.frac * (bot - top));
        }
      }
    }
  return out;
}

template <typename T>
Tensor<T> upsample_bilinear_2x_backward(const Shape& input_shape, const Tensor<T>& grad_out) {
  const Shape& s = input_shape;
  require_same_shape(grad_out.shape(), Shape{s.n, s.c, 2 * s.h, 2 * s.w}, "upsample_bilinear_2x_backward");
  const auto ty = upsample_taps(s.h);
  const auto tx = upsample_taps(s.w);
  Tensor<T> gx(s);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c) {
      const T* go = grad_out.plane(n, c);
      T* dst = gx.plane(n, c);
      for (std::size_t oy = 0; oy < 2 * s.h; ++oy) {
        const Lerp& ly = ty[oy];
        for (std::size_t ox = 0; ox < 2 * s.w; ++ox) {
          const Lerp& lx = tx[ox];
          const double g = go[oy * 2 * s.w + ox];
          const double gt = g * (1.0 - ly.frac);
          const double gb = g * ly.frac;
          dst[ly.i0 * s.w + lx.i0] += static_cast<T>(gt * (1.0 - lx.frac));
          dst[ly.i0 * s.w + lx.i1] += static_cast<T>(gt * lx.frac);
          dst[ly.i1 * s.w + lx.i0] += static_cast<T>(gb * (1.0 - lx.frac));
          dst[ly.i1 * s.w + lx.i1] += static_cast<T>(gb * lx.frac);
        }
      }
    }
  return gx;
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const LinearParams<T>& p) {
  const Shape& s = x.shape();
  const std::size_t k = p.in_features();
  const std::size_t m = p.out_features();
  if (s.c * s.plane() != k || p.bias.numel() != m) {
    throw ShapeError("linear: input " + s.str() + " vs weight " + p.weight.shape().str() + " and bias " +
                     p.bias.shape().str());
  }
  Tensor<T> out(Shape{s.n, m, 1, 1});
  for (std::size_t n = 0; n < s.n; ++n) {
    const T* xv = x.data() + n * k;
    for (std::size_t j = 0; j < m; ++j) {
      double acc = p.bias[j];
      for (std::size_t i = 0; i < k; ++i) acc += static_cast<double>(xv[i]) * p.weight[i * m + j];
      out[n * m + j] = static_cast<T>(acc);
    }
  }
  return out;
}

template <typename T>
LinearGrads<T> linear_backward(const Tensor<T>& x, const LinearParams<T>& p, const Tensor<T>& grad_out) {
  const Shape& s = x.shape();
  const std::size_t k = p.in_features();
  const std::size_t m = p.out_features();
  require_same_shape(grad_out.shape(), Shape{s.n, m, 1, 1}, "linear_backward");
  LinearGrads<T> g{Tensor<T>(s), Tensor<T>(p.weight.shape()), Tensor<T>(p.bias.shape())};
  for (std::size_t j = 0; j < m; ++j) {
    double acc = 0.0;
    for (std::size_t n = 0; n < s.n; ++n) acc += grad_out[n * m + j];
    g.grad_bias[j] = static_cast<T>(acc);
  }
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      double acc = 0.0;
      for (std::size_t n = 0; n < s.n; ++n) acc += static_cast<double>(x[n * k + i]) * grad_out[n * m + j];
      g.grad_weight[i * m + j] = static_cast<T>(acc);
    }
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t i = 0; i < k; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < m; ++j) acc += static_cast<double>(p.weight[i * m + j]) * grad_out[n * m + j];
      g.grad_x[n * k + i] = static_cast<T>(acc);
    }
  return g;
}

template <typename T>
Tensor<T> drop_connect(const Tensor<T>& x, double survive_p, Mode mode, Rng& rng, std::vector<T>* scales) {
  if (!(survive_p > 0.0) || survive_p > 1.0) {
    throw ParameterError("drop_connect: survive_p must lie in (0, 1], got " + std::to_string(survive_p));
  }
  const std::size_t batch = x.shape().n;
  std::vector<T> factor(batch, T(1));
  if (mode == Mode::train && survive_p < 1.0) {
    const T keep_scale = static_cast<T>(1.0 / survive_p);
    for (auto& f : factor) f = rng.uniform() < survive_p ? keep_scale : T(0);
  }
  Tensor<T> out(x.shape());
  const std::size_t per = x.shape().c * x.shape().plane();
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t i = 0; i < per; ++i) out[n * per + i] = x[n * per + i] * factor[n];
  if (scales) *scales = std::move(factor);
  return out;
}

template <typename T>
Tensor<T> drop_connect_backward(const Tensor<T>& grad_out, const std::vector<T>& scales) {
  if (scales.size() != grad_out.shape().n) {
    throw ShapeError("drop_connect_backward: " + std::to_string(scales.size()) + " scales for " +
                     grad_out.shape().str());
  }
  Tensor<T> gx(grad_out.shape());
  const std::size_t per = grad_out.shape().c * grad_out.shape().plane();
  for (std::size_t n = 0; n < scales.size(); ++n)
    for (std::size_t i = 0; i < per; ++i) gx[n * per + i] = grad_out[n * per + i] * scales[n];
  return gx;
}

#define EARU_INSTANTIATE(T)                                                                              \
  template struct BatchNormState<T>;                                                                     \
  template Tensor<T> batchnorm2d(const Tensor<T>&, BatchNormState<T>&, Mode, BatchNormCache<T>*);        \
  template BatchNormGrads<T> batchnorm2d_backward(const BatchNormState<T>&, const BatchNormCache<T>&,    \
                                                  const Tensor<T>&);                                     \
  template Tensor<T> activate(const Tensor<T>&, Activation);                                             \
  template Tensor<T> activate_backward(const Tensor<T>&, const Tensor<T>&, Activation);                  \
  template Tensor<T> global_avg_pool(const Tensor<T>&);                                                  \
  template Tensor<T> global_avg_pool_backward(const Shape&, const Tensor<T>&);                           \
  template Tensor<T> upsample_bilinear_2x(const Tensor<T>&);                                             \
  template Tensor<T> upsample_bilinear_2x_backward(const Shape&, const Tensor<T>&);                      \
  template Tensor<T> linear(const Tensor<T>&, const LinearParams<T>&);                                   \
  template LinearGrads<T> linear_backward(const Tensor<T>&, const LinearParams<T>&, const Tensor<T>&);   \
  template Tensor<T> drop_connect(const Tensor<T>&, double, Mode, Rng&, std::vector<T>*);                \
  template Tensor<T> drop_connect_backward(const Tensor<T>&, const std::vector<T>&);

EARU_INSTANTIATE(float)
EARU_INSTANTIATE(double)
#undef EARU_INSTANTIATE

}  // namespace earu
