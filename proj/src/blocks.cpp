#include "earu/blocks.hpp"

#include <algorithm>
#include <cmath>

namespace earu {

std::size_t se_squeeze_channels(std::size_t channels) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(static_cast<double>(channels) / 4.0)));
}

namespace {

// Multiplies each (n, c) plane of x by gate(n, c).
template <typename T>
Tensor<T> scale_channels(const Tensor<T>& x, const Tensor<T>& gate) {
  const Shape& s = x.shape();
  Tensor<T> out(s);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c) {
      const T g = gate.at(n, c, 0, 0);
      const T* src = x.plane(n, c);
      T* dst = out.plane(n, c);
      for (std::size_t i = 0; i < s.plane(); ++i) dst[i] = src[i] * g;
    }
  return out;
}

// Multiplies every channel of x by the single-channel field alpha(n, 0, h, w).
template <typename T>
Tensor<T> scale_spatial(const Tensor<T>& x, const Tensor<T>& alpha) {
  const Shape& s = x.shape();
  Tensor<T> out(s);
  for (std::size_t n = 0; n < s.n; ++n) {
    const T* a = alpha.plane(n, 0);
    for (std::size_t c = 0; c < s.c; ++c) {
      const T* src = x.plane(n, c);
      T* dst = out.plane(n, c);
      for (std::size_t i = 0; i < s.plane(); ++i) dst[i] = src[i] * a[i];
    }
  }
  return out;
}

template <typename T>
void accumulate(ConvParams<T>& p, ConvGrads<T>& g) {
  p.weight.accumulate_grad(g.grad_weight.values());
  if (p.bias && g.grad_bias) p.bias->accumulate_grad(g.grad_bias->values());
}

template <typename T>
void accumulate(BatchNormState<T>& s, BatchNormGrads<T>& g) {
  s.gamma.accumulate_grad(g.grad_gamma.values());
  s.beta.accumulate_grad(g.grad_beta.values());
}

template <typename T>
void accumulate(LinearParams<T>& p, LinearGrads<T>& g) {
  p.weight.accumulate_grad(g.grad_weight.values());
  p.bias.accumulate_grad(g.grad_bias.values());
}

template <typename T>
Tensor<T> conv_back(ConvParams<T>& p, const Tensor<T>& x, const Tensor<T>& grad_out) {
  auto g = conv2d_backward(x, p, grad_out);
  accumulate(p, g);
  return std::move(g.grad_x);
}

template <typename T>
Tensor<T> bn_back(BatchNormState<T>& s, const BatchNormCache<T>& cache, const Tensor<T>& grad_out) {
  auto g = batchnorm2d_backward(s, cache, grad_out);
  accumulate(s, g);
  return std::move(g.grad_x);
}

}  // namespace

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> se_block(const Tensor<T>& x, const SeBlockParams<T>& p, SeCache<T>* cache) {
  if (x.shape().c != p.fc1.in_features() || p.fc2.out_features() != x.shape().c) {
    throw ShapeError("se_block: input " + x.shape().str() + " vs fc1 input width " +
                     std::to_string(p.fc1.in_features()));
  }
  Tensor<T> pooled = global_avg_pool(x);
  Tensor<T> hidden = linear(pooled, p.fc1);
  Tensor<T> activated = activate(hidden, Activation::swish);
  Tensor<T> logits = linear(activated, p.fc2);
  Tensor<T> gate = activate(logits, Activation::sigmoid);
  Tensor<T> out = scale_channels(x, gate);
  if (cache) {
    cache->x = x;
    cache->pooled = std::move(pooled);
    cache->hidden = std::move(hidden);
    cache->activated = std::move(activated);
    cache->logits = std::move(logits);
    cache->gate = std::move(gate);
  }
  return out;
}

template <typename T>
Tensor<T> se_block_backward(SeBlockParams<T>& p, const SeCache<T>& cache, const Tensor<T>& grad_out) {
  const Shape& s = cache.x.shape();
  require_same_shape(grad_out.shape(), s, "se_block_backward");
  Tensor<T> grad_x = scale_channels(grad_out, cache.gate);
  Tensor<T> grad_gate(Shape{s.n, s.c, 1, 1});
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c) {
      const T* go = grad_out.plane(n, c);
      const T* xv = cache.x.plane(n, c);
      double acc = 0.0;
      for (std::size_t i = 0; i < s.plane(); ++i) acc += static_cast<double>(go[i]) * xv[i];
      grad_gate.at(n, c, 0, 0) = static_cast<T>(acc);
    }
  Tensor<T> g_logits = activate_backward(cache.logits, grad_gate, Activation::sigmoid);
  auto g2 = linear_backward(cache.activated, p.fc2, g_logits);
  accumulate(p.fc2, g2);
  Tensor<T> g_hidden = activate_backward(cache.hidden, g2.grad_x, Activation::swish);
  auto g1 = linear_backward(cache.pooled, p.fc1, g_hidden);
  accumulate(p.fc1, g1);
  Tensor<T> g_pool = global_avg_pool_backward(s, g1.grad_x);
  for (std::size_t i = 0; i < grad_x.numel(); ++i) grad_x[i] += g_pool[i];
  return grad_x;
}

// ---------------------------------------------------------------------------

template <typename T>
MbConvParams<T> MbConvParams<T>::make(std::size_t in_c, std::size_t out_c, std::size_t kernel, std::size_t stride,
                                      std::size_t expansion, double survive_p, double bn_eps, double bn_momentum) {
  if (expansion == 0) throw ConfigError("mbconv: expansion ratio must be positive");
  MbConvParams p;
  const std::size_t mid = in_c * expansion;
  if (expansion != 1) {
    p.expand_conv = make_conv<T>(in_c, mid, 1, 1, 1, false);
    p.expand_bn = BatchNormState<T>::identity(mid, bn_eps, bn_momentum);
  }
  p.dw_conv = make_conv<T>(mid, mid, kernel, stride, mid, false);
  p.dw_bn = BatchNormState<T>::identity(mid, bn_eps, bn_momentum);
  p.se = SeBlockParams<T>::make(mid);
  p.project_conv = make_conv<T>(mid, out_c, 1, 1, 1, false);
  p.project_bn = BatchNormState<T>::identity(out_c, bn_eps, bn_momentum);
  p.survive_p = survive_p;
  p.has_shortcut = stride == 1 && in_c == out_c;
  return p;
}

template <typename T>
Tensor<T> mbconv(const Tensor<T>& x, MbConvParams<T>& p, Mode mode, Rng& rng, MbConvCache<T>* cache) {
  if (x.shape().c != p.in_channels()) {
    throw ShapeError("mbconv: input " + x.shape().str() + " vs declared input channels " +
                     std::to_string(p.in_channels()));
  }
  Tensor<T> h = x;
  if (p.expand_conv) {
    Tensor<T> e = conv2d(h, *p.expand_conv);
    Tensor<T> en = batchnorm2d(e, *p.expand_bn, mode, cache ? &cache->expand_bn : nullptr);
    h = activate(en, Activation::swish);
    if (cache) cache->expand_normed = std::move(en);
  }
  Tensor<T> d = conv2d(h, p.dw_conv);
  if (cache) cache->depthwise = std::move(h);
  Tensor<T> dn = batchnorm2d(d, p.dw_bn, mode, cache ? &cache->dw_bn : nullptr);
  Tensor<T> da = activate(dn, Activation::swish);
  if (cache) cache->dw_normed = std::move(dn);
  Tensor<T> s = se_block(da, p.se, cache ? &cache->se : nullptr);
  Tensor<T> pr = conv2d(s, p.project_conv);
  if (cache) cache->se_out = std::move(s);
  Tensor<T> y = batchnorm2d(pr, p.project_bn, mode, cache ? &cache->project_bn : nullptr);
  if (cache) cache->x = x;
  if (!p.has_shortcut) return y;
  std::vector<T> scales;
  Tensor<T> dropped = drop_connect(y, p.survive_p, mode, rng, &scales);
  if (cache) cache->drop_scales = std::move(scales);
  return add(x, dropped);
}

template <typename T>
Tensor<T> mbconv_backward(MbConvParams<T>& p, const MbConvCache<T>& cache, const Tensor<T>& grad_out) {
  Tensor<T> g = p.has_shortcut ? drop_connect_backward(grad_out, cache.drop_scales) : grad_out;
  g = bn_back(p.project_bn, cache.project_bn, g);
  g = conv_back(p.project_conv, cache.se_out, g);
  g = se_block_backward(p.se, cache.se, g);
  g = activate_backward(cache.dw_normed, g, Activation::swish);
  g = bn_back(p.dw_bn, cache.dw_bn, g);
  g = conv_back(p.dw_conv, cache.depthwise, g);
  if (p.expand_conv) {
    g = activate_backward(cache.expand_normed, g, Activation::swish);
    g = bn_back(*p.expand_bn, cache.expand_bn, g);
    g = conv_back(*p.expand_conv, cache.x, g);
  }
  if (p.has_shortcut) {
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += grad_out[i];
  }
  return g;
}

// ---------------------------------------------------------------------------

template <typename T>
AttentionGateParams<T> AttentionGateParams<T>::make(std::size_t skip_channels, std::size_t gate_channels) {
  const std::size_t inter = std::max<std::size_t>(1, skip_channels / 2);
  return AttentionGateParams{make_conv<T>(gate_channels, inter, 1, 1, 1, false),
                             make_conv<T>(skip_channels, inter, 1, 1, 1, false),
                             make_conv<T>(inter, 1, 1, 1, 1, true)};
}

template <typename T>
void AttentionGateParams<T>::validate() const {
  if (wg.out_channels() != wx.out_channels() || psi.in_channels() != wx.out_channels()) {
    throw ShapeError("attention_gate: inter channels disagree (wg " + std::to_string(wg.out_channels()) +
                     ", wx " + std::to_string(wx.out_channels()) + ", psi input " +
                     std::to_string(psi.in_channels()) + ")");
  }
  if (psi.out_channels() != 1) throw ShapeError("attention_gate: psi must produce one channel");
}

template <typename T>
Tensor<T> attention_gate(const Tensor<T>& x, const Tensor<T>& g, const AttentionGateParams<T>& p,
                         AttentionCache<T>* cache) {
  p.validate();
  const Shape& xs = x.shape();
  if (g.shape().n != xs.n) throw ShapeError("attention_gate: batch mismatch " + xs.str() + " vs " + g.shape().str());
  Tensor<T> g_up = g;
  std::vector<Shape> steps;
  while (g_up.shape().h < xs.h || g_up.shape().w < xs.w) {
    steps.push_back(g_up.shape());
    g_up = upsample_bilinear_2x(g_up);
  }
  if (g_up.shape().h != xs.h || g_up.shape().w != xs.w) {
    throw ShapeError("attention_gate: gate " + g.shape().str() + " is not a power-of-two downscale of " + xs.str());
  }
  Tensor<T> fused = add(conv2d(x, p.wx), conv2d(g_up, p.wg));
  Tensor<T> rectified = activate(fused, Activation::relu);
  Tensor<T> psi_out = conv2d(rectified, p.psi);
  Tensor<T> alpha = activate(psi_out, Activation::sigmoid);
  Tensor<T> out = scale_spatial(x, alpha);
  if (cache) {
    cache->x = x;
    cache->g_up = std::move(g_up);
    cache->up_shapes = std::move(steps);
    cache->fused = std::move(fused);
    cache->rectified = std::move(rectified);
    cache->psi_out = std::move(psi_out);
    cache->alpha = std::move(alpha);
  }
  return out;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> attention_gate_backward(AttentionGateParams<T>& p, const AttentionCache<T>& cache,
                                                        const Tensor<T>& grad_out) {
  const Shape& s = cache.x.shape();
  require_same_shape(grad_out.shape(), s, "attention_gate_backward");
  Tensor<T> grad_x = scale_spatial(grad_out, cache.alpha);
  Tensor<T> grad_alpha(cache.alpha.shape());
  for (std::size_t n = 0; n < s.n; ++n) {
    T* ga = grad_alpha.plane(n, 0);
    for (std::size_t i = 0; i < s.plane(); ++i) {
      double acc = 0.0;
      for (std::size_t c = 0; c < s.c; ++c)
        acc += static_cast<double>(grad_out.plane(n, c)[i]) * cache.x.plane(n, c)[i];
      ga[i] = static_cast<T>(acc);
    }
  }
  Tensor<T> g = activate_backward(cache.psi_out, grad_alpha, Activation::sigmoid);
  g = conv_back(p.psi, cache.rectified, g);
  g = activate_backward(cache.fused, g, Activation::relu);
  Tensor<T> gx_branch = conv_back(p.wx, cache.x, g);
  Tensor<T> grad_g = conv_back(p.wg, cache.g_up, g);
  for (std::size_t i = 0; i < grad_x.numel(); ++i) grad_x[i] += gx_branch[i];
  for (auto it = cache.up_shapes.rbegin(); it != cache.up_shapes.rend(); ++it) {
    grad_g = upsample_bilinear_2x_backward(*it, grad_g);
  }
  return {std::move(grad_x), std::move(grad_g)};
}

// ---------------------------------------------------------------------------

template <typename T>
ResBlockParams<T> ResBlockParams<T>::make(std::size_t in_c, std::size_t out_c, double bn_eps, double bn_momentum) {
  ResBlockParams p;
  p.conv1 = make_conv<T>(in_c, out_c, 3, 1, 1, false);
  p.bn1 = BatchNormState<T>::identity(out_c, bn_eps, bn_momentum);
  p.conv2 = make_conv<T>(out_c, out_c, 3, 1, 1, false);
  p.bn2 = BatchNormState<T>::identity(out_c, bn_eps, bn_momentum);
  if (in_c != out_c) p.shortcut_proj = make_conv<T>(in_c, out_c, 1, 1, 1, false);
  return p;
}

template <typename T>
Tensor<T> residual_block(const Tensor<T>& x, ResBlockParams<T>& p, Mode mode, ResBlockCache<T>* cache) {
  if (x.shape().c != p.in_channels()) {
    throw ShapeError("residual_block: input " + x.shape().str() + " vs conv1 input channels " +
                     std::to_string(p.in_channels()));
  }
  if (p.conv1.out_channels() != p.conv2.in_channels()) {
    throw ShapeError("residual_block: conv1 output channels differ from conv2 input channels");
  }
  Tensor<T> n1 = batchnorm2d(conv2d(x, p.conv1), p.bn1, mode, cache ? &cache->bn1 : nullptr);
  Tensor<T> a1 = activate(n1, Activation::relu);
  Tensor<T> n2 = batchnorm2d(conv2d(a1, p.conv2), p.bn2, mode, cache ? &cache->bn2 : nullptr);
  Tensor<T> out = activate(n2, Activation::relu);
  if (p.shortcut_proj) {
    Tensor<T> sc = conv2d(x, *p.shortcut_proj);
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += sc[i];
  } else {
    require_same_shape(out.shape(), x.shape(), "residual_block identity shortcut");
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += x[i];
  }
  if (cache) {
    cache->x = x;
    cache->normed1 = std::move(n1);
    cache->act1 = std::move(a1);
    cache->normed2 = std::move(n2);
  }
  return out;
}

template <typename T>
Tensor<T> residual_block_backward(ResBlockParams<T>& p, const ResBlockCache<T>& cache, const Tensor<T>& grad_out) {
  Tensor<T> g = activate_backward(cache.normed2, grad_out, Activation::relu);
  g = bn_back(p.bn2, cache.bn2, g);
  g = conv_back(p.conv2, cache.act1, g);
  g = activate_backward(cache.normed1, g, Activation::relu);
  g = bn_back(p.bn1, cache.bn1, g);
  g = conv_back(p.conv1, cache.x, g);
  if (p.shortcut_proj) {
    Tensor<T> gs = conv_back(*p.shortcut_proj, cache.x, grad_out);
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += gs[i];
  } else {
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += grad_out[i];
  }
  return g;
}

#define EARU_INSTANTIATE(T)                                                                                   \
  template Tensor<T> se_block(const Tensor<T>&, const SeBlockParams<T>&, SeCache<T>*);                        \
  template Tensor<T> se_block_backward(SeBlockParams<T>&, const SeCache<T>&, const Tensor<T>&);                \
  template struct MbConvParams<T>;                                                                            \
  template Tensor<T> mbconv(const Tensor<T>&, MbConvParams<T>&, Mode, Rng&, MbConvCache<T>*);                 \
  template Tensor<T> mbconv_backward(MbConvParams<T>&, const MbConvCache<T>&, const Tensor<T>&);              \
  template struct AttentionGateParams<T>;                                                                     \
  template Tensor<T> attention_gate(const Tensor<T>&, const Tensor<T>&, const AttentionGateParams<T>&,        \
                                    AttentionCache<T>*);                                                      \
  template std::pair<Tensor<T>, Tensor<T>> attention_gate_backward(AttentionGateParams<T>&,                   \
                                                                   const AttentionCache<T>&, const Tensor<T>&); \
  template struct ResBlockParams<T>;                                                                          \
  template Tensor<T> residual_block(const Tensor<T>&, ResBlockParams<T>&, Mode, ResBlockCache<T>*);           \
  template Tensor<T> residual_block_backward(ResBlockParams<T>&, const ResBlockCache<T>&, const Tensor<T>&);

EARU_INSTANTIATE(float)
EARU_INSTANTIATE(double)
#undef EARU_INSTANTIATE

}  // namespace earu
