#pragma once

// Composite network blocks: squeeze-and-excitation, MBConv, attention gate
// and the residual decoder block. Forward functions optionally record a cache;
// the matching backward consumes it, accumulates parameter gradients into the
// parameters' gradient buffers and returns the input gradient(s).

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "earu/ops.hpp"

namespace earu {

template <typename T>
ConvParams<T> make_conv(std::size_t in_c, std::size_t out_c, std::size_t kernel, std::size_t stride,
                        std::size_t groups, bool bias) {
  ConvParams<T> p;
  p.weight = Tensor<T>(Shape{out_c, in_c / groups, kernel, kernel});
  if (bias) p.bias = Tensor<T>(Shape{out_c, 1, 1, 1});
  p.stride = stride;
  p.padding = kernel / 2;
  p.groups = groups;
  return p;
}

template <typename T>
LinearParams<T> make_linear(std::size_t in, std::size_t out) {
  return LinearParams<T>{Tensor<T>(Shape{1, 1, in, out}), Tensor<T>(Shape{out, 1, 1, 1})};
}

/// Squeeze width used for a block with `channels` SE input channels.
std::size_t se_squeeze_channels(std::size_t channels);

// ---------------------------------------------------------------------------
// Squeeze and excitation

template <typename T>
struct SeBlockParams {
  LinearParams<T> fc1;  // c -> c_squeeze
  LinearParams<T> fc2;  // c_squeeze -> c

  static SeBlockParams make(std::size_t channels) {
    const std::size_t sq = se_squeeze_channels(channels);
    return SeBlockParams{make_linear<T>(channels, sq), make_linear<T>(sq, channels)};
  }
};

template <typename T>
struct SeCache {
  Tensor<T> x;
  Tensor<T> pooled;
  Tensor<T> hidden;      // fc1 output
  Tensor<T> activated;   // swish(hidden)
  Tensor<T> logits;      // fc2 output
  Tensor<T> gate;        // sigmoid(logits), shape (n, c, 1, 1)
};

/// x * sigmoid(fc2(swish(fc1(gap(x))))), gate broadcast over h and w.
template <typename T>
Tensor<T> se_block(const Tensor<T>& x, const SeBlockParams<T>& p, SeCache<T>* cache = nullptr);

template <typename T>
Tensor<T> se_block_backward(SeBlockParams<T>& p, const SeCache<T>& cache, const Tensor<T>& grad_out);

// ---------------------------------------------------------------------------
// MBConv

template <typename T>
struct MbConvParams {
  std::optional<ConvParams<T>> expand_conv;  // absent for expansion ratio 1
  std::optional<BatchNormState<T>> expand_bn;
  ConvParams<T> dw_conv;
  BatchNormState<T> dw_bn;
  SeBlockParams<T> se;
  ConvParams<T> project_conv;
  BatchNormState<T> project_bn;
  double survive_p = 1.0;
  bool has_shortcut = false;

  std::size_t in_channels() const { return expand_conv ? expand_conv->in_channels() : dw_conv.in_channels(); }
  std::size_t out_channels() const { return project_conv.out_channels(); }
  std::size_t stride() const { return dw_conv.stride; }

  /// Zero-initialised block; the shortcut exists iff stride 1 and in == out.
  static MbConvParams make(std::size_t in_c, std::size_t out_c, std::size_t kernel, std::size_t stride,
                           std::size_t expansion, double survive_p, double bn_eps = 1e-5,
                           double bn_momentum = 0.1);
};

template <typename T>
struct MbConvCache {
  Tensor<T> x;
  BatchNormCache<T> expand_bn;
  Tensor<T> expand_normed;          // pre-swish
  Tensor<T> depthwise;              // dw conv input (post expand activation, or x)
  BatchNormCache<T> dw_bn;
  Tensor<T> dw_normed;              // pre-swish
  SeCache<T> se;
  Tensor<T> se_out;
  BatchNormCache<T> project_bn;
  std::vector<T> drop_scales;
};

template <typename T>
Tensor<T> mbconv(const Tensor<T>& x, MbConvParams<T>& p, Mode mode, Rng& rng, MbConvCache<T>* cache = nullptr);

template <typename T>
Tensor<T> mbconv_backward(MbConvParams<T>& p, const MbConvCache<T>& cache, const Tensor<T>& grad_out);

// ---------------------------------------------------------------------------
// Attention gate

template <typename T>
struct AttentionGateParams {
  ConvParams<T> wg;   // 1x1 gate channels -> inter, no bias
  ConvParams<T> wx;   // 1x1 skip channels -> inter, no bias
  ConvParams<T> psi;  // 1x1 inter -> 1, with bias

  /// Inter channels default to max(1, skip_channels / 2).
  static AttentionGateParams make(std::size_t skip_channels, std::size_t gate_channels);
  void validate() const;
};

template <typename T>
struct AttentionCache {
  Tensor<T> x;
  Tensor<T> g_up;                  // g resampled to x's resolution
  std::vector<Shape> up_shapes;    // inputs of each 2x upsampling step
  Tensor<T> fused;                 // wx(x) + wg(g_up), pre-ReLU
  Tensor<T> rectified;
  Tensor<T> psi_out;               // pre-sigmoid
  Tensor<T> alpha;                 // (n, 1, h, w)
};

/// Skip features `x` scaled by alpha = sigmoid(psi(relu(wx(x) + wg(up(g))))).
/// `g` must be at x's resolution or coarser by a power-of-two factor.
template <typename T>
Tensor<T> attention_gate(const Tensor<T>& x, const Tensor<T>& g, const AttentionGateParams<T>& p,
                         AttentionCache<T>* cache = nullptr);

/// Returns (grad_x, grad_g).
template <typename T>
std::pair<Tensor<T>, Tensor<T>> attention_gate_backward(AttentionGateParams<T>& p, const AttentionCache<T>& cache,
                                                        const Tensor<T>& grad_out);

// ---------------------------------------------------------------------------
// Residual decoder block

template <typename T>
struct ResBlockParams {
  ConvParams<T> conv1;
  BatchNormState<T> bn1;
  ConvParams<T> conv2;
  BatchNormState<T> bn2;
  std::optional<ConvParams<T>> shortcut_proj;  // 1x1 without BN, present iff in_c != out_c

  static ResBlockParams make(std::size_t in_c, std::size_t out_c, double bn_eps = 1e-5, double bn_momentum = 0.1);
  std::size_t in_channels() const { return conv1.in_channels(); }
  std::size_t out_channels() const { return conv2.out_channels(); }
};

template <typename T>
struct ResBlockCache {
  Tensor<T> x;
  BatchNormCache<T> bn1;
  Tensor<T> normed1;
  Tensor<T> act1;
  BatchNormCache<T> bn2;
  Tensor<T> normed2;
};

/// relu(bn2(conv2(relu(bn1(conv1(x)))))) + shortcut(x).
template <typename T>
Tensor<T> residual_block(const Tensor<T>& x, ResBlockParams<T>& p, Mode mode, ResBlockCache<T>* cache = nullptr);

template <typename T>
Tensor<T> residual_block_backward(ResBlockParams<T>& p, const ResBlockCache<T>& cache, const Tensor<T>& grad_out);

// ---------------------------------------------------------------------------
// Parameter enumeration

enum class ParamKind { trainable, buffer };

/// Calls f(name, tensor, kind) for every tensor owned by the parameters.
template <typename T, typename F>
void visit_params(const std::string& prefix, ConvParams<T>& p, F&& f) {
  f(prefix + ".weight", p.weight, ParamKind::trainable);
  if (p.bias) f(prefix + ".bias", *p.bias, ParamKind::trainable);
}

template <typename T, typename F>
void visit_params(const std::string& prefix, BatchNormState<T>& p, F&& f) {
  f(prefix + ".gamma", p.gamma, ParamKind::trainable);
  f(prefix + ".beta", p.beta, ParamKind::trainable);
  f(prefix + ".running_mean", p.running_mean, ParamKind::buffer);
  f(prefix + ".running_var", p.running_var, ParamKind::buffer);
}

template <typename T, typename F>
void visit_params(const std::string& prefix, LinearParams<T>& p, F&& f) {
  f(prefix + ".weight", p.weight, ParamKind::trainable);
  f(prefix + ".bias", p.bias, ParamKind::trainable);
}

template <typename T, typename F>
void visit_params(const std::string& prefix, SeBlockParams<T>& p, F&& f) {
  visit_params(prefix + ".fc1", p.fc1, f);
  visit_params(prefix + ".fc2", p.fc2, f);
}

template <typename T, typename F>
void visit_params(const std::string& prefix, MbConvParams<T>& p, F&& f) {
  if (p.expand_conv) visit_params(prefix + ".expand_conv", *p.expand_conv, f);
  if (p.expand_bn) visit_params(prefix + ".expand_bn", *p.expand_bn, f);
  visit_params(prefix + ".dw_conv", p.dw_conv, f);
  visit_params(prefix + ".dw_bn", p.dw_bn, f);
  visit_params(prefix + ".se", p.se, f);
  visit_params(prefix + ".project_conv", p.project_conv, f);
  visit_params(prefix + ".project_bn", p.project_bn, f);
}

template <typename T, typename F>
void visit_params(const std::string& prefix, AttentionGateParams<T>& p, F&& f) {
  visit_params(prefix + ".wg", p.wg, f);
  visit_params(prefix + ".wx", p.wx, f);
  visit_params(prefix + ".psi", p.psi, f);
}

template <typename T, typename F>
void visit_params(const std::string& prefix, ResBlockParams<T>& p, F&& f) {
  visit_params(prefix + ".conv1", p.conv1, f);
  visit_params(prefix + ".bn1", p.bn1, f);
  visit_params(prefix + ".conv2", p.conv2, f);
  visit_params(prefix + ".bn2", p.bn2, f);
  if (p.shortcut_proj) visit_params(prefix + ".shortcut", *p.shortcut_proj, f);
}

}  // namespace earu
