#pragma once

// Differentiable kernels shared by every network block. Each forward op has
// an explicit backward; composite blocks chain them by hand.

#include <cstddef>
#include <optional>
#include <vector>

#include "earu/rng.hpp"
#include "earu/tensor.hpp"

namespace earu {

enum class Mode { train, infer };

template <typename T>
struct ConvParams {
  Tensor<T> weight;                // (out_c, in_c / groups, kh, kw)
  std::optional<Tensor<T>> bias;   // (out_c, 1, 1, 1)
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t groups = 1;

  std::size_t out_channels() const { return weight.shape().n; }
  std::size_t in_channels() const { return weight.shape().c * groups; }
  std::size_t kernel_h() const { return weight.shape().h; }
  std::size_t kernel_w() const { return weight.shape().w; }

  /// Checks the grouping invariants; throws ConfigError.
  void validate() const;
};

template <typename T>
struct ConvGrads {
  Tensor<T> grad_x;
  Tensor<T> grad_weight;
  std::optional<Tensor<T>> grad_bias;
};

/// Zero-padded cross-correlation.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const ConvParams<T>& p);

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& x, const ConvParams<T>& p, const Tensor<T>& grad_out);

Shape conv2d_output_shape(const Shape& x, const Shape& weight, std::size_t stride, std::size_t padding,
                          std::size_t groups);

template <typename T>
struct BatchNormState {
  Tensor<T> gamma;          // (c, 1, 1, 1)
  Tensor<T> beta;           // (c, 1, 1, 1)
  Tensor<T> running_mean;   // (c, 1, 1, 1)
  Tensor<T> running_var;    // (c, 1, 1, 1)
  double eps = 1e-5;
  double momentum = 0.1;

  static BatchNormState identity(std::size_t channels, double eps = 1e-5, double momentum = 0.1);
  std::size_t channels() const { return gamma.numel(); }
};

/// Values saved by a train-mode batchnorm forward for its backward.
template <typename T>
struct BatchNormCache {
  Mode mode = Mode::infer;
  Tensor<T> x_hat;
  std::vector<double> inv_std;
};

/// Per-channel normalize-scale-shift. Train mode normalises with batch
/// statistics over (n, h, w) and updates the running statistics (running
/// variance receives the unbiased batch variance); infer mode uses the
/// running statistics only.
template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& x, BatchNormState<T>& s, Mode mode,
                      BatchNormCache<T>* cache = nullptr);

template <typename T>
struct BatchNormGrads {
  Tensor<T> grad_x;
  Tensor<T> grad_gamma;
  Tensor<T> grad_beta;
};

template <typename T>
BatchNormGrads<T> batchnorm2d_backward(const BatchNormState<T>& s, const BatchNormCache<T>& cache,
                                       const Tensor<T>& grad_out);

enum class Activation { relu, swish, sigmoid };

template <typename T>
Tensor<T> activate(const Tensor<T>& x, Activation kind);

/// Gradient w.r.t. the activation input given its input `x`.
template <typename T>
Tensor<T> activate_backward(const Tensor<T>& x, const Tensor<T>& grad_out, Activation kind);

/// Scalar logistic function, stable for large |t|.
double sigmoid(double t);

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x);

template <typename T>
Tensor<T> global_avg_pool_backward(const Shape& input_shape, const Tensor<T>& grad_out);

/// Doubles h and w. Source coordinate (dst + 0.5) / 2 - 0.5, clamped.
template <typename T>
Tensor<T> upsample_bilinear_2x(const Tensor<T>& x);

template <typename T>
Tensor<T> upsample_bilinear_2x_backward(const Shape& input_shape, const Tensor<T>& grad_out);

/// Fully connected layer y = x^T W + b applied to every batch entry.
template <typename T>
struct LinearParams {
  Tensor<T> weight;  // (1, 1, in, out)
  Tensor<T> bias;    // (out, 1, 1, 1)

  std::size_t in_features() const { return weight.shape().h; }
  std::size_t out_features() const { return weight.shape().w; }
};

/// x has shape (n, k, 1, 1) (a length-k vector per sample); returns (n, m, 1, 1).
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const LinearParams<T>& p);

template <typename T>
struct LinearGrads {
  Tensor<T> grad_x;
  Tensor<T> grad_weight;
  Tensor<T> grad_bias;
};

template <typename T>
LinearGrads<T> linear_backward(const Tensor<T>& x, const LinearParams<T>& p, const Tensor<T>& grad_out);

/// Per-sample stochastic depth. `scales` receives the multiplier used for
/// each batch entry (0 or 1/survive_p in train mode, 1 in infer mode).
template <typename T>
Tensor<T> drop_connect(const Tensor<T>& x, double survive_p, Mode mode, Rng& rng,
                       std::vector<T>* scales = nullptr);

template <typename T>
Tensor<T> drop_connect_backward(const Tensor<T>& grad_out, const std::vector<T>& scales);

/// Row-major C[M x N] += A[M x K] * B[K x N].
template <typename T>
void gemm_accumulate(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda, const T* b,
                     std::size_t ldb, T* c, std::size_t ldc);

}  // namespace earu
