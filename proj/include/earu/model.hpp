#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "earu/blocks.hpp"

namespace earu {

enum class StageOp { conv3x3, mbconv, conv1x1 };

std::string_view to_string(StageOp op);
StageOp stage_op_from_string(std::string_view s);

/// One encoder stage. `stride` applies to the first layer only.
struct StageSpec {
  StageOp op = StageOp::mbconv;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t out_channels = 0;
  std::size_t layers = 1;
  std::size_t expansion = 1;

  bool operator==(const StageSpec&) const = default;
};

/// The unscaled nine-stage encoder plan.
const std::array<StageSpec, 9>& base_encoder_stages();

inline constexpr std::array<std::size_t, 5> kBaseDecoderChannels{256, 128, 64, 32, 16};
inline constexpr std::array<std::size_t, 5> kDefaultSkipStages{1, 3, 4, 5, 7};

/// Nearest multiple of 8 (halves round up), never below 8.
std::size_t round_channels(double channels);
std::size_t scale_layers(std::size_t layers, double depth_mult);

/// Resolved layer plan of the network.
struct ModelConfig {
  std::size_t input_h = 256;
  std::size_t input_w = 256;
  double width_mult = 1.0;
  double depth_mult = 1.0;
  std::array<StageSpec, 9> stages = base_encoder_stages();
  std::array<std::size_t, 5> decoder_channels = kBaseDecoderChannels;
  std::array<std::size_t, 5> skip_stages = kDefaultSkipStages;  // ascending; deepest joins decoder level 1
  double drop_connect_rate = 0.2;  // survive_p decays linearly from 1 to 1 - rate
  double bn_eps = 1e-5;
  double bn_momentum = 0.1;

  /// Throws ConfigError naming the offending field.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;

  /// Spatial extent at the output of stage `index` (1-based).
  std::size_t stage_resolution(std::size_t index) const;
};

/// Applies width/depth multipliers to the base plan.
ModelConfig make_config(double width_mult, double depth_mult, std::size_t input_size);

enum class Preset { full, desk, micro };

Preset preset_from_string(std::string_view s);
std::string_view to_string(Preset p);

/// full: base plan at 256; desk: width 0.25, depth 0.25 at 64; micro: minimal
/// widths and single-layer stages at 32 (gradient checks).
ModelConfig preset_config(Preset p);

/// Width/depth coefficients of the compound-scaled family B0..B7.
struct ScalingCoefficients {
  std::string_view name;
  std::size_t input_size;
  double width;
  double depth;
};
const std::array<ScalingCoefficients, 8>& compound_scaling_table();
/// Multipliers that map the base (B4) plan onto another family member.
std::pair<double, double> multipliers_relative_to_b4(std::string_view variant);

// ---------------------------------------------------------------------------

template <typename T>
struct DecoderLevelParams {
  AttentionGateParams<T> gate;
  ResBlockParams<T> block;
};

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T>* tensor;
  ParamKind kind;
};

/// Every tensor of the network. Names are hierarchical and stable.
template <typename T>
struct ModelParams {
  ConvParams<T> stem_conv;
  BatchNormState<T> stem_bn;
  std::vector<std::vector<MbConvParams<T>>> blocks;  // stages 2..8
  ConvParams<T> top_conv;
  BatchNormState<T> top_bn;
  std::vector<DecoderLevelParams<T>> decoder;  // level 1 (deepest) first
  ConvParams<T> head;

  template <typename F>
  void visit(F&& f) {
    visit_params("encoder.stage1.conv", stem_conv, f);
    visit_params("encoder.stage1.bn", stem_bn, f);
    for (std::size_t s = 0; s < blocks.size(); ++s)
      for (std::size_t b = 0; b < blocks[s].size(); ++b)
        visit_params("encoder.stage" + std::to_string(s + 2) + ".block" + std::to_string(b), blocks[s][b], f);
    visit_params("encoder.stage9.conv", top_conv, f);
    visit_params("encoder.stage9.bn", top_bn, f);
    for (std::size_t l = 0; l < decoder.size(); ++l) {
      const std::string prefix = "decoder.level" + std::to_string(l + 1);
      visit_params(prefix + ".gate", decoder[l].gate, f);
      visit_params(prefix + ".block", decoder[l].block, f);
    }
    visit_params("head.conv", head, f);
  }

  std::vector<NamedTensor<T>> named();
  /// Trainable scalar count.
  std::size_t parameter_count();
  void zero_grad();
};

/// Zero-initialised parameters with the configured shapes.
template <typename T>
ModelParams<T> make_model_params(const ModelConfig& cfg);

/// He-normal (fan-out) conv weights, identity batchnorm, uniform +-1/sqrt(fan_in)
/// linear layers, zero conv biases.
template <typename T>
ModelParams<T> build_model(const ModelConfig& cfg, Rng& rng);

/// Activations recorded by a forward pass for the backward pass.
template <typename T>
struct ForwardTape {
  struct Level {
    Shape up_in;
    std::size_t skip_channels = 0;
    AttentionCache<T> gate;
    ResBlockCache<T> block;
  };

  bool recorded = false;
  Mode mode = Mode::infer;
  Shape input_shape;
  Tensor<T> x;
  BatchNormCache<T> stem_bn;
  Tensor<T> stem_normed;
  std::vector<std::vector<MbConvCache<T>>> blocks;
  Tensor<T> top_in;
  BatchNormCache<T> top_bn;
  Tensor<T> top_normed;
  std::vector<Level> levels;
  Tensor<T> head_in;
  Tensor<T> logits;
};

/// Encoder features at each stage output, exposed for shape inspection.
template <typename T>
struct EncoderTrace {
  std::array<Shape, 9> stage_shapes;
};

/// Input (n, 1, H, W) -> per-pixel probability (n, 1, H, W).
template <typename T>
Tensor<T> forward(ModelParams<T>& params, const ModelConfig& cfg, const Tensor<T>& x, Mode mode, Rng& rng,
                  ForwardTape<T>* tape = nullptr, EncoderTrace<T>* trace = nullptr);

/// Reverse pass over a train-mode tape. Accumulates gradients into every
/// trainable tensor's gradient buffer (all entries are allocated, possibly
/// zero) and returns the gradient w.r.t. the input.
template <typename T>
Tensor<T> backward(ModelParams<T>& params, const ModelConfig& cfg, const ForwardTape<T>& tape,
                   const Tensor<T>& grad_out);

}  // namespace earu
