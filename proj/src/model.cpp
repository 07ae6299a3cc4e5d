#include "earu/model.hpp"

#include <cmath>
#include <map>

namespace earu {

std::string_view to_string(StageOp op) {
  switch (op) {
    case StageOp::conv3x3: return "conv3x3";
    case StageOp::mbconv: return "mbconv";
    case StageOp::conv1x1: return "conv1x1";
  }
  return "?";
}

StageOp stage_op_from_string(std::string_view s) {
  if (s == "conv3x3") return StageOp::conv3x3;
  if (s == "mbconv") return StageOp::mbconv;
  if (s == "conv1x1") return StageOp::conv1x1;
  throw ConfigError("unknown stage operator '" + std::string(s) + "'");
}

const std::array<StageSpec, 9>& base_encoder_stages() {
  static const std::array<StageSpec, 9> stages{{
      {StageOp::conv3x3, 3, 1, 48, 1, 1},
      {StageOp::mbconv, 3, 2, 24, 2, 1},
      {StageOp::mbconv, 3, 1, 32, 4, 6},
      {StageOp::mbconv, 5, 2, 56, 4, 6},
      {StageOp::mbconv, 3, 2, 112, 6, 6},
      {StageOp::mbconv, 5, 2, 160, 6, 6},
      {StageOp::mbconv, 5, 1, 272, 8, 6},
      {StageOp::mbconv, 3, 2, 448, 2, 6},
      {StageOp::conv1x1, 1, 1, 1792, 1, 1},
  }};
  return stages;
}

std::size_t round_channels(double channels) {
  const double rounded = std::floor(channels / 8.0 + 0.5) * 8.0;
  return std::max<std::size_t>(8, static_cast<std::size_t>(rounded));
}

std::size_t scale_layers(std::size_t layers, double depth_mult) {
  // The small slack keeps products like 0.25 * 4 from rounding up to 2.
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(depth_mult * static_cast<double>(layers) - 1e-9)));
}

void ModelConfig::validate() const {
  if (!(width_mult > 0.0) || !(depth_mult > 0.0)) throw ConfigError("width_mult and depth_mult must be positive");
  if (input_h == 0 || input_w == 0 || input_h % 32 != 0 || input_w % 32 != 0) {
    throw ConfigError("input size " + std::to_string(input_h) + "x" + std::to_string(input_w) +
                      " must be a positive multiple of 32");
  }
  if (stages[0].op != StageOp::conv3x3 || stages[8].op != StageOp::conv1x1) {
    throw ConfigError("stage 1 must be conv3x3 and stage 9 conv1x1");
  }
  std::size_t total_stride = 1;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const StageSpec& s = stages[i];
    if (s.out_channels == 0 || s.layers == 0 || s.kernel % 2 == 0 || (s.stride != 1 && s.stride != 2)) {
      throw ConfigError("stage " + std::to_string(i + 1) + ": invalid spec");
    }
    if (i > 0 && i < 8 && (s.op != StageOp::mbconv || s.expansion == 0)) {
      throw ConfigError("stage " + std::to_string(i + 1) + " must be an mbconv stage");
    }
    total_stride *= s.stride;
  }
  if (total_stride != 32) throw ConfigError("encoder strides must multiply to 32");
  if (!(drop_connect_rate >= 0.0 && drop_connect_rate < 1.0)) throw ConfigError("drop_connect_rate must be in [0, 1)");
  if (!(bn_eps > 0.0) || !(bn_momentum > 0.0 && bn_momentum < 1.0)) throw ConfigError("invalid batchnorm settings");
  for (auto c : decoder_channels)
    if (c == 0) throw ConfigError("decoder channels must be positive");
  // Decoder level l (1-based) runs at input / 2^(5-l); its skip must match.
  for (std::size_t l = 0; l < 5; ++l) {
    const std::size_t stage = skip_stages[4 - l];
    if (stage < 1 || stage > 9) throw ConfigError("skip stage index out of range");
    const std::size_t want = input_h >> (4 - l);
    if (stage_resolution(stage) != want) {
      throw ConfigError("skip stage " + std::to_string(stage) + " resolution " +
                        std::to_string(stage_resolution(stage)) + " does not match decoder level " +
                        std::to_string(l + 1) + " resolution " + std::to_string(want));
    }
  }
}

std::size_t ModelConfig::stage_resolution(std::size_t index) const {
  std::size_t r = input_h;
  for (std::size_t i = 0; i < index && i < stages.size(); ++i) r = (r + stages[i].stride - 1) / stages[i].stride;
  return r;
}

ModelConfig make_config(double width_mult, double depth_mult, std::size_t input_size) {
  ModelConfig cfg;
  cfg.input_h = cfg.input_w = input_size;
  cfg.width_mult = width_mult;
  cfg.depth_mult = depth_mult;
  const auto& base = base_encoder_stages();
  for (std::size_t i = 0; i < base.size(); ++i) {
    cfg.stages[i] = base[i];
    cfg.stages[i].out_channels = round_channels(width_mult * static_cast<double>(base[i].out_channels));
    cfg.stages[i].layers = (base[i].op == StageOp::mbconv) ? scale_layers(base[i].layers, depth_mult) : 1;
  }
  for (std::size_t l = 0; l < 5; ++l) {
    cfg.decoder_channels[l] = round_channels(width_mult * static_cast<double>(kBaseDecoderChannels[l]));
  }
  return cfg;
}

Preset preset_from_string(std::string_view s) {
  if (s == "full") return Preset::full;
  if (s == "desk") return Preset::desk;
  if (s == "micro") return Preset::micro;
  throw ConfigError("unknown preset '" + std::string(s) + "' (expected full, desk or micro)");
}

std::string_view to_string(Preset p) {
  switch (p) {
    case Preset::full: return "full";
    case Preset::desk: return "desk";
    case Preset::micro: return "micro";
  }
  return "?";
}

ModelConfig preset_config(Preset p) {
  switch (p) {
    case Preset::full: return make_config(1.0, 1.0, 256);
    case Preset::desk: return make_config(0.25, 0.25, 64);
    case Preset::micro: return make_config(0.01, 0.1, 32);
  }
  throw ConfigError("unknown preset");
}

const std::array<ScalingCoefficients, 8>& compound_scaling_table() {
  static const std::array<ScalingCoefficients, 8> table{{
      {"B0", 224, 1.0, 1.0},
      {"B1", 240, 1.0, 1.1},
      {"B2", 260, 1.1, 1.2},
      {"B3", 300, 1.2, 1.4},
      {"B4", 380, 1.4, 1.8},
      {"B5", 456, 1.6, 2.2},
      {"B6", 528, 1.8, 2.6},
      {"B7", 600, 2.0, 3.1},
  }};
  return table;
}

std::pair<double, double> multipliers_relative_to_b4(std::string_view variant) {
  const auto& table = compound_scaling_table();
  const ScalingCoefficients& b4 = table[4];
  for (const auto& row : table) {
    if (row.name == variant) return {row.width / b4.width, row.depth / b4.depth};
  }
  throw ConfigError("unknown scaling variant '" + std::string(variant) + "'");
}

// ---------------------------------------------------------------------------

template <typename T>
std::vector<NamedTensor<T>> ModelParams<T>::named() {
  std::vector<NamedTensor<T>> out;
  visit([&](const std::string& name, Tensor<T>& t, ParamKind kind) { out.push_back({name, &t, kind}); });
  return out;
}

template <typename T>
std::size_t ModelParams<T>::parameter_count() {
  std::size_t total = 0;
  visit([&](const std::string&, Tensor<T>& t, ParamKind kind) {
    if (kind == ParamKind::trainable) total += t.numel();
  });
  return total;
}

template <typename T>
void ModelParams<T>::zero_grad() {
  visit([](const std::string&, Tensor<T>& t, ParamKind kind) {
    if (kind == ParamKind::trainable) t.zero_grad();
  });
}

template <typename T>
ModelParams<T> make_model_params(const ModelConfig& cfg) {
  cfg.validate();
  ModelParams<T> p;
  const double eps = cfg.bn_eps;
  const double mom = cfg.bn_momentum;
  const auto& st = cfg.stages;
  p.stem_conv = make_conv<T>(1, st[0].out_channels, st[0].kernel, st[0].stride, 1, false);
  p.stem_bn = BatchNormState<T>::identity(st[0].out_channels, eps, mom);

  std::size_t total_blocks = 0;
  for (std::size_t s = 1; s < 8; ++s) total_blocks += st[s].layers;
  std::size_t block_index = 0;
  std::size_t in_c = st[0].out_channels;
  for (std::size_t s = 1; s < 8; ++s) {
    std::vector<MbConvParams<T>> stage;
    for (std::size_t l = 0; l < st[s].layers; ++l) {
      const double frac =
          total_blocks > 1 ? static_cast<double>(block_index) / static_cast<double>(total_blocks - 1) : 0.0;
      const double survive = 1.0 - cfg.drop_connect_rate * frac;
      stage.push_back(MbConvParams<T>::make(in_c, st[s].out_channels, st[s].kernel, l == 0 ? st[s].stride : 1,
                                            st[s].expansion, survive, eps, mom));
      in_c = st[s].out_channels;
      ++block_index;
    }
    p.blocks.push_back(std::move(stage));
  }
  p.top_conv = make_conv<T>(in_c, st[8].out_channels, 1, 1, 1, false);
  p.top_bn = BatchNormState<T>::identity(st[8].out_channels, eps, mom);

  std::size_t current = st[8].out_channels;
  for (std::size_t l = 0; l < 5; ++l) {
    const std::size_t skip_c = st[cfg.skip_stages[4 - l] - 1].out_channels;
    DecoderLevelParams<T> level{AttentionGateParams<T>::make(skip_c, current),
                                ResBlockParams<T>::make(skip_c + current, cfg.decoder_channels[l], eps, mom)};
    p.decoder.push_back(std::move(level));
    current = cfg.decoder_channels[l];
  }
  p.head = make_conv<T>(current, 1, 1, 1, 1, true);
  return p;
}

template <typename T>
ModelParams<T> build_model(const ModelConfig& cfg, Rng& rng) {
  ModelParams<T> p = make_model_params<T>(cfg);
  auto init_conv = [&](ConvParams<T>& c) {
    const Shape& w = c.weight.shape();
    const double fan_out = static_cast<double>(w.n / c.groups * w.h * w.w);
    const double stddev = std::sqrt(2.0 / fan_out);
    for (auto& v : c.weight.values()) v = static_cast<T>(stddev * rng.normal());
    if (c.bias) c.bias->fill(T(0));
  };
  auto init_linear = [&](LinearParams<T>& l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(l.in_features()));
    for (auto& v : l.weight.values()) v = static_cast<T>(rng.uniform(-bound, bound));
    for (auto& v : l.bias.values()) v = static_cast<T>(rng.uniform(-bound, bound));
  };
  init_conv(p.stem_conv);
  for (auto& stage : p.blocks)
    for (auto& b : stage) {
      if (b.expand_conv) init_conv(*b.expand_conv);
      init_conv(b.dw_conv);
      init_linear(b.se.fc1);
      init_linear(b.se.fc2);
      init_conv(b.project_conv);
    }
  init_conv(p.top_conv);
  for (auto& level : p.decoder) {
    init_conv(level.gate.wg);
    init_conv(level.gate.wx);
    init_conv(level.gate.psi);
    init_conv(level.block.conv1);
    init_conv(level.block.conv2);
    if (level.block.shortcut_proj) init_conv(*level.block.shortcut_proj);
  }
  init_conv(p.head);
  return p;
}

template <typename T>
Tensor<T> forward(ModelParams<T>& params, const ModelConfig& cfg, const Tensor<T>& x, Mode mode, Rng& rng,
                  ForwardTape<T>* tape, EncoderTrace<T>* trace) {
  const Shape& xs = x.shape();
  if (xs.c != 1 || xs.h != cfg.input_h || xs.w != cfg.input_w || xs.n == 0) {
    throw ShapeError("forward: input " + xs.str() + " expected (n, 1, " + std::to_string(cfg.input_h) + ", " +
                     std::to_string(cfg.input_w) + ")");
  }
  if (tape) {
    *tape = ForwardTape<T>{};
    tape->mode = mode;
    tape->input_shape = xs;
    tape->x = x;
    tape->blocks.resize(params.blocks.size());
    tape->levels.resize(params.decoder.size());
  }
  std::array<Tensor<T>, 9> stage_out;
  {
    Tensor<T> n = batchnorm2d(conv2d(x, params.stem_conv), params.stem_bn, mode, tape ? &tape->stem_bn : nullptr);
    stage_out[0] = activate(n, Activation::swish);
    if (tape) tape->stem_normed = std::move(n);
  }
  Tensor<T> h = stage_out[0];
  for (std::size_t s = 0; s < params.blocks.size(); ++s) {
    if (tape) tape->blocks[s].resize(params.blocks[s].size());
    for (std::size_t b = 0; b < params.blocks[s].size(); ++b) {
      h = mbconv(h, params.blocks[s][b], mode, rng, tape ? &tape->blocks[s][b] : nullptr);
    }
    stage_out[s + 1] = h;
  }
  {
    Tensor<T> n = batchnorm2d(conv2d(h, params.top_conv), params.top_bn, mode, tape ? &tape->top_bn : nullptr);
    stage_out[8] = activate(n, Activation::swish);
    if (tape) {
      tape->top_in = std::move(h);
      tape->top_normed = std::move(n);
    }
  }
  if (trace) {
    for (std::size_t i = 0; i < 9; ++i) trace->stage_shapes[i] = stage_out[i].shape();
  }

  Tensor<T> current = stage_out[8];
  for (std::size_t l = 0; l < params.decoder.size(); ++l) {
    const Tensor<T>& skip = stage_out[cfg.skip_stages[4 - l] - 1];
    Tensor<T> up = upsample_bilinear_2x(current);
    if (up.shape().h != skip.shape().h || up.shape().w != skip.shape().w) {
      throw ShapeError("forward: decoder level " + std::to_string(l + 1) + " upsampled " + up.shape().str() +
                       " does not match skip " + skip.shape().str());
    }
    auto* level = tape ? &tape->levels[l] : nullptr;
    if (level) {
      level->up_in = current.shape();
      level->skip_channels = skip.shape().c;
    }
    Tensor<T> gated = attention_gate(skip, up, params.decoder[l].gate, level ? &level->gate : nullptr);
    Tensor<T> merged = concat_channels(gated, up);
    current = residual_block(merged, params.decoder[l].block, mode, level ? &level->block : nullptr);
  }
  Tensor<T> logits = conv2d(current, params.head);
  Tensor<T> out = activate(logits, Activation::sigmoid);
  if (tape) {
    tape->head_in = std::move(current);
    tape->logits = std::move(logits);
    tape->recorded = true;
  }
  return out;
}

template <typename T>
Tensor<T> backward(ModelParams<T>& params, const ModelConfig& cfg, const ForwardTape<T>& tape,
                   const Tensor<T>& grad_out) {
  if (!tape.recorded) throw StateError("backward: no forward pass was recorded");
  if (tape.mode != Mode::train) throw StateError("backward: forward was run in infer mode; backward requires train mode");
  require_same_shape(grad_out.shape(), tape.logits.shape(), "backward grad_out");

  params.visit([](const std::string&, Tensor<T>& t, ParamKind kind) {
    if (kind == ParamKind::trainable) t.grad();
  });

  auto conv_back = [](ConvParams<T>& p, const Tensor<T>& in, const Tensor<T>& g) {
    auto grads = conv2d_backward(in, p, g);
    p.weight.accumulate_grad(grads.grad_weight.values());
    if (p.bias && grads.grad_bias) p.bias->accumulate_grad(grads.grad_bias->values());
    return std::move(grads.grad_x);
  };
  auto bn_back = [](BatchNormState<T>& s, const BatchNormCache<T>& cache, const Tensor<T>& g) {
    auto grads = batchnorm2d_backward(s, cache, g);
    s.gamma.accumulate_grad(grads.grad_gamma.values());
    s.beta.accumulate_grad(grads.grad_beta.values());
    return std::move(grads.grad_x);
  };

  Tensor<T> g = activate_backward(tape.logits, grad_out, Activation::sigmoid);
  g = conv_back(params.head, tape.head_in, g);

  // Gradients arriving at encoder stage outputs through skip connections.
  std::map<std::size_t, Tensor<T>> skip_grads;
  for (std::size_t li = params.decoder.size(); li-- > 0;) {
    const auto& level = tape.levels[li];
    g = residual_block_backward(params.decoder[li].block, level.block, g);
    auto [g_gated, g_up] = split_channels(g, level.skip_channels);
    auto [g_skip, g_up_gate] = attention_gate_backward(params.decoder[li].gate, level.gate, g_gated);
    for (std::size_t i = 0; i < g_up.numel(); ++i) g_up[i] += g_up_gate[i];
    const std::size_t stage = cfg.skip_stages[4 - li];
    auto it = skip_grads.find(stage);
    if (it == skip_grads.end()) {
      skip_grads.emplace(stage, std::move(g_skip));
    } else {
      for (std::size_t i = 0; i < g_skip.numel(); ++i) it->second[i] += g_skip[i];
    }
    g = upsample_bilinear_2x_backward(level.up_in, g_up);
  }

  auto add_skip = [&](std::size_t stage, Tensor<T>& grad) {
    auto it = skip_grads.find(stage);
    if (it == skip_grads.end()) return;
    for (std::size_t i = 0; i < grad.numel(); ++i) grad[i] += it->second[i];
  };

  add_skip(9, g);
  g = activate_backward(tape.top_normed, g, Activation::swish);
  g = bn_back(params.top_bn, tape.top_bn, g);
  g = conv_back(params.top_conv, tape.top_in, g);
  for (std::size_t s = params.blocks.size(); s-- > 0;) {
    add_skip(s + 2, g);
    for (std::size_t b = params.blocks[s].size(); b-- > 0;) {
      g = mbconv_backward(params.blocks[s][b], tape.blocks[s][b], g);
    }
  }
  add_skip(1, g);
  g = activate_backward(tape.stem_normed, g, Activation::swish);
  g = bn_back(params.stem_bn, tape.stem_bn, g);
  g = conv_back(params.stem_conv, tape.x, g);
  return g;
}

#define EARU_INSTANTIATE(T)                                                                                  \
  template struct ModelParams<T>;                                                                            \
  template ModelParams<T> make_model_params(const ModelConfig&);                                             \
  template ModelParams<T> build_model(const ModelConfig&, Rng&);                                             \
  template Tensor<T> forward(ModelParams<T>&, const ModelConfig&, const Tensor<T>&, Mode, Rng&,              \
                             ForwardTape<T>*, EncoderTrace<T>*);                                             \
  template Tensor<T> backward(ModelParams<T>&, const ModelConfig&, const ForwardTape<T>&, const Tensor<T>&);

EARU_INSTANTIATE(float)
EARU_INSTANTIATE(double)
#undef EARU_INSTANTIATE

}  // namespace earu
