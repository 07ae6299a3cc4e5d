#include "earu/config.hpp"

#include <set>

namespace earu {

using nlohmann::json;

namespace {

void check_keys(const json& j, const char* section, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(std::string(section) + ": expected a JSON object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, _] : j.items()) {
    if (!ok.count(key)) throw ConfigError(std::string(section) + ": unknown key '" + key + "'");
  }
}

template <typename T>
void read(const json& j, const char* section, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string(section) + "." + key + ": wrong type (" + j.at(key).dump() + ")");
  }
}

}  // namespace

json to_json(const ModelConfig& c) {
  json stages = json::array();
  for (const auto& s : c.stages) {
    stages.push_back({{"op", std::string(to_string(s.op))},
                      {"kernel", s.kernel},
                      {"stride", s.stride},
                      {"out_channels", s.out_channels},
                      {"layers", s.layers},
                      {"expansion", s.expansion}});
  }
  return {{"input_size", {c.input_h, c.input_w}},
          {"width_mult", c.width_mult},
          {"depth_mult", c.depth_mult},
          {"stages", stages},
          {"decoder_channels", c.decoder_channels},
          {"skip_stages", c.skip_stages},
          {"drop_connect_rate", c.drop_connect_rate},
          {"bn_eps", c.bn_eps},
          {"bn_momentum", c.bn_momentum}};
}

ModelConfig model_config_from_json(const json& j) {
  const char* sec = "model";
  check_keys(j, sec,
             {"input_size", "width_mult", "depth_mult", "stages", "decoder_channels", "skip_stages",
              "drop_connect_rate", "bn_eps", "bn_momentum"});
  ModelConfig base;
  std::array<std::size_t, 2> input{base.input_h, base.input_w};
  read(j, sec, "input_size", input);
  read(j, sec, "width_mult", base.width_mult);
  read(j, sec, "depth_mult", base.depth_mult);
  if (input[0] != input[1]) throw ConfigError("model.input_size: only square inputs are supported");
  ModelConfig c = make_config(base.width_mult, base.depth_mult, input[0]);
  if (j.contains("stages")) {
    const json& st = j.at("stages");
    if (!st.is_array() || st.size() != 9) throw ConfigError("model.stages: expected 9 stage records");
    for (std::size_t i = 0; i < 9; ++i) {
      const json& s = st[i];
      check_keys(s, "model.stages[]", {"op", "kernel", "stride", "out_channels", "layers", "expansion"});
      std::string op = std::string(to_string(c.stages[i].op));
      read(s, "model.stages[]", "op", op);
      c.stages[i].op = stage_op_from_string(op);
      read(s, "model.stages[]", "kernel", c.stages[i].kernel);
      read(s, "model.stages[]", "stride", c.stages[i].stride);
      read(s, "model.stages[]", "out_channels", c.stages[i].out_channels);
      read(s, "model.stages[]", "layers", c.stages[i].layers);
      read(s, "model.stages[]", "expansion", c.stages[i].expansion);
    }
  }
  read(j, sec, "decoder_channels", c.decoder_channels);
  read(j, sec, "skip_stages", c.skip_stages);
  read(j, sec, "drop_connect_rate", c.drop_connect_rate);
  read(j, sec, "bn_eps", c.bn_eps);
  read(j, sec, "bn_momentum", c.bn_momentum);
  c.validate();
  return c;
}

json to_json(const TrainConfig& c) {
  return {{"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"learning_rate", c.learning_rate},
          {"adam_beta1", c.adam.beta1},
          {"adam_beta2", c.adam.beta2},
          {"adam_eps", c.adam.eps},
          {"loss_weights", {{"bce", c.loss.w_bce}, {"dice", c.loss.w_dice}}},
          {"seed", c.seed},
          {"shuffle", c.shuffle},
          {"validation_fraction", c.validation_fraction}};
}

TrainConfig train_config_from_json(const json& j, TrainConfig c) {
  const char* sec = "train";
  check_keys(j, sec,
             {"batch_size", "epochs", "learning_rate", "adam_beta1", "adam_beta2", "adam_eps", "loss_weights", "seed",
              "shuffle", "validation_fraction"});
  read(j, sec, "batch_size", c.batch_size);
  read(j, sec, "epochs", c.epochs);
  read(j, sec, "learning_rate", c.learning_rate);
  read(j, sec, "adam_beta1", c.adam.beta1);
  read(j, sec, "adam_beta2", c.adam.beta2);
  read(j, sec, "adam_eps", c.adam.eps);
  if (j.contains("loss_weights")) {
    const json& w = j.at("loss_weights");
    check_keys(w, "train.loss_weights", {"bce", "dice"});
    read(w, "train.loss_weights", "bce", c.loss.w_bce);
    read(w, "train.loss_weights", "dice", c.loss.w_dice);
  }
  read(j, sec, "seed", c.seed);
  read(j, sec, "shuffle", c.shuffle);
  read(j, sec, "validation_fraction", c.validation_fraction);
  return c;
}

json to_json(const PreprocessConfig& c) {
  return {{"hu_lo", c.hu_lo},
          {"hu_hi", c.hu_hi},
          {"hist_bins", c.hist_bins},
          {"target_sz_mm", c.target_sz},
          {"crop_margin", c.crop_margin},
          {"slice_size", c.slice_size}};
}

PreprocessConfig preprocess_config_from_json(const json& j, PreprocessConfig c) {
  const char* sec = "preprocess";
  check_keys(j, sec, {"hu_lo", "hu_hi", "hist_bins", "target_sz_mm", "crop_margin", "slice_size"});
  read(j, sec, "hu_lo", c.hu_lo);
  read(j, sec, "hu_hi", c.hu_hi);
  read(j, sec, "hist_bins", c.hist_bins);
  read(j, sec, "target_sz_mm", c.target_sz);
  read(j, sec, "crop_margin", c.crop_margin);
  read(j, sec, "slice_size", c.slice_size);
  return c;
}

json to_json(const AugmentConfig& c) {
  return {{"zoom_min", c.zoom_min},
          {"zoom_max", c.zoom_max},
          {"elastic_sigma_px", c.elastic_sigma},
          {"elastic_alpha_px", c.elastic_alpha}};
}

AugmentConfig augment_config_from_json(const json& j, AugmentConfig c) {
  const char* sec = "augment";
  check_keys(j, sec, {"zoom_min", "zoom_max", "elastic_sigma_px", "elastic_alpha_px"});
  read(j, sec, "zoom_min", c.zoom_min);
  read(j, sec, "zoom_max", c.zoom_max);
  read(j, sec, "elastic_sigma_px", c.elastic_sigma);
  read(j, sec, "elastic_alpha_px", c.elastic_alpha);
  return c;
}

json to_json(const InferenceConfig& c) {
  return {{"threshold", c.threshold}, {"batch_slices", c.batch_slices}};
}

InferenceConfig inference_config_from_json(const json& j, InferenceConfig c) {
  const char* sec = "inference";
  check_keys(j, sec, {"threshold", "batch_slices"});
  read(j, sec, "threshold", c.threshold);
  read(j, sec, "batch_slices", c.batch_slices);
  return c;
}

void RunConfig::validate() const {
  model.validate();
  train.validate();
  preprocess.validate();
  augment.validate();
  inference.validate();
}

json to_json(const RunConfig& c) {
  return {{"schema_version", kConfigSchemaVersion},
          {"model", to_json(c.model)},
          {"train", to_json(c.train)},
          {"preprocess", to_json(c.preprocess)},
          {"augment", to_json(c.augment)},
          {"inference", to_json(c.inference)}};
}

RunConfig run_config_from_json(const json& j) {
  check_keys(j, "config", {"schema_version", "model", "train", "preprocess", "augment", "inference"});
  if (j.contains("schema_version")) {
    if (!j.at("schema_version").is_number_integer() || j.at("schema_version").get<int>() != kConfigSchemaVersion) {
      throw ConfigError("config: unsupported schema_version " + j.at("schema_version").dump());
    }
  }
  RunConfig c;
  if (j.contains("model")) c.model = model_config_from_json(j.at("model"));
  if (j.contains("train")) c.train = train_config_from_json(j.at("train"));
  if (j.contains("preprocess")) c.preprocess = preprocess_config_from_json(j.at("preprocess"));
  if (j.contains("augment")) c.augment = augment_config_from_json(j.at("augment"));
  if (j.contains("inference")) c.inference = inference_config_from_json(j.at("inference"));
  c.validate();
  return c;
}

}  // namespace earu
