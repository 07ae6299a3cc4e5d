#pragma once

// JSON form of every numeric setting. Missing keys keep their defaults;
// unknown keys are rejected.

#include <json.hpp>

#include "earu/augment.hpp"
#include "earu/inference.hpp"
#include "earu/model.hpp"
#include "earu/preprocess.hpp"
#include "earu/trainer.hpp"

namespace earu {

inline constexpr int kConfigSchemaVersion = 1;

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  PreprocessConfig preprocess;
  AugmentConfig augment;
  InferenceConfig inference;
  bool operator==(const RunConfig&) const = default;

  void validate() const;
};

nlohmann::json to_json(const ModelConfig& c);
/// Explicit "stages" override the plan; otherwise it is derived from the
/// multipliers and input size.
ModelConfig model_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});
nlohmann::json to_json(const PreprocessConfig& c);
PreprocessConfig preprocess_config_from_json(const nlohmann::json& j, PreprocessConfig base = {});
nlohmann::json to_json(const AugmentConfig& c);
AugmentConfig augment_config_from_json(const nlohmann::json& j, AugmentConfig base = {});
nlohmann::json to_json(const InferenceConfig& c);
InferenceConfig inference_config_from_json(const nlohmann::json& j, InferenceConfig base = {});

nlohmann::json to_json(const RunConfig& c);
RunConfig run_config_from_json(const nlohmann::json& j);

}  // namespace earu
