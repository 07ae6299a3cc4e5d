#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <vector>

#include "earu/checkpoint.hpp"
#include "earu/losses.hpp"
#include "earu/model.hpp"
#include "earu/optim.hpp"
#include "earu/preprocess.hpp"

namespace earu {

struct TrainConfig {
  std::size_t batch_size = 16;
  std::size_t epochs = 60;
  double learning_rate = 0.001;
  AdamHyper adam;
  LossWeights loss{1.0, 1.0};
  std::uint64_t seed = 0;
  bool shuffle = true;
  double validation_fraction = 0.1;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

struct TrainOptions {
  std::optional<std::filesystem::path> checkpoint_path;  // rewritten every epoch
  std::optional<std::filesystem::path> best_path;        // lowest validation (or train) loss
  std::optional<std::filesystem::path> loss_curve_path;
  std::ostream* log = nullptr;                           // epoch=<i> train=<x> val=<y>
};

struct TrainResult {
  LossCurve curve;
  AdamState adam;
  std::string rng_state;
  std::size_t epochs_completed = 0;
  std::vector<std::string> train_cases;
  std::vector<std::string> val_cases;
};

/// Per-case split: a seeded shuffle of the sorted case ids; the first
/// floor(fraction * cases) become validation, at least one case trains.
std::pair<std::vector<std::string>, std::vector<std::string>> split_cases(const std::vector<SlicePair>& data,
                                                                          double validation_fraction,
                                                                          std::uint64_t seed);

/// Stacks slices into (n, 1, size, size) images and targets, resizing to the
/// model input size. Mixed slice sizes raise ShapeError.
std::pair<Tensor<float>, Tensor<float>> assemble_batch(const std::vector<const SlicePair*>& items,
                                                        std::size_t input_h, std::size_t input_w);

/// [begin, end) ranges of consecutive batches over `n` items. The last
/// incomplete batch is kept, except that a single trailing item merges into
/// the batch before it when `deepest_pixels` is 1 (batch norm would then see
/// one value per channel).
std::vector<std::pair<std::size_t, std::size_t>> batch_ranges(std::size_t n, std::size_t batch_size,
                                                              std::size_t deepest_pixels);

/// Adam training. `resume` continues from a checkpoint written by a previous
/// call with the same data and settings; the result then equals an
/// uninterrupted run.
TrainResult train(ModelParams<float>& params, const ModelConfig& cfg, const std::vector<SlicePair>& data,
                  const TrainConfig& tc, const TrainOptions& opt = {}, const Checkpoint* resume = nullptr);

/// Checkpoint of the current training state.
Checkpoint make_checkpoint(ModelParams<float>& params, const ModelConfig& cfg, std::uint64_t epoch,
                           const std::string& rng_state, const std::optional<AdamState>& adam,
                           const LossCurve& curve, const std::string& metadata = "{}");

}  // namespace earu
