#pragma once

// Binary checkpoint: "EARU" | u32 version | u64 payload length | payload |
// u32 CRC-32 of the payload. All scalars little-endian; parameters float32.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "earu/io_util.hpp"
#include "earu/model.hpp"
#include "earu/optim.hpp"

namespace earu {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct ParamRecord {
  std::string name;
  ParamKind kind = ParamKind::trainable;
  Shape shape;
  std::vector<float> data;
  bool operator==(const ParamRecord&) const = default;
};

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  ModelConfig config;
  std::uint64_t epoch = 0;
  std::string rng_state;
  std::string metadata;  // free-form JSON (training settings)
  std::vector<ParamRecord> params;
  std::optional<AdamState> adam;
  LossCurve curve;
  bool operator==(const Checkpoint&) const = default;
};

/// Copies every named tensor (parameters and buffers).
std::vector<ParamRecord> capture_params(ModelParams<float>& params);
/// Overwrites `params` from the records; names, kinds and shapes must match
/// exactly (StateError otherwise). Gradient buffers are cleared.
void restore_params(const std::vector<ParamRecord>& records, ModelParams<float>& params);
/// Builds the model described by the checkpoint and loads its tensors.
ModelParams<float> params_from_checkpoint(const Checkpoint& ckpt);

Bytes serialize_checkpoint(const Checkpoint& ckpt);
/// Parses and validates everything before returning. FormatError on bad
/// magic, length or CRC; VersionError on an unknown version.
Checkpoint deserialize_checkpoint(const Bytes& bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace earu
