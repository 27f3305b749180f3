#pragma once

#include <filesystem>
#include <map>
#include <string>

#include <nlohmann/json.hpp>

#include "uda/model.hpp"
#include "uda/optim.hpp"

namespace uda {

inline constexpr char kCheckpointMagic[8] = {'U', 'D', 'A', 'C', 'K', 'P', 'T', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Named fp32 tensors plus a JSON metadata block.
///
/// File layout, little endian:
///   magic "UDACKPT1" | u32 version | u64 meta bytes | meta JSON
///   u64 tensor count | per tensor: u32 name bytes, name, u32 rank,
///   rank x u64 extents, raw float32 data | u64 FNV-1a of all prior bytes
/// Tensor names carry a prefix: "param:", "buffer:" or "momentum:".
struct Checkpoint {
  nlohmann::json meta;
  std::map<std::string, Tensor<float>> tensors;
};

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
/// IoError if unreadable, FormatError on a bad magic, truncation or checksum
/// mismatch, VersionError on an unknown version.
Checkpoint read_checkpoint(const std::filesystem::path& path);

nlohmann::json encoder_to_json(const EncoderConfig& cfg);
EncoderConfig encoder_from_json(const nlohmann::json& j);
nlohmann::json heads_to_json(const std::vector<HeadConfig>& heads);
std::vector<HeadConfig> heads_from_json(const nlohmann::json& j);

/// Captures parameters, batch-norm moments and momentum buffers. The meta
/// block gains "encoder", "heads" and "optimizer_steps" entries.
Checkpoint capture(Model<float>& model, const Sgd<float>& optimizer, nlohmann::json meta);

/// Builds a model with the architecture recorded in the checkpoint.
Model<float> model_from_checkpoint(const Checkpoint& ckpt);

/// Copies stored tensors into the model. VersionError if the architecture
/// recorded in the checkpoint differs from the model's, or a tensor is
/// missing or misshapen.
void restore_model(Model<float>& model, const Checkpoint& ckpt);
void restore_optimizer(Sgd<float>& optimizer, const Checkpoint& ckpt);

}  // namespace uda
