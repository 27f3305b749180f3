#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "uda/data.hpp"
#include "uda/model.hpp"
#include "uda/train.hpp"

namespace uda {

/// Synthetic source/target benchmark: rendered digits for the source and
/// the same renderer followed by a chain of pixel shifts for the target.
struct SynthConfig {
  std::size_t source_count = 2000;
  std::size_t target_count = 2000;
  std::size_t test_count = 1000;
  std::size_t image_size = 32;
  std::vector<ShiftSpec> shifts{{ShiftKind::brightness_scale, 0.4, 0.0, 0.0}, {ShiftKind::channel_blend, 1.0, 0.3, 0.0}};
  std::uint64_t seed = 7;
};

struct ExperimentConfig {
  SynthConfig synth;
  /// Directory holding synthesized IDX files; empty means the default
  /// data root.
  std::filesystem::path data_dir;
  /// Held-out share of each training pool (S' and T').
  double val_fraction = 0.1;
  EncoderConfig encoder{1, {16, 32, 64}, 64, true};
  TrainConfig train;
  std::filesystem::path out_dir = "runs/default";
};

nlohmann::json shift_to_json(const ShiftSpec& spec);
ShiftSpec shift_from_json(const nlohmann::json& j);
nlohmann::json experiment_to_json(const ExperimentConfig& cfg);
/// Missing keys keep their defaults. ConfigError on malformed values.
ExperimentConfig experiment_from_json(const nlohmann::json& j);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

/// File names inside a synthesized data directory.
namespace files {
inline constexpr const char* source_train_images = "source-train-images.idx";
inline constexpr const char* source_train_labels = "source-train-labels.idx";
inline constexpr const char* source_test_images = "source-test-images.idx";
inline constexpr const char* source_test_labels = "source-test-labels.idx";
inline constexpr const char* target_train_images = "target-train-images.idx";
inline constexpr const char* target_test_images = "target-test-images.idx";
/// Target ground truth, read only by evaluation.
inline constexpr const char* target_test_sidecar = "target-test-labels.eval.idx";
inline constexpr const char* manifest = "manifest.json";
}  // namespace files

/// Renders and writes the benchmark; returns the manifest that was written
/// alongside (shift chain, seed, counts and FNV-1a checksums of every file).
nlohmann::json synthesize(const SynthConfig& cfg, const std::filesystem::path& dir);

/// Loads the training pools and splits off S' and T'. The target test set
/// carries its sidecar labels.
DomainPair load_domain_pair(const std::filesystem::path& dir, double val_fraction, std::uint64_t split_seed);
LabeledSet load_source_test(const std::filesystem::path& dir);
UnlabeledSet load_target_test(const std::filesystem::path& dir);

/// FNV-1a of a file's bytes as 16 hex digits.
std::string file_checksum(const std::filesystem::path& path);

}  // namespace uda
