#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "uda/rng.hpp"
#include "uda/selfsup.hpp"
#include "uda/tensor.hpp"

namespace uda {

/// Images [N,C,H,W] in [0,1] with class labels.
struct LabeledSet {
  Tensor<float> images;
  std::vector<int> labels;
  int num_classes = 10;

  LabeledSet() = default;
  LabeledSet(Tensor<float> images, std::vector<int> labels, int num_classes = 10);

  std::size_t size() const { return labels.size(); }
  LabeledSet gather(std::span<const std::size_t> rows) const;
};

class SidecarKey;

/// Images without labels. Evaluation-only ground truth may ride along as a
/// sidecar; reading it requires a SidecarKey, which only the evaluation
/// module can construct.
class UnlabeledSet {
 public:
  UnlabeledSet() = default;
  explicit UnlabeledSet(Tensor<float> images);
  UnlabeledSet(Tensor<float> images, std::vector<int> sidecar_labels, int num_classes);

  const Tensor<float>& images() const { return images_; }
  std::size_t size() const { return images_.rank() ? images_.dim(0) : 0; }

  bool has_sidecar() const { return sidecar_.has_value(); }
  const std::vector<int>& sidecar(const SidecarKey&) const;
  int num_classes() const { return num_classes_; }

  UnlabeledSet without_sidecar() const { return UnlabeledSet(images_); }
  /// Keeps the sidecar aligned with the selected rows.
  UnlabeledSet gather(std::span<const std::size_t> rows) const;
  /// Same sidecar, new pixels of identical leading extent.
  UnlabeledSet with_images(Tensor<float> images) const;

 private:
  Tensor<float> images_;
  std::optional<std::vector<int>> sidecar_;
  int num_classes_ = 0;
};

namespace eval_access {
struct Gate;
}

class SidecarKey {
 private:
  SidecarKey() = default;
  friend struct eval_access::Gate;
};

/// Everything one adaptation run sees. Target splits used for training and
/// selection never carry a sidecar; only target_test may.
struct DomainPair {
  LabeledSet source_train;   // S
  LabeledSet source_val;     // labeled source validation (w); its images are S'
  UnlabeledSet target_train; // T
  UnlabeledSet target_val;   // T'
  UnlabeledSet target_test;  // evaluation only

  const Tensor<float>& source_val_unlabeled() const { return source_val.images; }
  void validate() const;
};

// --- IDX files -----------------------------------------------------------

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

/// Big-endian IDX image file -> [N,1,H,W] with pixel p mapped to p / 255.
Tensor<float> read_idx_images(const std::filesystem::path& path);
std::vector<int> read_idx_labels(const std::filesystem::path& path);
/// Pixels are quantised as round(255 * clamp(x, 0, 1)). Single channel only.
void write_idx_images(const std::filesystem::path& path, const Tensor<float>& images);
void write_idx_labels(const std::filesystem::path& path, std::span<const int> labels);

LabeledSet load_labeled_idx(const std::filesystem::path& images, const std::filesystem::path& labels, int num_classes = 10);
/// Optional sidecar labels for evaluation.
UnlabeledSet load_unlabeled_idx(const std::filesystem::path& images,
                                const std::optional<std::filesystem::path>& sidecar = std::nullopt,
                                int num_classes = 10);

/// Centres images on a larger zero canvas (e.g. 28x28 digits onto 32x32).
Tensor<float> pad_images(const Tensor<float>& images, std::size_t height, std::size_t width);

// --- domain shifts -------------------------------------------------------

enum class ShiftKind { brightness_scale, channel_blend, additive_noise };

std::string shift_name(ShiftKind kind);
ShiftKind parse_shift_kind(const std::string& name);

struct ShiftSpec {
  ShiftKind kind = ShiftKind::brightness_scale;
  double alpha = 1.0;  // brightness_scale
  double beta = 0.0;   // channel_blend
  double sigma = 0.0;  // additive_noise

  void validate() const;
};

/// brightness_scale: clamp(alpha x, 0, 1); channel_blend: (1-beta) x + beta
/// field, with a per-image texture field in [0,1]; additive_noise:
/// clamp(x + N(0, sigma^2), 0, 1). Identity parameters return the input
/// unchanged.
Tensor<float> apply_shift(const Tensor<float>& images, const ShiftSpec& spec, std::uint64_t seed);
LabeledSet apply_shift(const LabeledSet& set, const ShiftSpec& spec, std::uint64_t seed);
UnlabeledSet apply_shift(const UnlabeledSet& set, const ShiftSpec& spec, std::uint64_t seed);

/// Texture for one image: value noise summed over 4x4, 8x8 and 16x16
/// grids with halving amplitude, stretched to span [0,1].
Tensor<float> blend_field(std::size_t channels, std::size_t height, std::size_t width, std::uint64_t seed);

// --- splitting and batching ---------------------------------------------

/// Disjoint index sets covering [0, n), sized by the cumulative rounded
/// fractions of a seeded permutation.
std::vector<std::vector<std::size_t>> split_indices(std::size_t n, std::span<const double> fractions, std::uint64_t seed);
std::vector<LabeledSet> split(const LabeledSet& set, std::span<const double> fractions, std::uint64_t seed);
std::vector<UnlabeledSet> split(const UnlabeledSet& set, std::span<const double> fractions, std::uint64_t seed);

struct BalancedBatch {
  std::vector<std::size_t> source;
  std::vector<std::size_t> target;

  std::vector<Domain> provenance() const;
};

/// Endless stream of batches with batch_size / 2 source rows and
/// batch_size / 2 target rows. Each domain is drawn as a concatenation of
/// seeded permutations, so every index is used once before any is reused and
/// the smaller domain recycles rather than being truncated.
class BalancedBatches {
 public:
  BalancedBatches(std::size_t source_size, std::size_t target_size, std::size_t batch_size, std::uint64_t seed);

  /// Full batches covering the larger domain without reuse,
  /// max(1, floor(max(|S|, |T|) / (batch_size / 2))). The partial tail is dropped.
  std::size_t batches_per_epoch() const;
  std::size_t half() const { return half_; }
  BalancedBatch next();

 private:
  struct Cycle {
    std::size_t size;
    Rng rng;
    std::vector<std::size_t> order;
    std::size_t pos = 0;

    void fill(std::vector<std::size_t>& out, std::size_t count);
  };

  std::size_t half_;
  Cycle source_;
  Cycle target_;
};

/// Row gather that also stacks a source and a target selection.
Tensor<float> gather_balanced(const Tensor<float>& source_images, const Tensor<float>& target_images,
                              const BalancedBatch& batch);

}  // namespace uda
