#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "uda/rng.hpp"
#include "uda/tape.hpp"

namespace uda {

enum class TaskKind { rotation, vflip, loc4, loc_regress };

std::string task_name(TaskKind kind);
/// Parses rotation | flip | vflip | loc4 | loc_regress.
TaskKind parse_task_kind(const std::string& name);

/// A self-supervised task. Ids start at 1; id 0 is the main task.
struct TaskSpec {
  int id = 1;
  TaskKind kind = TaskKind::rotation;
  /// Side of the square crop for location tasks; 0 means half the image.
  std::size_t patch_size = 0;
  /// Rotation only: emit all four rotations of every image instead of one
  /// sampled rotation.
  bool all_rotations = false;

  std::size_t output_dim() const;
  bool is_regression() const { return kind == TaskKind::loc_regress; }
};

enum class Domain : unsigned char { source = 0, target = 1 };

/// Transformed images with synthesized labels. The original class labels
/// never enter a batch.
struct SelfSupBatch {
  Tensor<float> images;
  /// Classification tasks.
  std::vector<int> labels;
  /// loc_regress: [N,2] normalised crop corners.
  Tensor<float> targets;
  std::vector<Domain> provenance;

  std::size_t size() const { return provenance.size(); }
};

// --- image transforms on [C,H,W] ---------------------------------------

/// k quarter turns counterclockwise. One turn maps out[i][j] = in[j][W-1-i].
template <class T>
Tensor<T> rotate90(const Tensor<T>& image, int k);

/// Reverses the row order.
template <class T>
Tensor<T> vflip(const Tensor<T>& image);

/// Copies the size x size block with top-left corner (row, col).
template <class T>
Tensor<T> crop(const Tensor<T>& image, std::size_t row, std::size_t col, std::size_t size);

/// Index 2 * row_half + col_half for quadrants (0,0), (0,1), (1,0), (1,1).
inline int quadrant_label(int row_half, int col_half) { return 2 * row_half + col_half; }

/// Normalised crop corner (r / (H - p), c / (W - p)).
std::array<float, 2> corner_to_target(std::size_t row, std::size_t col, std::size_t h, std::size_t w, std::size_t patch);
/// Inverse of corner_to_target on the integer grid.
std::array<std::size_t, 2> target_to_corner(std::array<float, 2> target, std::size_t h, std::size_t w, std::size_t patch);

// --- batch construction on [N,C,H,W] -----------------------------------

SelfSupBatch make_rotation_batch(const Tensor<float>& images, std::span<const Domain> provenance, Rng& rng,
                                 bool all_rotations = false);
SelfSupBatch make_flip_batch(const Tensor<float>& images, std::span<const Domain> provenance, Rng& rng);
SelfSupBatch make_loc4_batch(const Tensor<float>& images, std::span<const Domain> provenance, std::size_t patch_size,
                             Rng& rng);
SelfSupBatch make_loc_regress_batch(const Tensor<float>& images, std::span<const Domain> provenance,
                                    std::size_t patch_size, Rng& rng);

/// Dispatches on task kind.
SelfSupBatch make_task_batch(const TaskSpec& task, const Tensor<float>& images, std::span<const Domain> provenance,
                             Rng& rng);

/// Cross entropy for classification kinds, square loss for loc_regress.
template <class T>
Var task_loss(Tape<T>& tape, const TaskSpec& task, Var head_output, const SelfSupBatch& batch);

}  // namespace uda
