#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "uda/model.hpp"

namespace uda {

/// Euclidean distance between the mean rows of two feature matrices [N,D],
/// accumulated in double precision.
double mean_distance(const Tensor<float>& source_features, const Tensor<float>& target_features);

/// Same distance on eval-mode encoder features. Images are encoded in chunks;
/// no gradients are recorded and the model is not modified.
double mean_distance(const Model<float>& model, const Tensor<float>& source_images, const Tensor<float>& target_images,
                     std::size_t chunk = 256);

/// u = v / min(v) + w / min(w). A zero minimum is replaced by the smallest
/// positive entry; an all-zero vector contributes 1 per entry.
std::vector<double> combine(std::span<const double> v, std::span<const double> w);

/// Index of the smallest entry; the earliest wins ties.
std::size_t early_stop(std::span<const double> u);

/// Per-epoch measurements of one run as read back from a training log.
struct RunTrace {
  std::vector<double> v;
  std::vector<double> w;
  std::vector<std::string> checkpoints;
};

struct Selection {
  std::size_t run = 0;
  std::size_t epoch = 0;
  double score = 0;
  std::vector<double> u;
};

/// Normalizes within each run, then picks the run whose minimum combined
/// score is smallest (first run on ties) and that run's early-stop epoch.
Selection select_run(std::span<const RunTrace> runs);

/// Reads the epoch CSV written by the trainer. ParseError on malformed input.
RunTrace read_training_csv(const std::filesystem::path& path);

/// Writes the chosen run and epoch and the per-epoch v, w, u trace as JSON.
void write_selection_report(const std::filesystem::path& path, const Selection& selection,
                            std::span<const RunTrace> runs, std::span<const std::string> run_names);

}  // namespace uda
