#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "uda/data.hpp"
#include "uda/model.hpp"

namespace uda {

struct EvalReport {
  std::size_t num_classes = 0;
  std::size_t total = 0;
  std::size_t correct = 0;
  double accuracy = 0;
  /// Row = true class, column = predicted class.
  std::vector<std::vector<std::size_t>> confusion;
  /// NaN for classes absent from the test set.
  std::vector<double> per_class;
  /// Identity of the evaluated images and labels.
  std::uint64_t test_checksum = 0;
};

/// Scores predictions against ground truth.
EvalReport score(std::span<const int> predicted, std::span<const int> truth, int num_classes, std::uint64_t test_checksum);

/// Main-head accuracy on a held-out set whose labels ride in the sidecar.
/// UsageError if the set carries none.
EvalReport accuracy(const Model<float>& model, const UnlabeledSet& test);
/// Main-head accuracy on a labeled set.
EvalReport accuracy(const Model<float>& model, const LabeledSet& test);

/// Order-independent checksum of images and labels.
std::uint64_t test_set_checksum(const Tensor<float>& images, std::span<const int> labels);

struct DeltaReport {
  double overall = 0;
  std::vector<double> per_class;
  std::size_t improved = 0;
  std::size_t worsened = 0;
  std::size_t unchanged = 0;
};

/// adapted - baseline. UsageError if the reports come from different test sets.
DeltaReport compare(const EvalReport& baseline, const EvalReport& adapted);

void write_report_csv(const std::filesystem::path& path, const EvalReport& report);
void write_report_json(const std::filesystem::path& path, const EvalReport& report);
EvalReport read_report_json(const std::filesystem::path& path);
void write_delta_json(const std::filesystem::path& path, const DeltaReport& delta);

}  // namespace uda
