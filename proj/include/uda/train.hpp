#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "uda/data.hpp"
#include "uda/model.hpp"
#include "uda/optim.hpp"
#include "uda/selfsup.hpp"

namespace uda {

enum class StepMode { per_task_loop, joint_step };

std::string step_mode_name(StepMode mode);
StepMode parse_step_mode(const std::string& name);

SgdConfig default_sgd_config();

struct TrainConfig {
  /// Auxiliary tasks k = 1..K; empty is the source-only baseline.
  std::vector<TaskSpec> tasks;
  std::size_t epochs = 30;
  std::size_t batch_size = 128;
  SgdConfig optimizer = default_sgd_config();
  StepMode mode = StepMode::per_task_loop;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Main head plus one head per task.
std::vector<HeadConfig> head_configs(const TrainConfig& cfg, int num_classes);

/// Stream identifiers mixed with the run seed and the epoch.
namespace stream {
inline constexpr std::uint64_t main_batches = 0xA11;
inline constexpr std::uint64_t balanced = 0xB00;
inline constexpr std::uint64_t transforms = 0xC00;
}  // namespace stream

/// Labeled source batches of one epoch, cut from a fresh permutation. A
/// trailing partial batch is dropped unless it is the only batch; its rows
/// come back in later epochs.
std::vector<std::vector<std::size_t>> main_batches(std::size_t source_size, std::size_t batch_size,
                                                   std::uint64_t seed, std::size_t epoch);

/// Cross entropy of h_0(phi(x)) against y.
Var main_loss(Tape<float>& tape, Model<float>& model, const Tensor<float>& images, std::span<const int> labels);

struct SelfSupLoss {
  Var total;
  /// Mean loss over the source rows and over the target rows.
  double source = 0;
  double target = 0;
};

/// Task loss of head k over a batch drawn from both domains. The batch must
/// hold as many source rows as target rows (ConsistencyError otherwise).
SelfSupLoss selfsup_loss(Tape<float>& tape, Model<float>& model, const TaskSpec& task, const SelfSupBatch& batch);

struct EpochRecord {
  std::size_t epoch = 0;
  double v = 0;
  double w = 0;
  double learning_rate = 0;
  /// Mean training loss per slot: main task first, then tasks in order.
  std::vector<double> losses;
  std::size_t steps = 0;
  std::string checkpoint;
};

struct TrainingLog {
  std::vector<std::string> loss_names;
  std::vector<EpochRecord> epochs;

  std::vector<double> v() const;
  std::vector<double> w() const;
};

/// One pass over the labeled source set. per_task_loop: for each slot one
/// step per task on a fresh balanced batch, then one step on the main batch.
/// joint_step: a single step on the summed losses of the same batches.
/// Returns the per-slot mean losses and the number of optimizer steps.
std::pair<std::vector<double>, std::size_t> train_epoch(Model<float>& model, Sgd<float>& optimizer,
                                                         const DomainPair& data, const TrainConfig& cfg,
                                                         std::size_t epoch);

/// Error of the main head on a labeled set, in eval mode.
double classification_error(const Model<float>& model, const LabeledSet& set);

struct FitOptions {
  /// Receives log.csv and one checkpoint per epoch when set.
  std::optional<std::filesystem::path> out_dir;
  /// Continue a run from the checkpoint of a finished epoch.
  std::optional<std::filesystem::path> resume_from;
  /// Called after every epoch with the fresh record and the current model.
  std::function<void(const EpochRecord&, const Model<float>&)> on_epoch;
};

struct FitResult {
  Model<float> model;
  TrainingLog log;
};

/// Trains for cfg.epochs epochs, measuring v on (S', T') and w on the
/// labeled source validation set after each. Deterministic in cfg.seed.
FitResult fit(const DomainPair& data, const EncoderConfig& encoder, const TrainConfig& cfg,
              const FitOptions& options = {});

void write_training_csv(const std::filesystem::path& path, const TrainingLog& log);

nlohmann::json train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

}  // namespace uda
