#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "uda/checkpoint.hpp"
#include "uda/eval.hpp"
#include "uda/experiment.hpp"
#include "uda/select.hpp"
#include "uda/train.hpp"

namespace fs = std::filesystem;
using namespace uda;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitDiverged = 1;
constexpr int kExitUsage = 2;

constexpr const char* kDataRootEnv = "UDA_DATA_ROOT";

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> tasks;
  std::optional<std::string> mode;
  std::optional<std::size_t> epochs;
  std::optional<std::string> out;
  std::optional<std::string> data;
};

std::vector<TaskSpec> parse_tasks(const std::string& list) {
  std::vector<TaskSpec> tasks;
  std::stringstream ss(list);
  std::string name;
  while (std::getline(ss, name, ',')) {
    if (name.empty()) continue;
    if (name == "none") {
      if (list != "none") throw UsageError("'none' cannot be combined with other tasks");
      return {};
    }
    tasks.push_back(TaskSpec{static_cast<int>(tasks.size()) + 1, parse_task_kind(name)});
  }
  if (tasks.empty()) throw UsageError("--tasks needs at least one entry or 'none'");
  return tasks;
}

ExperimentConfig resolve(const Overrides& o) {
  ExperimentConfig cfg = o.config.empty() ? ExperimentConfig{} : load_experiment_config(o.config);
  if (o.seed) cfg.train.seed = *o.seed;
  if (o.tasks) cfg.train.tasks = parse_tasks(*o.tasks);
  if (o.mode) cfg.train.mode = parse_step_mode(*o.mode);
  if (o.epochs) cfg.train.epochs = *o.epochs;
  if (o.out) cfg.out_dir = *o.out;
  if (o.data) cfg.data_dir = *o.data;
  cfg.train.validate();
  return cfg;
}

fs::path data_dir(const ExperimentConfig& cfg) {
  if (!cfg.data_dir.empty()) return cfg.data_dir;
  if (const char* root = std::getenv(kDataRootEnv)) return root;
  throw UsageError(std::string("no data directory: pass --data, set data_dir in the config or set ") + kDataRootEnv);
}

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "Experiment config (JSON)")->check(CLI::ExistingFile);
  cmd->add_option("--seed", o.seed, "Training seed");
  cmd->add_option("--out", o.out, "Output directory");
  cmd->add_option("--data", o.data, "Synthesized data directory");
}

int cmd_synth(const Overrides& o) {
  ExperimentConfig cfg = resolve(o);
  if (o.seed) cfg.synth.seed = *o.seed;
  const fs::path dir = o.out ? fs::path(*o.out) : data_dir(cfg);
  const auto manifest = synthesize(cfg.synth, dir);
  std::cout << "wrote " << dir.string() << " (seed " << cfg.synth.seed << ", " << manifest["shifts"].size()
            << " shifts)\n";
  return kExitOk;
}

int cmd_train(const Overrides& o, const std::optional<std::string>& resume) {
  const ExperimentConfig cfg = resolve(o);
  const DomainPair data = load_domain_pair(data_dir(cfg), cfg.val_fraction, cfg.synth.seed);
  fs::create_directories(cfg.out_dir);
  {
    std::ofstream out(cfg.out_dir / "config.json");
    out << experiment_to_json(cfg).dump(2) << '\n';
  }
  FitOptions options;
  options.out_dir = cfg.out_dir;
  if (resume) options.resume_from = *resume;
  options.on_epoch = [](const EpochRecord& r, const Model<float>&) {
    std::cout << "epoch " << r.epoch << "  v " << r.v << "  w " << r.w << "  lr " << r.learning_rate << '\n';
  };
  try {
    fit(data, cfg.encoder, cfg.train, options);
    std::cout << "log " << (cfg.out_dir / "log.csv").string() << '\n';
  } catch (const DivergenceError& e) {
    std::cerr << "uda train: " << e.what() << '\n';
    return kExitDiverged;
  }
  return kExitOk;
}

fs::path log_path(const fs::path& p) { return fs::is_directory(p) ? p / "log.csv" : p; }

int cmd_select(const std::vector<std::string>& logs, const std::optional<std::string>& out) {
  std::vector<RunTrace> runs;
  for (const auto& l : logs) runs.push_back(read_training_csv(log_path(l)));
  const Selection s = select_run(runs);
  std::cout << "run " << logs[s.run] << "\nepoch " << s.epoch << "\ncheckpoint " << runs[s.run].checkpoints[s.epoch]
            << "\nu";
  for (double u : s.u) std::cout << ' ' << u;
  std::cout << '\n';
  const fs::path report = out ? fs::path(*out) : log_path(logs[s.run]).parent_path() / "selection.json";
  write_selection_report(report, s, runs, logs);
  return kExitOk;
}

int cmd_eval(const Overrides& o, const std::string& checkpoint, const std::optional<std::string>& images,
             const std::optional<std::string>& sidecar, const std::optional<std::string>& baseline) {
  const Checkpoint ckpt = read_checkpoint(checkpoint);
  if (!o.config.empty()) {
    const ExperimentConfig cfg = resolve(o);
    if (encoder_from_json(ckpt.meta.value("encoder", nlohmann::json::object())) != cfg.encoder) {
      throw VersionError("checkpoint " + checkpoint + " does not match the encoder in " + o.config);
    }
  }
  const Model<float> model = model_from_checkpoint(ckpt);
  UnlabeledSet test;
  if (images) {
    test = load_unlabeled_idx(*images, sidecar ? std::optional<fs::path>(*sidecar) : std::nullopt);
  } else {
    ExperimentConfig cfg = o.config.empty() ? ExperimentConfig{} : resolve(o);
    if (o.data) cfg.data_dir = *o.data;
    const fs::path dir = data_dir(cfg);
    test = load_unlabeled_idx(dir / files::target_test_images, dir / files::target_test_sidecar);
  }
  const EvalReport report = accuracy(model, test);
  const fs::path out = o.out ? fs::path(*o.out) : fs::path(checkpoint).parent_path();
  fs::create_directories(out);
  const std::string stem = fs::path(checkpoint).stem().string();
  write_report_csv(out / (stem + ".eval.csv"), report);
  write_report_json(out / (stem + ".eval.json"), report);
  std::cout << "accuracy " << report.accuracy << " (" << report.correct << "/" << report.total << ")\n";
  if (baseline) {
    const DeltaReport delta = compare(read_report_json(*baseline), report);
    write_delta_json(out / (stem + ".delta.json"), delta);
    std::cout << "delta " << delta.overall << "  improved " << delta.improved << "  worsened " << delta.worsened
              << "  unchanged " << delta.unchanged << '\n';
  }
  return kExitOk;
}

int cmd_report(const std::string& run, bool audit, const Overrides& o) {
  const fs::path dir(run);
  std::ifstream in(dir / "log.csv");
  if (!in) throw IoError("no log.csv in " + dir.string());
  std::string header_line;
  std::getline(in, header_line);
  std::vector<std::string> header;
  {
    std::stringstream ss(header_line);
    for (std::string c; std::getline(ss, c, ',');) header.push_back(c);
  }
  std::vector<std::string> rows;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty()) rows.push_back(line);
  }
  const RunTrace trace = read_training_csv(dir / "log.csv");
  const auto u = combine(trace.v, trace.w);

  std::optional<UnlabeledSet> target_test;
  if (audit) {
    ExperimentConfig cfg;
    if (fs::exists(dir / "config.json")) cfg = load_experiment_config(dir / "config.json");
    if (o.data) cfg.data_dir = *o.data;
    const fs::path data = data_dir(cfg);
    target_test = load_unlabeled_idx(data / files::target_test_images, data / files::target_test_sidecar);
  }

  std::ofstream out(dir / "report.csv");
  if (!out) throw IoError("cannot write " + (dir / "report.csv").string());
  out << "epoch,v,w,u";
  for (const auto& h : header) {
    if (h.starts_with("loss_")) out << ',' << h;
  }
  if (audit) out << ",target_error";
  out << '\n';
  for (std::size_t e = 0; e < rows.size(); ++e) {
    std::vector<std::string> cells;
    std::stringstream ss(rows[e]);
    for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
    out << e << ',' << trace.v[e] << ',' << trace.w[e] << ',' << u[e];
    for (std::size_t c = 0; c < header.size(); ++c) {
      if (header[c].starts_with("loss_")) out << ',' << cells.at(c);
    }
    if (audit) {
      const Model<float> model = model_from_checkpoint(read_checkpoint(dir / trace.checkpoints[e]));
      out << ',' << 1.0 - accuracy(model, *target_test).accuracy;
    }
    out << '\n';
  }
  std::cout << "wrote " << (dir / "report.csv").string() << " (" << rows.size() << " epochs)\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Domain adaptation through self-supervised auxiliary tasks"};
  app.require_subcommand(1);

  Overrides synth_o, train_o, eval_o, report_o;
  auto* synth = app.add_subcommand("synth", "Render the synthetic source/target benchmark as IDX files");
  add_common(synth, synth_o);

  std::optional<std::string> resume;
  auto* train = app.add_subcommand("train", "Train a model and log v, w and losses per epoch");
  add_common(train, train_o);
  train->add_option("--tasks", train_o.tasks, "Comma list of rotation|flip|loc4|loc_regress, or none");
  train->add_option("--mode", train_o.mode, "per_task_loop or joint_step");
  train->add_option("--epochs", train_o.epochs, "Number of epochs");
  train->add_option("--resume", resume, "Continue from an epoch checkpoint")->check(CLI::ExistingFile);

  std::vector<std::string> logs;
  std::optional<std::string> select_out;
  auto* select = app.add_subcommand("select", "Pick the early-stopping epoch (and run) from training logs");
  select->add_option("logs", logs, "log.csv files or run directories")->required();
  select->add_option("--out", select_out, "Selection report path");

  std::string checkpoint;
  std::optional<std::string> images, sidecar, baseline;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on labeled test data");
  add_common(eval, eval_o);
  eval->add_option("--checkpoint", checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  eval->add_option("--images", images, "IDX test images (defaults to the data directory's target test set)");
  eval->add_option("--sidecar", sidecar, "IDX evaluation labels for --images");
  eval->add_option("--baseline", baseline, "Baseline report JSON to compare against");

  std::string run_dir;
  bool audit = false;
  auto* report = app.add_subcommand("report", "Write per-epoch series for plotting");
  report->add_option("run", run_dir, "Run directory")->required()->check(CLI::ExistingDirectory);
  report->add_flag("--audit", audit, "Add target test error per epoch from the evaluation labels");
  report->add_option("--data", report_o.data, "Synthesized data directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*synth) return cmd_synth(synth_o);
    if (*train) return cmd_train(train_o, resume);
    if (*select) return cmd_select(logs, select_out);
    if (*eval) return cmd_eval(eval_o, checkpoint, images, sidecar, baseline);
    if (*report) return cmd_report(run_dir, audit, report_o);
  } catch (const DivergenceError& e) {
    std::cerr << "uda: " << e.what() << '\n';
    return kExitDiverged;
  } catch (const std::exception& e) {
    std::cerr << "uda: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}
