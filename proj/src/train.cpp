#include "uda/train.hpp"

#include <cstdio>
#include <fstream>
#include <set>

#include "uda/checkpoint.hpp"
#include "uda/select.hpp"

namespace uda {

namespace {

std::vector<NamedParam<float>> joined(std::vector<NamedParam<float>> a, const std::vector<NamedParam<float>>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

std::string number(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::vector<std::string> loss_names(const TrainConfig& cfg) {
  std::vector<std::string> names{"main"};
  for (const auto& task : cfg.tasks) {
    std::string name = task_name(task.kind);
    if (std::find(names.begin(), names.end(), name) != names.end()) name += "_" + std::to_string(task.id);
    names.push_back(name);
  }
  return names;
}

nlohmann::json record_to_json(const EpochRecord& r) {
  return {{"epoch", r.epoch}, {"v", r.v},         {"w", r.w},
          {"lr", r.learning_rate}, {"losses", r.losses}, {"steps", r.steps}, {"checkpoint", r.checkpoint}};
}

EpochRecord record_from_json(const nlohmann::json& j) {
  EpochRecord r;
  r.epoch = j.at("epoch").get<std::size_t>();
  r.v = j.at("v").get<double>();
  r.w = j.at("w").get<double>();
  r.learning_rate = j.at("lr").get<double>();
  r.losses = j.at("losses").get<std::vector<double>>();
  r.steps = j.at("steps").get<std::size_t>();
  r.checkpoint = j.at("checkpoint").get<std::string>();
  return r;
}

// Everything except the epoch budget must agree for a resumed run to
// continue the original one.
nlohmann::json resume_identity(const TrainConfig& cfg) {
  auto j = train_config_to_json(cfg);
  j.erase("epochs");
  return j;
}

}  // namespace

std::string step_mode_name(StepMode mode) {
  return mode == StepMode::joint_step ? "joint_step" : "per_task_loop";
}

StepMode parse_step_mode(const std::string& name) {
  if (name == "per_task_loop") return StepMode::per_task_loop;
  if (name == "joint_step") return StepMode::joint_step;
  throw ConfigError("unknown step mode '" + name + "'");
}

SgdConfig default_sgd_config() {
  SgdConfig cfg;
  cfg.milestones = {{15, 0.1}, {23, 0.1}};
  return cfg;
}

void TrainConfig::validate() const {
  if (epochs == 0) throw ConfigError("epochs must be positive");
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  if (!tasks.empty() && batch_size % 2) throw ConfigError("batch size must be even when self-supervised tasks are used");
  std::set<int> ids;
  for (const auto& task : tasks) {
    if (task.id < 1) throw ConfigError("task ids start at 1");
    if (!ids.insert(task.id).second) throw ConfigError("duplicate task id " + std::to_string(task.id));
  }
  optimizer.validate();
}

std::vector<HeadConfig> head_configs(const TrainConfig& cfg, int num_classes) {
  std::vector<HeadConfig> heads{{0, static_cast<std::size_t>(num_classes), HeadKind::classification}};
  for (const auto& task : cfg.tasks) {
    heads.push_back({task.id, task.output_dim(), task.is_regression() ? HeadKind::regression : HeadKind::classification});
  }
  return heads;
}

std::vector<std::vector<std::size_t>> main_batches(std::size_t source_size, std::size_t batch_size,
                                                   std::uint64_t seed, std::size_t epoch) {
  Rng rng = make_rng(seed, {stream::main_batches, epoch});
  const auto order = permutation(source_size, rng);
  std::vector<std::vector<std::size_t>> batches;
  const std::size_t full = source_size / batch_size;
  for (std::size_t b = 0; b < std::max<std::size_t>(full, 1); ++b) {
    const std::size_t begin = b * batch_size;
    batches.emplace_back(order.begin() + begin, order.begin() + std::min(source_size, begin + batch_size));
  }
  return batches;
}

Var main_loss(Tape<float>& tape, Model<float>& model, const Tensor<float>& images, std::span<const int> labels) {
  const Var x = tape.input(images);
  const Var logits = model.head_forward(tape, 0, model.encode(tape, x, Mode::train));
  return ops::softmax_cross_entropy(tape, logits, labels);
}

SelfSupLoss selfsup_loss(Tape<float>& tape, Model<float>& model, const TaskSpec& task, const SelfSupBatch& batch) {
  const auto sources = static_cast<std::size_t>(std::count(batch.provenance.begin(), batch.provenance.end(), Domain::source));
  if (batch.size() == 0 || 2 * sources != batch.size()) {
    throw ConsistencyError("self-supervised batch is not balanced between domains");
  }
  if (!model.has_head(task.id)) throw UsageError("task " + std::to_string(task.id) + " has no head");
  const Var x = tape.input(batch.images);
  const Var out = model.head_forward(tape, task.id, model.encode(tape, x, Mode::train));
  SelfSupLoss loss{task_loss(tape, task, out, batch)};

  const Tensor<float>& pred = tape.value(out);
  std::vector<double> rows;
  if (task.is_regression()) {
    for (std::size_t i = 0; i < pred.dim(0); ++i) {
      double acc = 0;
      for (std::size_t j = 0; j < pred.dim(1); ++j) {
        const double d = double(pred.at(i, j)) - double(batch.targets.at(i, j));
        acc += d * d;
      }
      rows.push_back(acc / double(pred.dim(1)));
    }
  } else {
    rows = ops::cross_entropy_rows(pred, batch.labels);
  }
  for (std::size_t i = 0; i < rows.size(); ++i) (batch.provenance[i] == Domain::source ? loss.source : loss.target) += rows[i];
  loss.source /= double(sources);
  loss.target /= double(sources);
  return loss;
}

std::pair<std::vector<double>, std::size_t> train_epoch(Model<float>& model, Sgd<float>& optimizer,
                                                         const DomainPair& data, const TrainConfig& cfg,
                                                         std::size_t epoch) {
  const auto& source = data.source_train;
  const auto& target = data.target_train.images();
  const std::size_t num_tasks = cfg.tasks.size();
  optimizer.set_epoch(epoch);

  std::vector<BalancedBatches> streams;
  std::vector<Rng> transform_rngs;
  for (std::size_t k = 0; k < num_tasks; ++k) {
    streams.emplace_back(source.size(), data.target_train.size(), cfg.batch_size,
                         derive_seed(cfg.seed, {stream::balanced + k, epoch}));
    transform_rngs.push_back(make_rng(cfg.seed, {stream::transforms + k, epoch}));
  }

  const auto slots = main_batches(source.size(), cfg.batch_size, cfg.seed, epoch);
  std::vector<double> losses(num_tasks + 1, 0.0);
  std::size_t steps = 0;
  const auto encoder_params = model.encoder_parameters();

  auto step = [&](Tape<float>& tape, Var loss, const std::vector<NamedParam<float>>& params) {
    tape.backward(loss);
    optimizer.step(params);
    model.zero_grad();
    ++steps;
  };

  for (const auto& rows : slots) {
    try {
      std::vector<SelfSupBatch> task_batches;
      for (std::size_t k = 0; k < num_tasks; ++k) {
        const BalancedBatch picked = streams[k].next();
        const auto images = gather_balanced(source.images, target, picked);
        task_batches.push_back(make_task_batch(cfg.tasks[k], images, picked.provenance(), transform_rngs[k]));
      }
      const Tensor<float> main_images = source.images.gather(rows);
      std::vector<int> main_labels;
      for (auto r : rows) main_labels.push_back(source.labels[r]);

      if (cfg.mode == StepMode::per_task_loop) {
        for (std::size_t k = 0; k < num_tasks; ++k) {
          Tape<float> tape;
          const auto loss = selfsup_loss(tape, model, cfg.tasks[k], task_batches[k]);
          losses[k + 1] += tape.value(loss.total)[0];
          step(tape, loss.total, joined(encoder_params, model.head_parameters(cfg.tasks[k].id)));
        }
        Tape<float> tape;
        const Var loss = main_loss(tape, model, main_images, main_labels);
        losses[0] += tape.value(loss)[0];
        step(tape, loss, joined(encoder_params, model.head_parameters(0)));
      } else {
        Tape<float> tape;
        Var total = main_loss(tape, model, main_images, main_labels);
        losses[0] += tape.value(total)[0];
        for (std::size_t k = 0; k < num_tasks; ++k) {
          const auto loss = selfsup_loss(tape, model, cfg.tasks[k], task_batches[k]);
          losses[k + 1] += tape.value(loss.total)[0];
          total = ops::add(tape, total, loss.total);
        }
        step(tape, total, model.parameters());
      }
    } catch (const NumericError& e) {
      model.zero_grad();
      throw DivergenceError(epoch, steps, e.what());
    }
  }
  for (double& l : losses) l /= double(slots.size());
  return {losses, steps};
}

double classification_error(const Model<float>& model, const LabeledSet& set) {
  if (set.size() == 0) throw UsageError("cannot measure error on an empty set");
  const auto predicted = model.predict(set.images);
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < set.size(); ++i) wrong += predicted[i] != set.labels[i];
  return double(wrong) / double(set.size());
}

std::vector<double> TrainingLog::v() const {
  std::vector<double> out;
  for (const auto& e : epochs) out.push_back(e.v);
  return out;
}

std::vector<double> TrainingLog::w() const {
  std::vector<double> out;
  for (const auto& e : epochs) out.push_back(e.w);
  return out;
}

FitResult fit(const DomainPair& data, const EncoderConfig& encoder, const TrainConfig& cfg, const FitOptions& options) {
  cfg.validate();
  data.validate();
  FitResult result{init_model<float>(encoder, head_configs(cfg, data.source_train.num_classes), cfg.seed), {}};
  Model<float>& model = result.model;
  model.check_images(data.source_train.images);
  Sgd<float> optimizer(cfg.optimizer);
  TrainingLog& log = result.log;
  log.loss_names = loss_names(cfg);

  std::size_t start = 0;
  if (options.resume_from) {
    const Checkpoint ckpt = read_checkpoint(*options.resume_from);
    if (!ckpt.meta.contains("train") || resume_identity(train_config_from_json(ckpt.meta["train"])) != resume_identity(cfg)) {
      throw VersionError("checkpoint " + options.resume_from->string() + " was written by a different configuration");
    }
    restore_model(model, ckpt);
    restore_optimizer(optimizer, ckpt);
    for (const auto& r : ckpt.meta.at("log")) log.epochs.push_back(record_from_json(r));
    start = ckpt.meta.at("epoch").get<std::size_t>() + 1;
  }
  if (options.out_dir) std::filesystem::create_directories(*options.out_dir);

  for (std::size_t epoch = start; epoch < cfg.epochs; ++epoch) {
    EpochRecord record;
    record.epoch = epoch;
    std::tie(record.losses, record.steps) = train_epoch(model, optimizer, data, cfg, epoch);
    record.learning_rate = optimizer.learning_rate();
    record.v = mean_distance(model, data.source_val_unlabeled(), data.target_val.images());
    record.w = classification_error(model, data.source_val);
    if (options.out_dir) {
      char name[32];
      std::snprintf(name, sizeof name, "epoch_%03zu.ckpt", epoch);
      record.checkpoint = name;
      nlohmann::json history = nlohmann::json::array();
      for (const auto& r : log.epochs) history.push_back(record_to_json(r));
      history.push_back(record_to_json(record));
      const nlohmann::json meta{{"train", train_config_to_json(cfg)}, {"epoch", epoch}, {"log", history}};
      write_checkpoint(*options.out_dir / name, capture(model, optimizer, meta));
    }
    log.epochs.push_back(record);
    if (options.out_dir) write_training_csv(*options.out_dir / "log.csv", log);
    if (options.on_epoch) options.on_epoch(record, model);
  }
  return result;
}

void write_training_csv(const std::filesystem::path& path, const TrainingLog& log) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write training log " + path.string());
  out << "epoch,v,w,lr";
  for (const auto& name : log.loss_names) out << ",loss_" << name;
  out << ",steps,checkpoint\n";
  for (const auto& r : log.epochs) {
    out << r.epoch << ',' << number(r.v) << ',' << number(r.w) << ',' << number(r.learning_rate);
    for (double l : r.losses) out << ',' << number(l);
    out << ',' << r.steps << ',' << r.checkpoint << '\n';
  }
}

nlohmann::json train_config_to_json(const TrainConfig& cfg) {
  nlohmann::json tasks = nlohmann::json::array();
  for (const auto& t : cfg.tasks) {
    tasks.push_back({{"id", t.id}, {"kind", task_name(t.kind)}, {"patch_size", t.patch_size}, {"all_rotations", t.all_rotations}});
  }
  nlohmann::json milestones = nlohmann::json::array();
  for (const auto& m : cfg.optimizer.milestones) milestones.push_back({{"epoch", m.epoch}, {"factor", m.factor}});
  return {{"tasks", tasks},
          {"epochs", cfg.epochs},
          {"batch_size", cfg.batch_size},
          {"optimizer",
           {{"learning_rate", cfg.optimizer.learning_rate},
            {"momentum", cfg.optimizer.momentum},
            {"weight_decay", cfg.optimizer.weight_decay},
            {"milestones", milestones}}},
          {"mode", step_mode_name(cfg.mode)},
          {"seed", cfg.seed}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig cfg;
  try {
    if (j.contains("tasks")) {
      int next_id = 1;
      for (const auto& t : j["tasks"]) {
        TaskSpec task;
        task.id = t.value("id", next_id);
        task.kind = parse_task_kind(t.at("kind").get<std::string>());
        task.patch_size = t.value("patch_size", std::size_t{0});
        task.all_rotations = t.value("all_rotations", false);
        next_id = task.id + 1;
        cfg.tasks.push_back(task);
      }
    }
    cfg.epochs = j.value("epochs", cfg.epochs);
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    if (j.contains("optimizer")) {
      const auto& o = j["optimizer"];
      cfg.optimizer.learning_rate = o.value("learning_rate", cfg.optimizer.learning_rate);
      cfg.optimizer.momentum = o.value("momentum", cfg.optimizer.momentum);
      cfg.optimizer.weight_decay = o.value("weight_decay", cfg.optimizer.weight_decay);
      if (o.contains("milestones")) {
        cfg.optimizer.milestones.clear();
        for (const auto& m : o["milestones"]) cfg.optimizer.milestones.push_back({m.at("epoch").get<std::size_t>(), m.at("factor").get<double>()});
      }
    }
    cfg.mode = parse_step_mode(j.value("mode", step_mode_name(cfg.mode)));
    cfg.seed = j.value("seed", cfg.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("training config: ") + e.what());
  }
  return cfg;
}

}  // namespace uda
