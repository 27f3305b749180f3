#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "fixtures.hpp"
#include "uda/experiment.hpp"
#include "uda/select.hpp"

using namespace uda;
using namespace uda::testing;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string output;
};

Result run(const std::string& args, const std::string& env = "UDA_DATA_ROOT= ") {
  const std::string cmd = env + " " + UDA_BINARY + " " + args + " 2>&1";
  Result r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  std::array<char, 4096> buf{};
  while (std::size_t n = std::fread(buf.data(), 1, buf.size(), pipe)) r.output.append(buf.data(), n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::vector<std::string>> rows;
  for (std::string line; std::getline(in, line);) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
    rows.push_back(cells);
  }
  return rows;
}

ExperimentConfig small_experiment() {
  ExperimentConfig cfg;
  cfg.synth.source_count = 160;
  cfg.synth.target_count = 160;
  cfg.synth.test_count = 60;
  cfg.synth.image_size = 16;
  cfg.synth.seed = 5;
  cfg.encoder = EncoderConfig{1, {8, 16}, 16, true};
  cfg.train.epochs = 2;
  cfg.train.batch_size = 32;
  cfg.train.seed = 3;
  cfg.train.tasks = {TaskSpec{1, TaskKind::rotation}};
  return cfg;
}

void write_config(const fs::path& p, const ExperimentConfig& cfg) {
  std::ofstream out(p);
  out << experiment_to_json(cfg).dump(2);
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = std::make_unique<TempDir>("cli");
    write_config(config(), small_experiment());
    const Result r = run("synth --config " + config().string() + " --data " + data().string());
    ASSERT_EQ(r.code, 0) << r.output;
  }
  static void TearDownTestSuite() { root_.reset(); }

  static fs::path dir() { return root_->path(); }
  static fs::path config() { return dir() / "config.json"; }
  static fs::path data() { return dir() / "data"; }

  static Result train(const fs::path& out, const std::string& extra = "") {
    return run("train --config " + config().string() + " --data " + data().string() + " --out " + out.string() + " " +
               extra);
  }

  static inline std::unique_ptr<TempDir> root_;
};

}  // namespace

TEST_F(Cli, SynthLayoutAndDeterminism) {
  for (const char* f : {files::source_train_images, files::source_train_labels, files::target_train_images,
                        files::target_test_images, files::target_test_sidecar, files::manifest}) {
    EXPECT_TRUE(fs::exists(data() / f)) << f;
  }
  EXPECT_FALSE(fs::exists(data() / "target-train-labels.idx"));
  const Result again = run("synth --config " + config().string() + " --data " + (dir() / "data2").string());
  ASSERT_EQ(again.code, 0) << again.output;
  EXPECT_EQ(read_file(data() / files::manifest), read_file(dir() / "data2" / files::manifest));
}

TEST_F(Cli, TrainWritesLogCheckpointsAndConfig) {
  const fs::path out = dir() / "run_a";
  const Result r = train(out);
  ASSERT_EQ(r.code, 0) << r.output;
  const auto rows = read_csv(out / "log.csv");
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0], (std::vector<std::string>{"epoch", "v", "w", "lr", "loss_main", "loss_rotation", "steps",
                                               "checkpoint"}));
  for (std::size_t e = 1; e < rows.size(); ++e) EXPECT_TRUE(fs::exists(out / rows[e].back()));
  EXPECT_TRUE(fs::exists(out / "config.json"));
}

TEST_F(Cli, RerunIsByteIdentical) {
  ASSERT_EQ(train(dir() / "det_1").code, 0);
  ASSERT_EQ(train(dir() / "det_2").code, 0);
  for (const char* f : {"log.csv", "epoch_000.ckpt", "epoch_001.ckpt"}) {
    EXPECT_EQ(read_file(dir() / "det_1" / f), read_file(dir() / "det_2" / f)) << f;
  }
}

TEST_F(Cli, TaskFlag) {
  const Result none = train(dir() / "none", "--tasks none --epochs 1");
  ASSERT_EQ(none.code, 0) << none.output;
  EXPECT_EQ(read_csv(dir() / "none" / "log.csv")[0],
            (std::vector<std::string>{"epoch", "v", "w", "lr", "loss_main", "steps", "checkpoint"}));

  const Result two = train(dir() / "two", "--tasks rotation,flip --mode joint_step --epochs 1");
  ASSERT_EQ(two.code, 0) << two.output;
  const auto header = read_csv(dir() / "two" / "log.csv")[0];
  EXPECT_EQ(std::count(header.begin(), header.end(), "loss_rotation"), 1);
  EXPECT_EQ(std::count(header.begin(), header.end(), "loss_flip"), 1);
}

TEST_F(Cli, ResumeMatchesUninterruptedRun) {
  ASSERT_EQ(train(dir() / "full", "--epochs 3").code, 0);
  ASSERT_EQ(train(dir() / "part", "--epochs 1").code, 0);
  const Result resumed = train(dir() / "part", "--epochs 3 --resume " + (dir() / "part" / "epoch_000.ckpt").string());
  ASSERT_EQ(resumed.code, 0) << resumed.output;
  EXPECT_EQ(read_file(dir() / "full" / "log.csv"), read_file(dir() / "part" / "log.csv"));
  EXPECT_EQ(read_file(dir() / "full" / "epoch_002.ckpt"), read_file(dir() / "part" / "epoch_002.ckpt"));
}

TEST_F(Cli, DataRootFromEnvironment) {
  const Result r = run("train --config " + config().string() + " --epochs 1 --out " + (dir() / "env").string(),
                       "UDA_DATA_ROOT=" + data().string());
  EXPECT_EQ(r.code, 0) << r.output;
}

TEST_F(Cli, SelectPicksEpochAndWritesReport) {
  const fs::path out = dir() / "sel";
  ASSERT_EQ(train(out, "--epochs 3").code, 0);
  const Result r = run("select " + out.string());
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("epoch "), std::string::npos);
  std::ifstream in(out / "selection.json");
  const auto report = nlohmann::json::parse(in);
  EXPECT_TRUE(fs::exists(out / report.at("checkpoint").get<std::string>()));
  const RunTrace trace = read_training_csv(out / "log.csv");
  EXPECT_EQ(report.at("epoch").get<std::size_t>(), early_stop(combine(trace.v, trace.w)));
}

TEST_F(Cli, SelectWorkedExampleAndErrors) {
  const fs::path log = dir() / "crafted.csv";
  {
    // w = (3, 3, 1) scaled into an error rate; the combined score is scale invariant.
    std::ofstream out(log);
    out << "epoch,v,w,lr,loss_main,steps,checkpoint\n"
        << "0,2,0.3,0.1,1,10,epoch_000.ckpt\n1,1,0.3,0.1,1,10,epoch_001.ckpt\n2,4,0.1,0.1,1,10,epoch_002.ckpt\n";
  }
  const Result r = run("select " + log.string() + " --out " + (dir() / "crafted.json").string());
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("\nepoch 1\n"), std::string::npos) << r.output;

  const fs::path single = dir() / "single.csv";
  {
    std::ofstream out(single);
    out << "epoch,v,w,lr,loss_main,steps,checkpoint\n0,2,0.3,0.1,1,10,epoch_000.ckpt\n";
  }
  const Result one = run("select " + single.string() + " --out " + (dir() / "single.json").string());
  EXPECT_NE(one.output.find("\nepoch 0\n"), std::string::npos) << one.output;

  const fs::path bad = dir() / "bad.csv";
  {
    std::ofstream out(bad);
    out << "epoch,v,w\n0,abc,1\n";
  }
  EXPECT_EQ(run("select " + bad.string()).code, 2);
}

TEST_F(Cli, EvalReportsAndDelta) {
  ASSERT_EQ(train(dir() / "ev_base", "--tasks none --epochs 1").code, 0);
  ASSERT_EQ(train(dir() / "ev_ad", "--epochs 1").code, 0);
  const std::string data_flag = " --data " + data().string();
  const fs::path base_ckpt = dir() / "ev_base" / "epoch_000.ckpt";
  const fs::path ad_ckpt = dir() / "ev_ad" / "epoch_000.ckpt";

  const Result b = run("eval --checkpoint " + base_ckpt.string() + data_flag);
  ASSERT_EQ(b.code, 0) << b.output;
  EXPECT_NE(b.output.find("accuracy "), std::string::npos);
  const std::string first = read_file(dir() / "ev_base" / "epoch_000.eval.json");
  ASSERT_EQ(run("eval --checkpoint " + base_ckpt.string() + data_flag).code, 0);
  EXPECT_EQ(read_file(dir() / "ev_base" / "epoch_000.eval.json"), first);
  EXPECT_TRUE(fs::exists(dir() / "ev_base" / "epoch_000.eval.csv"));

  const Result a = run("eval --checkpoint " + ad_ckpt.string() + data_flag + " --baseline " +
                       (dir() / "ev_base" / "epoch_000.eval.json").string());
  ASSERT_EQ(a.code, 0) << a.output;
  EXPECT_NE(a.output.find("delta "), std::string::npos);
  EXPECT_TRUE(fs::exists(dir() / "ev_ad" / "epoch_000.delta.json"));
}

TEST_F(Cli, EvalErrors) {
  ASSERT_EQ(train(dir() / "ev_err", "--epochs 1").code, 0);
  const fs::path ckpt = dir() / "ev_err" / "epoch_000.ckpt";

  const Result no_sidecar =
      run("eval --checkpoint " + ckpt.string() + " --images " + (data() / files::target_test_images).string());
  EXPECT_EQ(no_sidecar.code, 2);
  EXPECT_EQ(no_sidecar.output.find("accuracy "), std::string::npos);

  ExperimentConfig other = small_experiment();
  other.encoder = EncoderConfig{1, {8, 32}, 32, true};
  write_config(dir() / "other.json", other);
  const Result mismatch =
      run("eval --checkpoint " + ckpt.string() + " --config " + (dir() / "other.json").string() + " --data " +
          data().string());
  EXPECT_EQ(mismatch.code, 2);
  EXPECT_NE(mismatch.output.find("does not match"), std::string::npos) << mismatch.output;
}

TEST_F(Cli, ReportSeries) {
  const fs::path out = dir() / "rep";
  ASSERT_EQ(train(out, "--epochs 3").code, 0);
  ASSERT_EQ(run("report " + out.string()).code, 0);
  const auto rows = read_csv(out / "report.csv");
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0], (std::vector<std::string>{"epoch", "v", "w", "u", "loss_main", "loss_rotation"}));
  const RunTrace trace = read_training_csv(out / "log.csv");
  const auto u = combine(trace.v, trace.w);
  for (std::size_t e = 0; e < 3; ++e) EXPECT_NEAR(std::stod(rows[e + 1][3]), u[e], 1e-5);

  const Result audit = run("report " + out.string() + " --audit --data " + data().string());
  ASSERT_EQ(audit.code, 0) << audit.output;
  const auto audited = read_csv(out / "report.csv");
  ASSERT_EQ(audited.size(), 4u);
  EXPECT_EQ(audited[0].back(), "target_error");
  for (std::size_t e = 1; e < 4; ++e) {
    const double err = std::stod(audited[e].back());
    EXPECT_GE(err, 0.0);
    EXPECT_LE(err, 1.0);
  }
}

TEST_F(Cli, ExitCodes) {
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("train --bogus").code, 2);
  EXPECT_EQ(train(dir() / "x", "--tasks hflip").code, 2);
  EXPECT_EQ(train(dir() / "x", "--tasks none,rotation").code, 2);
  EXPECT_EQ(run("train --config " + config().string() + " --out " + (dir() / "x").string()).code, 2);
  EXPECT_EQ(run("train --config " + config().string() + " --data " + (dir() / "absent").string()).code, 2);
  EXPECT_EQ(run("--help").code, 0);

  ExperimentConfig hot = small_experiment();
  hot.train.optimizer.learning_rate = 1e30;
  write_config(dir() / "hot.json", hot);
  const Result diverged = run("train --config " + (dir() / "hot.json").string() + " --data " + data().string() +
                              " --out " + (dir() / "hot").string());
  EXPECT_EQ(diverged.code, 1);
  EXPECT_NE(diverged.output.find("epoch"), std::string::npos) << diverged.output;
}
