#include <gtest/gtest.h>

#include <numeric>

#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "uda/eval.hpp"

using namespace uda;
using namespace uda::testing;

namespace {

Model<float> eval_model() {
  return Model<float>(EncoderConfig{1, {8, 64}, 64, true}, {{0, 10, HeadKind::classification}, {1, 4, HeadKind::classification}}, 21);
}

Tensor<float> eval_images(std::size_t n) {
  Rng rng = make_rng(22, {});
  auto t = random_tensor<float>({n, 1, 16, 16}, rng, 0.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    const float offset = float(uniform01(rng)) - 0.5f;
    for (std::size_t j = 0; j < 256; ++j) t[i * 256 + j] += offset;
  }
  return t;
}

}  // namespace

TEST(Score, PerfectAndDerangement) {
  const std::vector<int> truth{0, 1, 2, 0, 1, 2};
  const auto perfect = score(truth, truth, 3, 7);
  EXPECT_EQ(perfect.accuracy, 1.0);
  EXPECT_EQ(perfect.per_class, (std::vector<double>{1, 1, 1}));
  const std::vector<int> shifted{1, 2, 0, 1, 2, 0};
  const auto zero = score(shifted, truth, 3, 7);
  EXPECT_EQ(zero.accuracy, 0.0);
  EXPECT_EQ(zero.correct, 0u);
}

TEST(Score, ConfusionInvariants) {
  const std::vector<int> truth{0, 0, 1, 1, 1, 3};
  const std::vector<int> pred{0, 1, 1, 1, 0, 3};
  const auto r = score(pred, truth, 4, 0);
  std::size_t total = 0, trace = 0;
  for (std::size_t c = 0; c < 4; ++c) {
    const std::size_t row = std::accumulate(r.confusion[c].begin(), r.confusion[c].end(), std::size_t{0});
    EXPECT_EQ(row, std::size_t(std::count(truth.begin(), truth.end(), int(c))));
    total += row;
    trace += r.confusion[c][c];
  }
  EXPECT_EQ(total, truth.size());
  EXPECT_DOUBLE_EQ(r.accuracy, double(trace) / double(total));
  EXPECT_TRUE(std::isnan(r.per_class[2]));
  EXPECT_DOUBLE_EQ(r.per_class[1], 2.0 / 3.0);
}

TEST(Accuracy, ThroughSidecarOnly) {
  const auto m = eval_model();
  const auto images = eval_images(60);
  const auto predicted = m.predict(images);
  const UnlabeledSet test(images, predicted, 10);
  const auto r = accuracy(m, test);
  EXPECT_EQ(r.accuracy, 1.0);
  EXPECT_EQ(r.total, 60u);
  EXPECT_THROW(accuracy(m, test.without_sidecar()), UsageError);

  std::vector<int> wrong = predicted;
  for (int& l : wrong) l = (l + 1) % 10;
  EXPECT_EQ(accuracy(m, UnlabeledSet(images, wrong, 10)).accuracy, 0.0);
}

TEST(Accuracy, RowOrderInvariantAndReadOnly) {
  auto m = eval_model();
  const auto images = eval_images(40);
  std::vector<int> labels(40);
  for (std::size_t i = 0; i < 40; ++i) labels[i] = int(i % 10);
  const UnlabeledSet test(images, labels, 10);
  const auto before = parameter_checksum(m);
  const auto r = accuracy(m, test);
  EXPECT_EQ(parameter_checksum(m), before);
  Rng rng = make_rng(23, {});
  const auto shuffled = test.gather(permutation(40, rng));
  const auto r2 = accuracy(m, shuffled);
  EXPECT_EQ(r2.accuracy, r.accuracy);
  EXPECT_EQ(r2.confusion, r.confusion);
  EXPECT_EQ(r2.test_checksum, r.test_checksum);
  EXPECT_EQ(accuracy(m, LabeledSet(images, labels)).accuracy, r.accuracy);
}

TEST(Accuracy, HeadRemovalDoesNotChangeReport) {
  auto m = eval_model();
  const auto images = eval_images(30);
  std::vector<int> labels(30, 4);
  const UnlabeledSet test(images, labels, 10);
  const auto r = accuracy(m, test);
  m.remove_head(1);
  EXPECT_EQ(accuracy(m, test).confusion, r.confusion);
}

TEST(Checksum, DependsOnContentNotOrder) {
  const auto images = eval_images(5);
  const std::vector<int> labels{0, 1, 2, 3, 4};
  const auto c = test_set_checksum(images, labels);
  const std::vector<std::size_t> order{4, 2, 0, 1, 3};
  std::vector<int> relabeled;
  for (auto i : order) relabeled.push_back(labels[i]);
  EXPECT_EQ(test_set_checksum(images.gather(order), relabeled), c);
  const std::vector<int> other{1, 1, 2, 3, 4};
  EXPECT_NE(test_set_checksum(images, other), c);
}

TEST(Compare, DeltasAndMismatch) {
  const std::vector<int> truth{0, 0, 0, 0, 0, 1, 1, 1, 1, 1};
  const std::vector<int> base_pred{0, 0, 0, 1, 1, 1, 1, 1, 1, 0};
  const std::vector<int> adapted_pred{0, 0, 0, 0, 1, 1, 1, 1, 1, 1};
  const auto base = score(base_pred, truth, 3, 9);
  const auto adapted = score(adapted_pred, truth, 3, 9);
  EXPECT_DOUBLE_EQ(base.accuracy, 0.7);
  const auto same = compare(base, base);
  EXPECT_EQ(same.overall, 0.0);
  EXPECT_EQ(same.unchanged, 3u);
  const auto d = compare(base, adapted);
  EXPECT_NEAR(d.overall, 0.2, 1e-12);
  EXPECT_NEAR(d.per_class[0], 0.2, 1e-12);
  EXPECT_NEAR(d.per_class[1], 0.2, 1e-12);
  EXPECT_EQ(d.improved, 2u);
  EXPECT_EQ(d.worsened, 0u);
  EXPECT_EQ(d.unchanged, 1u);
  const auto reverse = compare(adapted, base);
  EXPECT_EQ(reverse.worsened, 2u);
  EXPECT_THROW(compare(base, score(adapted_pred, truth, 3, 10)), UsageError);
}

TEST(Reports, JsonRoundTripAndCsv) {
  TempDir dir("eval");
  const std::vector<int> truth{0, 1, 1, 2};
  const std::vector<int> pred{0, 1, 2, 2};
  const auto r = score(pred, truth, 4, 123456789012345ULL);
  write_report_json(dir / "r.json", r);
  write_report_csv(dir / "r.csv", r);
  const auto back = read_report_json(dir / "r.json");
  EXPECT_EQ(back.accuracy, r.accuracy);
  EXPECT_EQ(back.confusion, r.confusion);
  EXPECT_EQ(back.test_checksum, r.test_checksum);
  EXPECT_TRUE(std::isnan(back.per_class[3]));
  EXPECT_EQ(compare(back, r).overall, 0.0);
  const auto csv = read_file(dir / "r.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "class,count,correct,accuracy,pred_0,pred_1,pred_2,pred_3");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 6);
  EXPECT_NE(csv.find("\nall,4,3,0.75\n"), std::string::npos);
}
