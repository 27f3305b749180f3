#include <gtest/gtest.h>

#include <set>

#include "gradcheck.hpp"
#include "uda/model.hpp"
#include "uda/ops.hpp"

using namespace uda;
using namespace uda::testing;

namespace {

EncoderConfig small(bool residual = false) {
  return EncoderConfig{1, {8, 64}, 64, residual};
}

std::vector<HeadConfig> heads_with_rotation() {
  return {{0, 10, HeadKind::classification}, {1, 4, HeadKind::classification}, {2, 2, HeadKind::regression}};
}

std::vector<float> row(const Tensor<float>& t, std::size_t r) {
  const std::size_t d = t.dim(1);
  return std::vector<float>(t.values().begin() + r * d, t.values().begin() + (r + 1) * d);
}

}  // namespace

TEST(InitModel, SameSeedIsBitIdentical) {
  for (bool residual : {false, true}) {
    Model<float> a(small(residual), heads_with_rotation(), 42);
    Model<float> b(small(residual), heads_with_rotation(), 42);
    EXPECT_EQ(parameter_checksum(a), parameter_checksum(b));
    auto pa = a.parameters();
    auto pb = b.parameters();
    ASSERT_EQ(pa.size(), pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) {
      EXPECT_EQ(pa[i].name, pb[i].name);
      EXPECT_EQ(*pa[i].tensor, *pb[i].tensor);
    }
  }
}

TEST(InitModel, DefaultConfigFeatureDim) {
  const EncoderConfig def;
  EXPECT_EQ(def.feature_dim, 128u);
  EXPECT_TRUE(def.validate().empty());
  Model<float> m(def, {{0, 10, HeadKind::classification}, {1, 4, HeadKind::classification}}, 0);
  EXPECT_EQ(m.feature_dim(), 128u);
  EXPECT_EQ(m.head(1).config.output_dim, 4u);
  EXPECT_GT(m.parameter_count(), 0u);
}

TEST(InitModel, ConfigErrors) {
  EXPECT_THROW(Model<float>(small(), {{0, 10, HeadKind::classification}, {0, 4, HeadKind::classification}}, 0),
               ConfigError);
  EXPECT_THROW(Model<float>(small(), {{1, 4, HeadKind::classification}}, 0), ConfigError);
  EXPECT_THROW(Model<float>(EncoderConfig{1, {8, 32}, 64, false}, {{0, 10, HeadKind::classification}}, 0),
               ConfigError);
}

TEST(InitModel, FeatureDimOutsideRangeWarnsOnly) {
  EXPECT_TRUE(small().validate().empty());
  const EncoderConfig narrow{1, {8, 16}, 16, false};
  EXPECT_EQ(narrow.validate().size(), 1u);
  EXPECT_NO_THROW(Model<float>(narrow, {{0, 10, HeadKind::classification}}, 0));
}

TEST(HeadCapacity, LinearParameterCount) {
  Model<float> m(small(), heads_with_rotation(), 1);
  for (const auto& h : m.head_configs()) {
    std::size_t count = 0;
    for (const auto& p : m.head_parameters(h.task_id)) count += p.tensor->size();
    EXPECT_EQ(count, m.feature_dim() * h.output_dim + h.output_dim) << h.task_id;
  }
}

TEST(Encode, ShapeAndDimensionError) {
  Model<float> m(small(), heads_with_rotation(), 3);
  Rng rng = make_rng(3, {});
  const auto img = random_tensor<float>({5, 1, 16, 16}, rng, 0.0, 1.0);
  EXPECT_EQ(m.features(img).shape(), (Shape{5, 64}));
  EXPECT_THROW(m.features(Tensor<float>({5, 3, 16, 16})), DimensionError);
  EXPECT_THROW(m.features(Tensor<float>({5, 1, 15, 16})), DimensionError);
}

TEST(Encode, BatchIndependenceInEvalMode) {
  for (bool residual : {false, true}) {
    Model<float> m(small(residual), heads_with_rotation(), 4);
    Rng rng = make_rng(4, {});
    const auto batch = random_tensor<float>({8, 1, 16, 16}, rng, 0.0, 1.0);
    const auto all = m.features(batch);
    const std::vector<std::size_t> pick{5};
    const auto one = m.features(batch.gather(pick));
    EXPECT_EQ(row(one, 0), row(all, 5));
  }
}

TEST(Encode, PermutationEquivariant) {
  for (bool residual : {false, true}) {
    Model<float> m(small(residual), heads_with_rotation(), 5);
    Rng rng = make_rng(5, {});
    const auto batch = random_tensor<float>({7, 1, 16, 16}, rng, 0.0, 1.0);
    const auto perm = permutation(7, rng);
    const auto base = m.features(batch);
    const auto permuted = m.features(batch.gather(perm));
    for (std::size_t i = 0; i < 7; ++i) EXPECT_EQ(row(permuted, i), row(base, perm[i]));
  }
}

TEST(Encode, DifferentSeedsDiffer) {
  Model<float> a(small(), heads_with_rotation(), 1);
  Model<float> b(small(), heads_with_rotation(), 2);
  Rng rng = make_rng(6, {});
  const auto img = random_tensor<float>({2, 1, 16, 16}, rng, 0.0, 1.0);
  EXPECT_NE(a.features(img), b.features(img));
}

TEST(HeadForward, ZeroFeaturesGiveZeroLogitsAndUnknownHeadFails) {
  Model<float> m(small(), heads_with_rotation(), 7);
  Tape<float> tape;
  auto f = tape.input(Tensor<float>({3, 64}));
  for (const auto& h : m.head_configs()) {
    const auto& out = tape.value(m.head_forward(tape, h.task_id, f));
    EXPECT_EQ(out.shape(), (Shape{3, h.output_dim}));
    for (float v : out.values()) EXPECT_EQ(v, 0.0f);
  }
  EXPECT_THROW(m.head_forward(tape, 9, f), UsageError);
}

TEST(Predict, HeadRemovalLeavesPredictionsBitIdentical) {
  Model<float> m(small(true), heads_with_rotation(), 8);
  Rng rng = make_rng(8, {});
  const auto img = random_tensor<float>({20, 1, 16, 16}, rng, 0.0, 1.0);
  const auto before = m.predict(img);
  const auto logits = m.outputs(img, 0);
  m.remove_head(1);
  EXPECT_EQ(m.predict(img), before);
  m.remove_head(2);
  EXPECT_EQ(m.predict(img), before);
  EXPECT_EQ(m.outputs(img, 0), logits);
  EXPECT_THROW(m.remove_head(0), UsageError);
}

TEST(Predict, DominantLogitWins) {
  Model<float> m(small(), {{0, 3, HeadKind::classification}}, 9);
  auto params = m.head_parameters(0);
  for (auto& p : params) {
    for (auto& v : p.tensor->data()) v = 0.0f;
  }
  for (auto& p : params) {
    if (p.tensor->rank() == 1) (*p.tensor)[2] = 5.0f;
  }
  Rng rng = make_rng(9, {});
  const auto pred = m.predict(random_tensor<float>({6, 1, 16, 16}, rng, 0.0, 1.0));
  for (int p : pred) EXPECT_EQ(p, 2);
}

TEST(Predict, RandomInitCoversSeveralClasses) {
  Model<float> m(small(), {{0, 10, HeadKind::classification}}, 10);
  Rng rng = make_rng(10, {});
  // Per-image offset and contrast so inputs differ in more than pixel noise.
  auto images = random_tensor<float>({1000, 1, 16, 16}, rng);
  for (std::size_t i = 0; i < 1000; ++i) {
    const double offset = 2.0 * uniform01(rng) - 1.0;
    const double contrast = 2.0 * uniform01(rng);
    for (std::size_t j = 0; j < 256; ++j) images[i * 256 + j] = float(offset + contrast * images[i * 256 + j]);
  }
  const auto pred = m.predict(images);
  EXPECT_GT(std::set<int>(pred.begin(), pred.end()).size(), 1u);
}

TEST(Model, WholeNetworkGradientDouble) {
  for (const auto& c : gradient_cases()) {
    if (c.name.rfind("network", 0) != 0) continue;
    for (std::uint64_t seed = 100; seed < 103; ++seed) EXPECT_LT(c.run(seed), kGradTolerance) << c.name;
  }
}

TEST(Model, BuffersOnlyInResidualVariant) {
  EXPECT_TRUE(Model<float>(small(), heads_with_rotation(), 0).buffers().empty());
  EXPECT_FALSE(Model<float>(small(true), heads_with_rotation(), 0).buffers().empty());
}
