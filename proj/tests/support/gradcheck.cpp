#include "gradcheck.hpp"

#include <cmath>

#include "uda/model.hpp"
#include "uda/ops.hpp"

namespace uda::testing {

namespace {

constexpr double kGradScaleFloor = 1e-4;

double evaluate(const std::vector<Tensor<double>*>& leaves, const LossBuilder& loss) {
  Tape<double> tape(GradMode::disabled);
  std::vector<Var> vars;
  for (auto* leaf : leaves) vars.push_back(tape.param(*leaf));
  return tape.value(loss(tape, vars))[0];
}

// Keeps relu and max-pool inputs away from kinks and ties.
Tensor<double> away_from_zero(Shape shape, Rng& rng) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data()) {
    do {
      v = 2.0 * uniform01(rng) - 1.0;
    } while (std::abs(v) < 1e-2);
  }
  return t;
}

Tensor<double> distinct_values(Shape shape, Rng& rng) {
  Tensor<double> t(std::move(shape));
  const auto order = permutation(t.size(), rng);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = -1.0 + 2.0 * double(order[i]) / double(t.size()) + 1e-3 * uniform01(rng);
  return t;
}

// Reduces any op output to a scalar with a non-trivial gradient.
Var against_target(Tape<double>& tape, Var out, std::uint64_t seed) {
  Rng rng = make_rng(seed, {99});
  return ops::square_loss(tape, out, random_tensor<double>(tape.value(out).shape(), rng));
}

std::vector<int> random_labels(std::size_t n, std::size_t k, Rng& rng) {
  std::vector<int> y(n);
  for (auto& l : y) l = static_cast<int>(uniform_index(rng, k));
  return y;
}

double network_case(std::uint64_t seed, bool residual) {
  EncoderConfig enc{1, {4, 6}, 6, residual};
  Model<double> model(enc, {{0, 3, HeadKind::classification}, {1, 4, HeadKind::classification}, {2, 2, HeadKind::regression}},
                      seed);
  Rng rng = make_rng(seed, {1});
  // Biases and norm affine terms start at constants; perturb them so every
  // coordinate is exercised away from its initial value.
  std::vector<Tensor<double>*> leaves;
  for (auto& p : model.parameters()) {
    for (auto& v : p.tensor->data()) v += 0.1 * (2.0 * uniform01(rng) - 1.0);
    leaves.push_back(p.tensor);
  }
  const Tensor<double> images = random_tensor<double>({4, 1, 8, 8}, rng, 0.0, 1.0);
  const auto main_labels = random_labels(4, 3, rng);
  const auto task_labels = random_labels(4, 4, rng);
  const Tensor<double> coords = random_tensor<double>({4, 2}, rng, 0.0, 1.0);
  auto loss = [&](Tape<double>& tape, const std::vector<Var>&) {
    const Var x = tape.input(images);
    const Var f = model.encode(tape, x, Mode::train);
    Var total = ops::softmax_cross_entropy(tape, model.head_forward(tape, 0, f), main_labels);
    total = ops::add(tape, total, ops::softmax_cross_entropy(tape, model.head_forward(tape, 1, f), task_labels));
    return ops::add(tape, total, ops::square_loss(tape, model.head_forward(tape, 2, f), coords));
  };
  return gradient_error(leaves, loss);
}

}  // namespace

double gradient_error(const std::vector<Tensor<double>*>& leaves, const LossBuilder& loss, double h) {
  for (auto* leaf : leaves) leaf->zero_grad();
  {
    Tape<double> tape;
    std::vector<Var> vars;
    for (auto* leaf : leaves) vars.push_back(tape.param(*leaf));
    tape.backward(loss(tape, vars));
  }
  double worst = 0;
  for (auto* leaf : leaves) {
    std::vector<double> analytic(leaf->size(), 0.0);
    if (leaf->has_grad()) analytic.assign(leaf->grad().begin(), leaf->grad().end());
    double diff = 0, na = 0, nn = 0;
    for (std::size_t i = 0; i < leaf->size(); ++i) {
      const double saved = (*leaf)[i];
      (*leaf)[i] = saved + h;
      const double up = evaluate(leaves, loss);
      (*leaf)[i] = saved - h;
      const double down = evaluate(leaves, loss);
      (*leaf)[i] = saved;
      const double numeric = (up - down) / (2 * h);
      diff += (analytic[i] - numeric) * (analytic[i] - numeric);
      na += analytic[i] * analytic[i];
      nn += numeric * numeric;
    }
    // Leaves whose true gradient is zero (a conv bias feeding batch norm)
    // would otherwise divide round-off by round-off.
    const double scale = std::max(std::sqrt(na) + std::sqrt(nn), kGradScaleFloor);
    worst = std::max(worst, std::sqrt(diff) / scale);
    leaf->zero_grad();
  }
  return worst;
}

std::vector<GradCase> gradient_cases() {
  std::vector<GradCase> cases;

  cases.push_back({"conv2d", [](std::uint64_t seed) {
    Rng rng = make_rng(seed, {0});
    auto x = random_tensor<double>({2, 3, 5, 5}, rng);
    auto k = random_tensor<double>({4, 3, 3, 3}, rng);
    auto b = random_tensor<double>({4}, rng);
    return gradient_error({&x, &k, &b}, [&](Tape<double>& t, const std::vector<Var>& v) {
      return against_target(t, ops::conv2d(t, v[0], v[1], v[2], {1, 1}), seed);
    });
  }});
  cases.push_back({"conv2d_strided", [](std::uint64_t seed) {
    Rng rng = make_rng(seed, {0});
    auto x = random_tensor<double>({2, 2, 7, 6}, rng);
    auto k = random_tensor<double>({3, 2, 3, 2}, rng);
    auto b = random_tensor<double>({3}, rng);
    return gradient_error({&x, &k, &b}, [&](Tape<double>& t, const std::vector<Var>& v) {
      return against_target(t, ops::conv2d(t, v[0], v[1], v[2], {2, 1}), seed);
    });
  }});
  cases.push_back({"conv2d_sum", [](std::uint64_t seed) {
    Rng rng = make_rng(seed, {0});
    auto x = random_tensor<double>({2, 3, 8, 8}, rng);
    auto k = random_tensor<double>({4, 3, 3, 3}, rng);
    auto b = random_tensor<double>({4}, rng);
    return gradient_error({&x, &k, &b}, [&](Tape<double>& t, const std::vector<Var>& v) {
      return ops::sum(t, ops::conv2d(t, v[0], v[1], v[2]));
    });
  }});
  cases.push_back({"linear", [](std::uint64_t seed) {
    Rng rng = make_rng(seed, {0});
    auto x = random_tensor<double>({4, 16}, rng);
    auto w = random_tensor<double>({3, 16}, rng);
    auto b = random_tensor<double>({3}, rng);
    return gradient_error({&x, &w, &b}, [&](Tape<double>& t, const std::vector<Var>& v) {
      return against_target(t, ops::linear(t, v[0], v[1], v[2]), seed);
    });
  }});
  cases.push_back({"relu", [](std::uint64_t seed) {
    Rng rng = make_rng(seed, {0});
    auto x = away_from_zero({3, 7}, rng);
    return gradient_error({&x}, [&](Tape<double>& t, const std::vector<Var>& v) {
      return against_target(t, ops::relu(t, v[0]), seed);
    });
  }});
  cases.push_back({"max_pool2", [](std::uint64_t seed) {
    Rng rng = make_rng(seed, {0});
    auto x = distinct_values({2, 2, 4, 6}, rng);
    return gradient_error({&x}, [&](Tape<double>& t, const std::vector<Var>& v) {
      return against_target(t, ops::max_pool2(t, v[0]), seed);
    });
  }});
  cases.push_back({"global_avg_pool", [](std::uint64_t seed) {
    Rng rng = make_rng(seed, {0});
    auto x = random_tensor<double>({2, 3, 4, 5}, rng);
    return gradient_error({&x}, [&](Tape<double>& t, const std::vector<Var>& v) {
      return against_target(t, ops::global_avg_pool(t, v[0]), seed);
    });
  }});
  cases.push_back({"batch_norm2d_train", [](std::uint64_t seed) {
    Rng rng = make_rng(seed, {0});
    auto x = random_tensor<double>({4, 3, 3, 3}, rng);
    auto scale = random_tensor<double>({3}, rng, 0.5, 1.5);
    auto shift = random_tensor<double>({3}, rng);
    ops::RunningMoments<double> moments{Tensor<double>({3}), Tensor<double>({3}, 1.0)};
    return gradient_error({&x, &scale, &shift}, [&](Tape<double>& t, const std::vector<Var>& v) {
      return against_target(t, ops::batch_norm2d(t, v[0], v[1], v[2], moments, ops::BnMode::train), seed);
    });
  }});
  cases.push_back({"batch_norm2d_eval", [](std::uint64_t seed) {
    Rng rng = make_rng(seed, {0});
    auto x = random_tensor<double>({3, 2, 3, 4}, rng);
    auto scale = random_tensor<double>({2}, rng, 0.5, 1.5);
    auto shift = random_tensor<double>({2}, rng);
    ops::RunningMoments<double> moments{random_tensor<double>({2}, rng), random_tensor<double>({2}, rng, 0.5, 2.0)};
    return gradient_error({&x, &scale, &shift}, [&](Tape<double>& t, const std::vector<Var>& v) {
      return against_target(t, ops::batch_norm2d(t, v[0], v[1], v[2], moments, ops::BnMode::eval), seed);
    });
  }});
  cases.push_back({"softmax_cross_entropy", [](std::uint64_t seed) {
    Rng rng = make_rng(seed, {0});
    auto logits = random_tensor<double>({5, 4}, rng, -3.0, 3.0);
    const auto labels = random_labels(5, 4, rng);
    return gradient_error({&logits}, [&](Tape<double>& t, const std::vector<Var>& v) {
      return ops::softmax_cross_entropy(t, v[0], labels);
    });
  }});
  cases.push_back({"square_loss", [](std::uint64_t seed) {
    Rng rng = make_rng(seed, {0});
    auto pred = random_tensor<double>({6, 2}, rng);
    const auto target = random_tensor<double>({6, 2}, rng);
    return gradient_error({&pred}, [&](Tape<double>& t, const std::vector<Var>& v) {
      return ops::square_loss(t, v[0], target);
    });
  }});
  cases.push_back({"sum", [](std::uint64_t seed) {
    Rng rng = make_rng(seed, {0});
    auto x = random_tensor<double>({3, 4}, rng);
    return gradient_error({&x}, [&](Tape<double>& t, const std::vector<Var>& v) {
      return ops::sum(t, ops::relu(t, ops::add(t, v[0], v[0])));
    });
  }});
  cases.push_back({"add", [](std::uint64_t seed) {
    Rng rng = make_rng(seed, {0});
    auto a = random_tensor<double>({2, 3, 2, 2}, rng);
    auto b = random_tensor<double>({2, 3, 2, 2}, rng);
    return gradient_error({&a, &b}, [&](Tape<double>& t, const std::vector<Var>& v) {
      return against_target(t, ops::add(t, v[0], v[1]), seed);
    });
  }});
  cases.push_back({"network_plain", [](std::uint64_t seed) { return network_case(seed, false); }});
  cases.push_back({"network_residual", [](std::uint64_t seed) { return network_case(seed, true); }});
  return cases;
}

}  // namespace uda::testing
