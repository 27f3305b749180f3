#pragma once

#include <span>

#include "uda/tape.hpp"

namespace uda::ops {

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

/// Cross-correlation of x[N,C,H,W] with kernel[O,C,kH,kW] plus bias[O].
template <class T>
Var conv2d(Tape<T>& tape, Var x, Var kernel, Var bias, Conv2dOptions opt = {});

/// out[n,o] = sum_d x[n,d] * weight[o,d] + bias[o].
template <class T>
Var linear(Tape<T>& tape, Var x, Var weight, Var bias);

/// Elementwise max(0, x); the subgradient at 0 is 0.
template <class T>
Var relu(Tape<T>& tape, Var x);

/// 2x2 non-overlapping max pooling. Gradient goes to the first maximum in
/// row-major window order.
template <class T>
Var max_pool2(Tape<T>& tape, Var x);

/// Mean over the spatial axes: [N,C,H,W] -> [N,C].
template <class T>
Var global_avg_pool(Tape<T>& tape, Var x);

enum class BnMode { train, eval };

template <class T>
struct RunningMoments {
  Tensor<T> mean;
  Tensor<T> var;
};

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

/// Per-channel batch normalisation. Train mode normalises with the biased
/// batch variance and folds the unbiased variance into the running moments;
/// eval mode uses the running moments.
template <class T>
Var batch_norm2d(Tape<T>& tape, Var x, Var scale, Var shift, RunningMoments<T>& moments, BnMode mode);

/// Mean over the batch of -log softmax(logits)[label].
template <class T>
Var softmax_cross_entropy(Tape<T>& tape, Var logits, std::span<const int> labels);

/// Mean of (pred - target)^2 over every element.
template <class T>
Var square_loss(Tape<T>& tape, Var pred, const Tensor<T>& target);

/// Sum of all elements, as a scalar.
template <class T>
Var sum(Tape<T>& tape, Var x);

/// Elementwise a + b for equal shapes.
template <class T>
Var add(Tape<T>& tape, Var a, Var b);

/// Per-row cross entropy values for already computed logits, no tape.
template <class T>
std::vector<double> cross_entropy_rows(const Tensor<T>& logits, std::span<const int> labels);

}  // namespace uda::ops
