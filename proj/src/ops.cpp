#include "uda/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

namespace uda::ops {
namespace {

template <class T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapR = Eigen::Map<MatR<T>>;
template <class T>
using CMapR = Eigen::Map<const MatR<T>>;
template <class T>
using StridedMap = Eigen::Map<const MatR<T>, Eigen::Unaligned, Eigen::OuterStride<>>;

template <class T>
void check_finite(const Tensor<T>& t, const char* op) {
  if (!t.all_finite()) throw NumericError(std::string("non-finite output in ") + op);
}

template <class T>
void require_rank(const Tensor<T>& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(what) + " must have rank " + std::to_string(rank) + ", got " +
                         shape_string(t.shape()));
  }
}

template <class T>
void accumulate(std::vector<T>& dst, std::span<const T> src) {
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
}

struct ConvGeometry {
  std::size_t n, c, h, w, o, kh, kw, stride, pad, oh, ow;
  std::size_t patch() const { return c * kh * kw; }
  std::size_t pixels() const { return oh * ow; }
};

// Output columns [lo, hi) read in-bounds input pixels for kernel column j.
inline void valid_columns(const ConvGeometry& g, std::size_t j, std::size_t& lo, std::size_t& hi) {
  const long pad = static_cast<long>(g.pad), jj = static_cast<long>(j), s = static_cast<long>(g.stride);
  long first = pad - jj > 0 ? (pad - jj + s - 1) / s : 0;
  long last = (static_cast<long>(g.w) - 1 + pad - jj);
  last = last < 0 ? -1 : last / s;
  lo = static_cast<std::size_t>(std::min<long>(first, static_cast<long>(g.ow)));
  hi = static_cast<std::size_t>(std::clamp<long>(last + 1, static_cast<long>(lo), static_cast<long>(g.ow)));
}

// cols is (C*kH*kW) x (N*oH*oW); column n*oH*oW + p holds the receptive field
// of output pixel p of image n.
template <class T>
void im2col(const ConvGeometry& g, const T* x, T* cols) {
  const std::size_t width = g.n * g.pixels();
  for (std::size_t c = 0; c < g.c; ++c) {
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        T* row = cols + ((c * g.kh + i) * g.kw + j) * width;
        std::size_t lo, hi;
        valid_columns(g, j, lo, hi);
        for (std::size_t n = 0; n < g.n; ++n) {
          const T* img = x + (n * g.c + c) * g.h * g.w;
          T* dst = row + n * g.pixels();
          for (std::size_t oy = 0; oy < g.oh; ++oy) {
            T* out = dst + oy * g.ow;
            const long iy = static_cast<long>(oy * g.stride + i) - static_cast<long>(g.pad);
            if (iy < 0 || iy >= static_cast<long>(g.h)) {
              std::fill(out, out + g.ow, T{0});
              continue;
            }
            const T* src = img + iy * g.w;
            std::fill(out, out + lo, T{0});
            for (std::size_t ox = lo; ox < hi; ++ox) out[ox] = src[ox * g.stride + j - g.pad];
            std::fill(out + hi, out + g.ow, T{0});
          }
        }
      }
    }
  }
}

template <class T>
void col2im(const ConvGeometry& g, const T* cols, T* dx) {
  const std::size_t width = g.n * g.pixels();
  for (std::size_t c = 0; c < g.c; ++c) {
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        const T* row = cols + ((c * g.kh + i) * g.kw + j) * width;
        std::size_t lo, hi;
        valid_columns(g, j, lo, hi);
        for (std::size_t n = 0; n < g.n; ++n) {
          T* img = dx + (n * g.c + c) * g.h * g.w;
          const T* src = row + n * g.pixels();
          for (std::size_t oy = 0; oy < g.oh; ++oy) {
            const long iy = static_cast<long>(oy * g.stride + i) - static_cast<long>(g.pad);
            if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
            T* dst = img + iy * g.w;
            const T* in = src + oy * g.ow;
            for (std::size_t ox = lo; ox < hi; ++ox) dst[ox * g.stride + j - g.pad] += in[ox];
          }
        }
      }
    }
  }
}

}  // namespace

template <class T>
Var conv2d(Tape<T>& tape, Var x, Var kernel, Var bias, Conv2dOptions opt) {
  const Tensor<T>& in = tape.value(x);
  const Tensor<T>& k = tape.value(kernel);
  const Tensor<T>& b = tape.value(bias);
  require_rank(in, 4, "conv2d input");
  require_rank(k, 4, "conv2d kernel");
  if (opt.stride == 0) throw DimensionError("conv2d stride must be positive");
  if (k.dim(1) != in.dim(1)) {
    throw DimensionError("conv2d kernel channels " + std::to_string(k.dim(1)) + " != input channels " +
                         std::to_string(in.dim(1)));
  }
  if (b.rank() != 1 || b.dim(0) != k.dim(0)) throw DimensionError("conv2d bias must have shape [O]");
  if (k.dim(2) > in.dim(2) + 2 * opt.padding || k.dim(3) > in.dim(3) + 2 * opt.padding) {
    throw DimensionError("conv2d kernel larger than padded input");
  }
  ConvGeometry g{in.dim(0), in.dim(1), in.dim(2), in.dim(3), k.dim(0), k.dim(2), k.dim(3), opt.stride, opt.padding, 0, 0};
  g.oh = (g.h + 2 * g.pad - g.kh) / g.stride + 1;
  g.ow = (g.w + 2 * g.pad - g.kw) / g.stride + 1;

  const std::size_t width = g.n * g.pixels();
  auto cols = std::make_shared<std::vector<T>>(g.patch() * width);
  im2col(g, in.data().data(), cols->data());

  // One product per image so a row's result never depends on the batch it sits in.
  Tensor<T> out({g.n, g.o, g.oh, g.ow});
  const CMapR<T> km(k.data().data(), g.o, g.patch());
  for (std::size_t n = 0; n < g.n; ++n) {
    const StridedMap<T> cm(cols->data() + n * g.pixels(), g.patch(), g.pixels(), Eigen::OuterStride<>(width));
    MapR<T> om(out.data().data() + n * g.o * g.pixels(), g.o, g.pixels());
    om.noalias() = km * cm;
    for (std::size_t o = 0; o < g.o; ++o) om.row(o).array() += b[o];
  }
  check_finite(out, "conv2d");

  const bool needs = tape.requires_grad(x) || tape.requires_grad(kernel) || tape.requires_grad(bias);
  return tape.record(std::move(out), needs, [=](Tape<T>& t, std::span<const T> dout) {
    MatR<T> dprod(g.o, width);
    for (std::size_t n = 0; n < g.n; ++n) {
      for (std::size_t o = 0; o < g.o; ++o) {
        const T* src = dout.data() + (n * g.o + o) * g.pixels();
        std::copy(src, src + g.pixels(), dprod.data() + o * width + n * g.pixels());
      }
    }
    if (t.requires_grad(kernel)) {
      auto& dk = t.grad_buffer(kernel);
      MapR<T>(dk.data(), g.o, g.patch()).noalias() += dprod * CMapR<T>(cols->data(), g.patch(), width).transpose();
    }
    if (t.requires_grad(bias)) {
      auto& db = t.grad_buffer(bias);
      for (std::size_t o = 0; o < g.o; ++o) db[o] += dprod.row(o).sum();
    }
    if (t.requires_grad(x)) {
      MatR<T> dcols = CMapR<T>(t.value(kernel).data().data(), g.o, g.patch()).transpose() * dprod;
      col2im(g, dcols.data(), t.grad_buffer(x).data());
    }
  });
}

template <class T>
Var linear(Tape<T>& tape, Var x, Var weight, Var bias) {
  const Tensor<T>& in = tape.value(x);
  const Tensor<T>& w = tape.value(weight);
  const Tensor<T>& b = tape.value(bias);
  require_rank(in, 2, "linear input");
  require_rank(w, 2, "linear weight");
  if (in.dim(1) != w.dim(1)) {
    throw DimensionError("linear input dim " + std::to_string(in.dim(1)) + " != weight dim " + std::to_string(w.dim(1)));
  }
  if (b.rank() != 1 || b.dim(0) != w.dim(0)) throw DimensionError("linear bias must have shape [O]");
  const std::size_t n = in.dim(0), d = in.dim(1), o = w.dim(0);
  Tensor<T> out({n, o});
  for (std::size_t r = 0; r < n; ++r) {
    const T* xr = in.data().data() + r * d;
    for (std::size_t c = 0; c < o; ++c) {
      const T* wc = w.data().data() + c * d;
      T acc{0};
      for (std::size_t j = 0; j < d; ++j) acc += xr[j] * wc[j];
      out.at(r, c) = acc + b[c];
    }
  }
  check_finite(out, "linear");

  const bool needs = tape.requires_grad(x) || tape.requires_grad(weight) || tape.requires_grad(bias);
  return tape.record(std::move(out), needs, [=](Tape<T>& t, std::span<const T> dout) {
    CMapR<T> dm(dout.data(), n, o);
    if (t.requires_grad(weight)) {
      auto& dw = t.grad_buffer(weight);
      MapR<T>(dw.data(), o, d).noalias() += dm.transpose() * CMapR<T>(t.value(x).data().data(), n, d);
    }
    if (t.requires_grad(bias)) {
      auto& db = t.grad_buffer(bias);
      for (std::size_t c = 0; c < o; ++c) db[c] += dm.col(c).sum();
    }
    if (t.requires_grad(x)) {
      auto& dx = t.grad_buffer(x);
      MapR<T>(dx.data(), n, d).noalias() += dm * CMapR<T>(t.value(weight).data().data(), o, d);
    }
  });
}

template <class T>
Var relu(Tape<T>& tape, Var x) {
  const Tensor<T>& in = tape.value(x);
  Tensor<T> out(in.shape());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > T{0} ? in[i] : T{0};
  check_finite(out, "relu");
  return tape.record(std::move(out), tape.requires_grad(x), [=](Tape<T>& t, std::span<const T> dout) {
    const Tensor<T>& v = t.value(x);
    auto& dx = t.grad_buffer(x);
    for (std::size_t i = 0; i < dout.size(); ++i) {
      if (v[i] > T{0}) dx[i] += dout[i];
    }
  });
}

template <class T>
Var max_pool2(Tape<T>& tape, Var x) {
  const Tensor<T>& in = tape.value(x);
  require_rank(in, 4, "max_pool2 input");
  const std::size_t n = in.dim(0), c = in.dim(1), h = in.dim(2), w = in.dim(3);
  if (h % 2 || w % 2) throw DimensionError("max_pool2 needs even spatial extents, got " + shape_string(in.shape()));
  const std::size_t oh = h / 2, ow = w / 2;
  Tensor<T> out({n, c, oh, ow});
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const T* src = in.data().data() + plane * h * w;
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t xx = 0; xx < ow; ++xx) {
        const std::size_t cand[4] = {(2 * y) * w + 2 * xx, (2 * y) * w + 2 * xx + 1, (2 * y + 1) * w + 2 * xx,
                                     (2 * y + 1) * w + 2 * xx + 1};
        std::size_t best = cand[0];
        for (int q = 1; q < 4; ++q) {
          if (src[cand[q]] > src[best]) best = cand[q];
        }
        const std::size_t o = (plane * oh + y) * ow + xx;
        out[o] = src[best];
        (*argmax)[o] = plane * h * w + best;
      }
    }
  }
  check_finite(out, "max_pool2");
  return tape.record(std::move(out), tape.requires_grad(x), [=](Tape<T>& t, std::span<const T> dout) {
    auto& dx = t.grad_buffer(x);
    for (std::size_t o = 0; o < dout.size(); ++o) dx[(*argmax)[o]] += dout[o];
  });
}

template <class T>
Var global_avg_pool(Tape<T>& tape, Var x) {
  const Tensor<T>& in = tape.value(x);
  require_rank(in, 4, "global_avg_pool input");
  const std::size_t n = in.dim(0), c = in.dim(1), hw = in.dim(2) * in.dim(3);
  Tensor<T> out({n, c});
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    T acc{0};
    const T* src = in.data().data() + plane * hw;
    for (std::size_t p = 0; p < hw; ++p) acc += src[p];
    out[plane] = acc / static_cast<T>(hw);
  }
  check_finite(out, "global_avg_pool");
  return tape.record(std::move(out), tape.requires_grad(x), [=](Tape<T>& t, std::span<const T> dout) {
    auto& dx = t.grad_buffer(x);
    const T inv = T{1} / static_cast<T>(hw);
    for (std::size_t plane = 0; plane < n * c; ++plane) {
      const T g = dout[plane] * inv;
      for (std::size_t p = 0; p < hw; ++p) dx[plane * hw + p] += g;
    }
  });
}

template <class T>
Var batch_norm2d(Tape<T>& tape, Var x, Var scale, Var shift, RunningMoments<T>& moments, BnMode mode) {
  const Tensor<T>& in = tape.value(x);
  require_rank(in, 4, "batch_norm2d input");
  const std::size_t n = in.dim(0), c = in.dim(1), hw = in.dim(2) * in.dim(3);
  const Tensor<T>& gamma = tape.value(scale);
  const Tensor<T>& beta = tape.value(shift);
  if (gamma.size() != c || beta.size() != c || moments.mean.size() != c || moments.var.size() != c) {
    throw DimensionError("batch_norm2d parameters must have one entry per channel");
  }
  const std::size_t count = n * hw;
  if (mode == BnMode::train && count < 2) {
    throw DegenerateBatchError("batch_norm2d train mode needs at least 2 values per channel");
  }

  auto xhat = std::make_shared<std::vector<T>>(in.size());
  auto inv_std = std::make_shared<std::vector<T>>(c);
  Tensor<T> out(in.shape());
  for (std::size_t ch = 0; ch < c; ++ch) {
    T mean, var;
    if (mode == BnMode::train) {
      double acc = 0;
      for (std::size_t b = 0; b < n; ++b) {
        const T* src = in.data().data() + (b * c + ch) * hw;
        for (std::size_t p = 0; p < hw; ++p) acc += src[p];
      }
      mean = static_cast<T>(acc / static_cast<double>(count));
      double sq = 0;
      for (std::size_t b = 0; b < n; ++b) {
        const T* src = in.data().data() + (b * c + ch) * hw;
        for (std::size_t p = 0; p < hw; ++p) sq += double(src[p] - mean) * double(src[p] - mean);
      }
      var = static_cast<T>(sq / static_cast<double>(count));
      const T unbiased = static_cast<T>(sq / static_cast<double>(count - 1));
      const T m = static_cast<T>(kBatchNormMomentum);
      moments.mean[ch] = (T{1} - m) * moments.mean[ch] + m * mean;
      moments.var[ch] = (T{1} - m) * moments.var[ch] + m * unbiased;
    } else {
      mean = moments.mean[ch];
      var = moments.var[ch];
    }
    const T is = T{1} / std::sqrt(var + static_cast<T>(kBatchNormEps));
    (*inv_std)[ch] = is;
    for (std::size_t b = 0; b < n; ++b) {
      const std::size_t off = (b * c + ch) * hw;
      for (std::size_t p = 0; p < hw; ++p) {
        const T xh = (in[off + p] - mean) * is;
        (*xhat)[off + p] = xh;
        out[off + p] = gamma[ch] * xh + beta[ch];
      }
    }
  }
  check_finite(out, "batch_norm2d");

  const bool needs = tape.requires_grad(x) || tape.requires_grad(scale) || tape.requires_grad(shift);
  return tape.record(std::move(out), needs, [=](Tape<T>& t, std::span<const T> dout) {
    const Tensor<T>& g = t.value(scale);
    for (std::size_t ch = 0; ch < c; ++ch) {
      T sum_dy{0}, sum_dy_xhat{0};
      for (std::size_t b = 0; b < n; ++b) {
        const std::size_t off = (b * c + ch) * hw;
        for (std::size_t p = 0; p < hw; ++p) {
          sum_dy += dout[off + p];
          sum_dy_xhat += dout[off + p] * (*xhat)[off + p];
        }
      }
      if (t.requires_grad(scale)) t.grad_buffer(scale)[ch] += sum_dy_xhat;
      if (t.requires_grad(shift)) t.grad_buffer(shift)[ch] += sum_dy;
      if (!t.requires_grad(x)) continue;
      auto& dx = t.grad_buffer(x);
      const T is = (*inv_std)[ch];
      for (std::size_t b = 0; b < n; ++b) {
        const std::size_t off = (b * c + ch) * hw;
        for (std::size_t p = 0; p < hw; ++p) {
          if (mode == BnMode::train) {
            const T m = static_cast<T>(count);
            dx[off + p] += g[ch] * is / m * (m * dout[off + p] - sum_dy - (*xhat)[off + p] * sum_dy_xhat);
          } else {
            dx[off + p] += g[ch] * is * dout[off + p];
          }
        }
      }
    }
  });
}

template <class T>
Var softmax_cross_entropy(Tape<T>& tape, Var logits, std::span<const int> labels) {
  const Tensor<T>& z = tape.value(logits);
  require_rank(z, 2, "softmax_cross_entropy logits");
  const std::size_t n = z.dim(0), k = z.dim(1);
  if (labels.size() != n) throw DimensionError("softmax_cross_entropy label count does not match batch");
  if (n == 0) throw DimensionError("softmax_cross_entropy on an empty batch");
  auto probs = std::make_shared<std::vector<T>>(z.size());
  double total = 0;
  for (std::size_t r = 0; r < n; ++r) {
    if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= k) {
      throw LabelError("label " + std::to_string(labels[r]) + " outside [0," + std::to_string(k) + ")");
    }
    const T* row = z.data().data() + r * k;
    const T mx = *std::max_element(row, row + k);
    T denom{0};
    for (std::size_t j = 0; j < k; ++j) {
      (*probs)[r * k + j] = std::exp(row[j] - mx);
      denom += (*probs)[r * k + j];
    }
    for (std::size_t j = 0; j < k; ++j) (*probs)[r * k + j] /= denom;
    total += static_cast<double>(std::log(denom) + mx - row[labels[r]]);
  }
  Tensor<T> out({1}, static_cast<T>(total / static_cast<double>(n)));
  check_finite(out, "softmax_cross_entropy");
  std::vector<int> y(labels.begin(), labels.end());
  return tape.record(std::move(out), tape.requires_grad(logits), [=, y = std::move(y)](Tape<T>& t, std::span<const T> dout) {
    auto& dz = t.grad_buffer(logits);
    const T scale = dout[0] / static_cast<T>(n);
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t j = 0; j < k; ++j) {
        const T onehot = static_cast<std::size_t>(y[r]) == j ? T{1} : T{0};
        dz[r * k + j] += scale * ((*probs)[r * k + j] - onehot);
      }
    }
  });
}

template <class T>
Var square_loss(Tape<T>& tape, Var pred, const Tensor<T>& target) {
  const Tensor<T>& p = tape.value(pred);
  if (p.shape() != target.shape()) {
    throw DimensionError("square_loss shapes differ: " + shape_string(p.shape()) + " vs " + shape_string(target.shape()));
  }
  if (p.size() == 0) throw DimensionError("square_loss on an empty batch");
  auto diff = std::make_shared<std::vector<T>>(p.size());
  double acc = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    (*diff)[i] = p[i] - target[i];
    acc += double((*diff)[i]) * double((*diff)[i]);
  }
  const std::size_t count = p.size();
  Tensor<T> out({1}, static_cast<T>(acc / static_cast<double>(count)));
  check_finite(out, "square_loss");
  return tape.record(std::move(out), tape.requires_grad(pred), [=](Tape<T>& t, std::span<const T> dout) {
    auto& dp = t.grad_buffer(pred);
    const T scale = T{2} * dout[0] / static_cast<T>(count);
    for (std::size_t i = 0; i < count; ++i) dp[i] += scale * (*diff)[i];
  });
}

template <class T>
Var sum(Tape<T>& tape, Var x) {
  const Tensor<T>& in = tape.value(x);
  T acc{0};
  for (T v : in.data()) acc += v;
  Tensor<T> out({1}, acc);
  check_finite(out, "sum");
  return tape.record(std::move(out), tape.requires_grad(x), [=](Tape<T>& t, std::span<const T> dout) {
    auto& dx = t.grad_buffer(x);
    for (auto& g : dx) g += dout[0];
  });
}

template <class T>
Var add(Tape<T>& tape, Var a, Var b) {
  const Tensor<T>& x = tape.value(a);
  const Tensor<T>& y = tape.value(b);
  if (x.shape() != y.shape()) {
    throw DimensionError("add shapes differ: " + shape_string(x.shape()) + " vs " + shape_string(y.shape()));
  }
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
  check_finite(out, "add");
  const bool needs = tape.requires_grad(a) || tape.requires_grad(b);
  return tape.record(std::move(out), needs, [=](Tape<T>& t, std::span<const T> dout) {
    if (t.requires_grad(a)) accumulate(t.grad_buffer(a), dout);
    if (t.requires_grad(b)) accumulate(t.grad_buffer(b), dout);
  });
}

template <class T>
std::vector<double> cross_entropy_rows(const Tensor<T>& logits, std::span<const int> labels) {
  require_rank(logits, 2, "cross_entropy_rows logits");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  if (labels.size() != n) throw DimensionError("cross_entropy_rows label count does not match batch");
  std::vector<double> out(n);
  for (std::size_t r = 0; r < n; ++r) {
    if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= k) throw LabelError("label out of range");
    const T* row = logits.data().data() + r * k;
    const double mx = *std::max_element(row, row + k);
    double denom = 0;
    for (std::size_t j = 0; j < k; ++j) denom += std::exp(double(row[j]) - mx);
    out[r] = std::log(denom) + mx - double(row[labels[r]]);
  }
  return out;
}

#define UDA_INSTANTIATE_OPS(T)                                                                   \
  template Var conv2d<T>(Tape<T>&, Var, Var, Var, Conv2dOptions);                                \
  template Var linear<T>(Tape<T>&, Var, Var, Var);                                               \
  template Var relu<T>(Tape<T>&, Var);                                                           \
  template Var max_pool2<T>(Tape<T>&, Var);                                                      \
  template Var global_avg_pool<T>(Tape<T>&, Var);                                                \
  template Var batch_norm2d<T>(Tape<T>&, Var, Var, Var, RunningMoments<T>&, BnMode);             \
  template Var softmax_cross_entropy<T>(Tape<T>&, Var, std::span<const int>);                    \
  template Var square_loss<T>(Tape<T>&, Var, const Tensor<T>&);                                  \
  template Var sum<T>(Tape<T>&, Var);                                                            \
  template Var add<T>(Tape<T>&, Var, Var);                                                       \
  template std::vector<double> cross_entropy_rows<T>(const Tensor<T>&, std::span<const int>);

UDA_INSTANTIATE_OPS(float)
UDA_INSTANTIATE_OPS(double)

}  // namespace uda::ops
