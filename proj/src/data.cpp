#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

#include "uda/data.hpp"

namespace uda {

LabeledSet::LabeledSet(Tensor<float> images_in, std::vector<int> labels_in, int classes)
    : images(std::move(images_in)), labels(std::move(labels_in)), num_classes(classes) {
  if (images.rank() != 4) throw DimensionError("labeled images must be [N,C,H,W]");
  if (images.dim(0) != labels.size()) throw ConsistencyError("label count does not match image count");
  for (int l : labels) {
    if (l < 0 || l >= num_classes) throw LabelError("label " + std::to_string(l) + " outside [0," + std::to_string(num_classes) + ")");
  }
}

LabeledSet LabeledSet::gather(std::span<const std::size_t> rows) const {
  std::vector<int> y;
  y.reserve(rows.size());
  for (auto r : rows) y.push_back(labels.at(r));
  return LabeledSet(images.gather(rows), std::move(y), num_classes);
}

UnlabeledSet::UnlabeledSet(Tensor<float> images) : images_(std::move(images)) {
  if (images_.rank() != 4) throw DimensionError("unlabeled images must be [N,C,H,W]");
}

UnlabeledSet::UnlabeledSet(Tensor<float> images, std::vector<int> sidecar_labels, int num_classes)
    : images_(std::move(images)), sidecar_(std::move(sidecar_labels)), num_classes_(num_classes) {
  if (images_.rank() != 4) throw DimensionError("unlabeled images must be [N,C,H,W]");
  if (sidecar_->size() != images_.dim(0)) throw ConsistencyError("sidecar label count does not match image count");
  for (int l : *sidecar_) {
    if (l < 0 || l >= num_classes_) throw LabelError("sidecar label outside the class range");
  }
}

UnlabeledSet UnlabeledSet::with_images(Tensor<float> images) const {
  if (images.rank() != 4 || images.dim(0) != size()) throw DimensionError("replacement images must keep the row count");
  if (!sidecar_) return UnlabeledSet(std::move(images));
  return UnlabeledSet(std::move(images), *sidecar_, num_classes_);
}

const std::vector<int>& UnlabeledSet::sidecar(const SidecarKey&) const {
  if (!sidecar_) throw UsageError("set has no evaluation labels");
  return *sidecar_;
}

UnlabeledSet UnlabeledSet::gather(std::span<const std::size_t> rows) const {
  if (!sidecar_) return UnlabeledSet(images_.gather(rows));
  std::vector<int> y;
  y.reserve(rows.size());
  for (auto r : rows) y.push_back(sidecar_->at(r));
  return UnlabeledSet(images_.gather(rows), std::move(y), num_classes_);
}

void DomainPair::validate() const {
  auto check = [](const Tensor<float>& t, const char* name) {
    if (t.rank() != 4 || t.dim(0) == 0) throw ConsistencyError(std::string(name) + " is empty");
  };
  check(source_train.images, "source train");
  check(source_val.images, "source validation");
  check(target_train.images(), "target train");
  check(target_val.images(), "target validation");
  const Shape item(source_train.images.shape().begin() + 1, source_train.images.shape().end());
  for (const Tensor<float>* t : {&source_val.images, &target_train.images(), &target_val.images()}) {
    if (Shape(t->shape().begin() + 1, t->shape().end()) != item) {
      throw ConsistencyError("all splits must share image extents " + shape_string(item));
    }
  }
  if (target_train.has_sidecar() || target_val.has_sidecar()) {
    throw ConsistencyError("target training and validation splits must not carry labels");
  }
}

Tensor<float> pad_images(const Tensor<float>& images, std::size_t height, std::size_t width) {
  if (images.rank() != 4) throw DimensionError("pad_images expects [N,C,H,W]");
  const std::size_t n = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3);
  if (height < h || width < w) throw DimensionError("pad target smaller than the images");
  const std::size_t top = (height - h) / 2, left = (width - w) / 2;
  Tensor<float> out({n, c, height, width});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t r = 0; r < h; ++r)
        for (std::size_t q = 0; q < w; ++q) out.at(i, ch, r + top, q + left) = images.at(i, ch, r, q);
  return out;
}

std::string shift_name(ShiftKind kind) {
  switch (kind) {
    case ShiftKind::brightness_scale: return "brightness_scale";
    case ShiftKind::channel_blend: return "channel_blend";
    case ShiftKind::additive_noise: return "additive_noise";
  }
  return "unknown";
}

ShiftKind parse_shift_kind(const std::string& name) {
  if (name == "brightness_scale") return ShiftKind::brightness_scale;
  if (name == "channel_blend") return ShiftKind::channel_blend;
  if (name == "additive_noise") return ShiftKind::additive_noise;
  throw ConfigError("unknown shift kind '" + name + "'");
}

void ShiftSpec::validate() const {
  if (kind == ShiftKind::brightness_scale && !(alpha > 0)) throw ConfigError("brightness scale alpha must be positive");
  if (kind == ShiftKind::channel_blend && !(beta >= 0 && beta <= 1)) throw ConfigError("blend weight beta must lie in [0,1]");
  if (kind == ShiftKind::additive_noise && !(sigma >= 0)) throw ConfigError("noise sigma must be nonnegative");
}

Tensor<float> blend_field(std::size_t channels, std::size_t height, std::size_t width, std::uint64_t seed) {
  constexpr std::array<std::size_t, 3> kGrids{4, 8, 16};
  Rng rng(seed);
  Tensor<float> field({channels, height, width});
  std::vector<double> plane(height * width);
  for (std::size_t ch = 0; ch < channels; ++ch) {
    std::fill(plane.begin(), plane.end(), 0.0);
    double amplitude = 1.0;
    for (const std::size_t g : kGrids) {
      std::vector<double> grid(g * g);
      for (double& v : grid) v = uniform01(rng);
      for (std::size_t r = 0; r < height; ++r) {
        const double gy = height > 1 ? double(r) / double(height - 1) * double(g - 1) : 0.0;
        const std::size_t y0 = std::min(static_cast<std::size_t>(gy), g - 2);
        const double fy = gy - double(y0);
        for (std::size_t q = 0; q < width; ++q) {
          const double gx = width > 1 ? double(q) / double(width - 1) * double(g - 1) : 0.0;
          const std::size_t x0 = std::min(static_cast<std::size_t>(gx), g - 2);
          const double fx = gx - double(x0);
          const double top = grid[y0 * g + x0] * (1 - fx) + grid[y0 * g + x0 + 1] * fx;
          const double bottom = grid[(y0 + 1) * g + x0] * (1 - fx) + grid[(y0 + 1) * g + x0 + 1] * fx;
          plane[r * width + q] += amplitude * (top * (1 - fy) + bottom * fy);
        }
      }
      amplitude *= 0.5;
    }
    const auto [lo, hi] = std::minmax_element(plane.begin(), plane.end());
    const double span = *hi - *lo;
    for (std::size_t i = 0; i < plane.size(); ++i) {
      field[ch * plane.size() + i] = static_cast<float>(span > 0 ? (plane[i] - *lo) / span : 0.5);
    }
  }
  return field;
}

Tensor<float> apply_shift(const Tensor<float>& images, const ShiftSpec& spec, std::uint64_t seed) {
  spec.validate();
  if (images.rank() != 4) throw DimensionError("apply_shift expects [N,C,H,W]");
  Tensor<float> out = images;
  const std::size_t n = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3);
  const std::size_t per = c * h * w;
  switch (spec.kind) {
    case ShiftKind::brightness_scale: {
      if (spec.alpha == 1.0) break;
      const float a = static_cast<float>(spec.alpha);
      for (auto& v : out.data()) v = std::clamp(a * v, 0.0f, 1.0f);
      break;
    }
    case ShiftKind::channel_blend: {
      if (spec.beta == 0.0) break;
      const float b = static_cast<float>(spec.beta);
      for (std::size_t i = 0; i < n; ++i) {
        const Tensor<float> field = blend_field(c, h, w, derive_seed(seed, {i}));
        float* dst = out.data().data() + i * per;
        for (std::size_t p = 0; p < per; ++p) dst[p] = (1.0f - b) * dst[p] + b * field[p];
      }
      break;
    }
    case ShiftKind::additive_noise: {
      if (spec.sigma == 0.0) break;
      Rng rng(seed);
      for (auto& v : out.data()) v = std::clamp(v + static_cast<float>(spec.sigma * standard_normal(rng)), 0.0f, 1.0f);
      break;
    }
  }
  return out;
}

LabeledSet apply_shift(const LabeledSet& set, const ShiftSpec& spec, std::uint64_t seed) {
  return LabeledSet(apply_shift(set.images, spec, seed), set.labels, set.num_classes);
}

UnlabeledSet apply_shift(const UnlabeledSet& set, const ShiftSpec& spec, std::uint64_t seed) {
  return set.with_images(apply_shift(set.images(), spec, seed));
}

std::vector<std::vector<std::size_t>> split_indices(std::size_t n, std::span<const double> fractions, std::uint64_t seed) {
  if (fractions.empty()) throw ConfigError("split needs at least one fraction");
  double total = 0;
  for (double f : fractions) {
    if (f < 0) throw ConfigError("split fractions must be nonnegative");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");
  Rng rng = make_rng(seed, {0x5017});
  const auto perm = permutation(n, rng);
  std::vector<std::vector<std::size_t>> parts;
  double cum = 0;
  std::size_t begin = 0;
  for (std::size_t i = 0; i < fractions.size(); ++i) {
    cum += fractions[i];
    const std::size_t end = i + 1 == fractions.size() ? n : static_cast<std::size_t>(std::llround(cum * double(n)));
    if (end <= begin) throw ConfigError("split part " + std::to_string(i) + " would be empty");
    parts.emplace_back(perm.begin() + begin, perm.begin() + end);
    begin = end;
  }
  return parts;
}

std::vector<LabeledSet> split(const LabeledSet& set, std::span<const double> fractions, std::uint64_t seed) {
  std::vector<LabeledSet> out;
  for (const auto& idx : split_indices(set.size(), fractions, seed)) out.push_back(set.gather(idx));
  return out;
}

std::vector<UnlabeledSet> split(const UnlabeledSet& set, std::span<const double> fractions, std::uint64_t seed) {
  std::vector<UnlabeledSet> out;
  for (const auto& idx : split_indices(set.size(), fractions, seed)) out.push_back(set.gather(idx));
  return out;
}

std::vector<Domain> BalancedBatch::provenance() const {
  std::vector<Domain> p(source.size(), Domain::source);
  p.insert(p.end(), target.size(), Domain::target);
  return p;
}

BalancedBatches::BalancedBatches(std::size_t source_size, std::size_t target_size, std::size_t batch_size,
                                 std::uint64_t seed)
    : half_(batch_size / 2),
      source_{source_size, make_rng(seed, {0}), {}, 0},
      target_{target_size, make_rng(seed, {1}), {}, 0} {
  if (batch_size == 0 || batch_size % 2) throw ConfigError("balanced batch size must be even and positive");
  if (source_size == 0 || target_size == 0) throw ConfigError("balanced batches need nonempty source and target sets");
}

std::size_t BalancedBatches::batches_per_epoch() const {
  const std::size_t larger = std::max(source_.size, target_.size);
  return std::max<std::size_t>(1, larger / half_);
}

void BalancedBatches::Cycle::fill(std::vector<std::size_t>& out, std::size_t count) {
  const std::size_t start = out.size();
  for (std::size_t drawn = 0; drawn < count; ++drawn) {
    if (pos == order.size()) {
      order = permutation(size, rng);
      pos = 0;
      if (out.size() > start) {
        // Push indices already in this batch to the back of the new cycle.
        std::vector<std::size_t> taken(out.begin() + static_cast<std::ptrdiff_t>(start), out.end());
        std::sort(taken.begin(), taken.end());
        std::stable_partition(order.begin(), order.end(),
                              [&](std::size_t i) { return !std::binary_search(taken.begin(), taken.end(), i); });
      }
    }
    out.push_back(order[pos++]);
  }
}

BalancedBatch BalancedBatches::next() {
  BalancedBatch b;
  b.source.reserve(half_);
  b.target.reserve(half_);
  source_.fill(b.source, half_);
  target_.fill(b.target, half_);
  return b;
}

Tensor<float> gather_balanced(const Tensor<float>& source_images, const Tensor<float>& target_images,
                              const BalancedBatch& batch) {
  const Tensor<float> s = source_images.gather(batch.source);
  const Tensor<float> t = target_images.gather(batch.target);
  if (Shape(s.shape().begin() + 1, s.shape().end()) != Shape(t.shape().begin() + 1, t.shape().end())) {
    throw DimensionError("source and target images differ in extents");
  }
  Shape shape = s.shape();
  shape[0] += t.dim(0);
  std::vector<float> data(s.data().begin(), s.data().end());
  data.insert(data.end(), t.data().begin(), t.data().end());
  return Tensor<float>(std::move(shape), std::move(data));
}

}  // namespace uda
