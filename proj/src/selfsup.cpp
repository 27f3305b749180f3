#include "uda/selfsup.hpp"

#include <cmath>

#include "uda/ops.hpp"

namespace uda {

std::string task_name(TaskKind kind) {
  switch (kind) {
    case TaskKind::rotation: return "rotation";
    case TaskKind::vflip: return "flip";
    case TaskKind::loc4: return "loc4";
    case TaskKind::loc_regress: return "loc_regress";
  }
  return "unknown";
}

TaskKind parse_task_kind(const std::string& name) {
  if (name == "rotation") return TaskKind::rotation;
  if (name == "flip" || name == "vflip") return TaskKind::vflip;
  if (name == "loc4") return TaskKind::loc4;
  if (name == "loc_regress") return TaskKind::loc_regress;
  throw ConfigError("unknown self-supervised task '" + name + "'");
}

std::size_t TaskSpec::output_dim() const {
  switch (kind) {
    case TaskKind::rotation: return 4;
    case TaskKind::vflip: return 2;
    case TaskKind::loc4: return 4;
    case TaskKind::loc_regress: return 2;
  }
  return 0;
}

namespace {

template <class T>
void require_image(const Tensor<T>& image) {
  if (image.rank() != 3) throw DimensionError("expected a [C,H,W] image, got " + shape_string(image.shape()));
}

void require_batch(const Tensor<float>& images, std::span<const Domain> provenance) {
  if (images.rank() != 4) throw DimensionError("expected [N,C,H,W] images, got " + shape_string(images.shape()));
  if (provenance.size() != images.dim(0)) throw DimensionError("provenance count does not match image count");
}

Tensor<float> image_at(const Tensor<float>& images, std::size_t n) {
  Tensor<float> img = images.slice(n, n + 1);
  img.reshape({images.dim(1), images.dim(2), images.dim(3)});
  return img;
}

std::size_t resolve_patch(std::size_t patch, std::size_t h) { return patch == 0 ? h / 2 : patch; }

}  // namespace

template <class T>
Tensor<T> rotate90(const Tensor<T>& image, int k) {
  require_image(image);
  if (k < 0 || k > 3) throw UsageError("rotation count must be in 0..3");
  Tensor<T> cur = image;
  for (int turn = 0; turn < k; ++turn) {
    const std::size_t c = cur.dim(0), h = cur.dim(1), w = cur.dim(2);
    Tensor<T> out({c, w, h});
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t i = 0; i < w; ++i) {
        for (std::size_t j = 0; j < h; ++j) out[(ch * w + i) * h + j] = cur[(ch * h + j) * w + (w - 1 - i)];
      }
    }
    cur = std::move(out);
  }
  return cur;
}

template <class T>
Tensor<T> vflip(const Tensor<T>& image) {
  require_image(image);
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  Tensor<T> out(image.shape());
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t r = 0; r < h; ++r) {
      for (std::size_t col = 0; col < w; ++col) out[(ch * h + r) * w + col] = image[(ch * h + (h - 1 - r)) * w + col];
    }
  }
  return out;
}

template <class T>
Tensor<T> crop(const Tensor<T>& image, std::size_t row, std::size_t col, std::size_t size) {
  require_image(image);
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (size == 0 || row + size > h || col + size > w) throw ConfigError("crop window outside the image");
  Tensor<T> out({c, size, size});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t r = 0; r < size; ++r) {
      for (std::size_t q = 0; q < size; ++q) out[(ch * size + r) * size + q] = image[(ch * h + row + r) * w + col + q];
    }
  }
  return out;
}

std::array<float, 2> corner_to_target(std::size_t row, std::size_t col, std::size_t h, std::size_t w, std::size_t patch) {
  if (patch >= h || patch >= w) throw ConfigError("regression patch must be smaller than the image");
  return {static_cast<float>(static_cast<double>(row) / static_cast<double>(h - patch)),
          static_cast<float>(static_cast<double>(col) / static_cast<double>(w - patch))};
}

std::array<std::size_t, 2> target_to_corner(std::array<float, 2> target, std::size_t h, std::size_t w, std::size_t patch) {
  if (patch >= h || patch >= w) throw ConfigError("regression patch must be smaller than the image");
  return {static_cast<std::size_t>(std::lround(double(target[0]) * double(h - patch))),
          static_cast<std::size_t>(std::lround(double(target[1]) * double(w - patch)))};
}

SelfSupBatch make_rotation_batch(const Tensor<float>& images, std::span<const Domain> provenance, Rng& rng,
                                 bool all_rotations) {
  require_batch(images, provenance);
  if (images.dim(2) != images.dim(3)) throw ConfigError("rotation batches need square images");
  const std::size_t n = images.dim(0);
  std::vector<Tensor<float>> out;
  SelfSupBatch batch;
  for (std::size_t i = 0; i < n; ++i) {
    const Tensor<float> img = image_at(images, i);
    if (all_rotations) {
      for (int k = 0; k < 4; ++k) {
        out.push_back(rotate90(img, k));
        batch.labels.push_back(k);
        batch.provenance.push_back(provenance[i]);
      }
    } else {
      const int k = static_cast<int>(uniform_index(rng, 4));
      out.push_back(rotate90(img, k));
      batch.labels.push_back(k);
      batch.provenance.push_back(provenance[i]);
    }
  }
  batch.images = stack<float>(out);
  return batch;
}

SelfSupBatch make_flip_batch(const Tensor<float>& images, std::span<const Domain> provenance, Rng& rng) {
  require_batch(images, provenance);
  const std::size_t n = images.dim(0);
  std::vector<Tensor<float>> out;
  SelfSupBatch batch;
  for (std::size_t i = 0; i < n; ++i) {
    const bool flip = uniform_index(rng, 2) == 1;
    const Tensor<float> img = image_at(images, i);
    out.push_back(flip ? vflip(img) : img);
    batch.labels.push_back(flip ? 1 : 0);
    batch.provenance.push_back(provenance[i]);
  }
  batch.images = stack<float>(out);
  return batch;
}

SelfSupBatch make_loc4_batch(const Tensor<float>& images, std::span<const Domain> provenance, std::size_t patch_size,
                             Rng& rng) {
  require_batch(images, provenance);
  const std::size_t h = images.dim(2), w = images.dim(3);
  const std::size_t half_h = h / 2, half_w = w / 2;
  const std::size_t p = resolve_patch(patch_size, h);
  if (p == 0 || p > half_h || p > half_w) {
    throw ConfigError("loc4 patch size " + std::to_string(p) + " exceeds a quadrant of " + shape_string(images.shape()));
  }
  std::vector<Tensor<float>> out;
  SelfSupBatch batch;
  for (std::size_t i = 0; i < images.dim(0); ++i) {
    const int q = static_cast<int>(uniform_index(rng, 4));
    const int row_half = q / 2, col_half = q % 2;
    std::size_t r = row_half * half_h, c = col_half * half_w;
    if (p < half_h) r += uniform_index(rng, half_h - p + 1);
    if (p < half_w) c += uniform_index(rng, half_w - p + 1);
    out.push_back(crop(image_at(images, i), r, c, p));
    batch.labels.push_back(quadrant_label(row_half, col_half));
    batch.provenance.push_back(provenance[i]);
  }
  batch.images = stack<float>(out);
  return batch;
}

SelfSupBatch make_loc_regress_batch(const Tensor<float>& images, std::span<const Domain> provenance,
                                    std::size_t patch_size, Rng& rng) {
  require_batch(images, provenance);
  const std::size_t h = images.dim(2), w = images.dim(3);
  const std::size_t p = resolve_patch(patch_size, h);
  if (p == 0 || p >= h || p >= w) {
    throw ConfigError("loc_regress patch size " + std::to_string(p) + " must be smaller than " + shape_string(images.shape()));
  }
  std::vector<Tensor<float>> out;
  SelfSupBatch batch;
  batch.targets = Tensor<float>({images.dim(0), 2});
  for (std::size_t i = 0; i < images.dim(0); ++i) {
    const std::size_t r = uniform_index(rng, h - p + 1);
    const std::size_t c = uniform_index(rng, w - p + 1);
    out.push_back(crop(image_at(images, i), r, c, p));
    const auto t = corner_to_target(r, c, h, w, p);
    batch.targets.at(i, 0) = t[0];
    batch.targets.at(i, 1) = t[1];
    batch.provenance.push_back(provenance[i]);
  }
  batch.images = stack<float>(out);
  return batch;
}

SelfSupBatch make_task_batch(const TaskSpec& task, const Tensor<float>& images, std::span<const Domain> provenance,
                             Rng& rng) {
  switch (task.kind) {
    case TaskKind::rotation: return make_rotation_batch(images, provenance, rng, task.all_rotations);
    case TaskKind::vflip: return make_flip_batch(images, provenance, rng);
    case TaskKind::loc4: return make_loc4_batch(images, provenance, task.patch_size, rng);
    case TaskKind::loc_regress: return make_loc_regress_batch(images, provenance, task.patch_size, rng);
  }
  throw UsageError("unknown task kind");
}

template <class T>
Var task_loss(Tape<T>& tape, const TaskSpec& task, Var head_output, const SelfSupBatch& batch) {
  const Tensor<T>& out = tape.value(head_output);
  if (out.rank() != 2 || out.dim(1) != task.output_dim()) {
    throw UsageError("head output " + shape_string(out.shape()) + " does not fit task " + task_name(task.kind));
  }
  if (task.is_regression()) {
    if (!batch.labels.empty() || batch.targets.rank() != 2 || batch.targets.dim(0) != out.dim(0)) {
      throw UsageError("loc_regress needs coordinate targets for every row");
    }
    return ops::square_loss(tape, head_output, batch.targets.template cast<T>());
  }
  if (batch.labels.size() != out.dim(0) || batch.targets.size() != 0) {
    throw UsageError(task_name(task.kind) + " needs one class label per row");
  }
  return ops::softmax_cross_entropy(tape, head_output, std::span<const int>(batch.labels));
}

template Tensor<float> rotate90(const Tensor<float>&, int);
template Tensor<double> rotate90(const Tensor<double>&, int);
template Tensor<float> vflip(const Tensor<float>&);
template Tensor<double> vflip(const Tensor<double>&);
template Tensor<float> crop(const Tensor<float>&, std::size_t, std::size_t, std::size_t);
template Tensor<double> crop(const Tensor<double>&, std::size_t, std::size_t, std::size_t);
template Var task_loss<float>(Tape<float>&, const TaskSpec&, Var, const SelfSupBatch&);
template Var task_loss<double>(Tape<double>&, const TaskSpec&, Var, const SelfSupBatch&);

}  // namespace uda
