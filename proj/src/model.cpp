#include "uda/model.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <set>
#include <string_view>

#include "uda/rng.hpp"

namespace uda {

std::vector<std::string> EncoderConfig::validate() const {
  if (input_channels == 0) throw ConfigError("encoder needs at least one input channel");
  if (widths.empty()) throw ConfigError("encoder needs at least one stage");
  for (auto w : widths) {
    if (w == 0) throw ConfigError("encoder stage width must be positive");
  }
  if (feature_dim != widths.back()) {
    throw ConfigError("feature dim " + std::to_string(feature_dim) + " must equal the last stage width " +
                      std::to_string(widths.back()));
  }
  std::vector<std::string> warnings;
  if (feature_dim < kMinFeatureDim || feature_dim > kMaxFeatureDim) {
    warnings.push_back("feature dim " + std::to_string(feature_dim) + " outside the usual range [" +
                       std::to_string(kMinFeatureDim) + ", " + std::to_string(kMaxFeatureDim) + "]");
  }
  return warnings;
}

namespace {

template <class T>
Tensor<T> uniform_tensor(Shape shape, double bound, std::uint64_t seed, std::string_view name) {
  Rng rng = make_rng(seed, {fnv1a(name)});
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>((2.0 * uniform01(rng) - 1.0) * bound);
  return t;
}

template <class T>
ConvParams<T> make_conv(std::size_t out, std::size_t in, std::size_t k, std::uint64_t seed, const std::string& name) {
  const double bound = std::sqrt(1.0 / static_cast<double>(in * k * k));
  return {uniform_tensor<T>({out, in, k, k}, bound, seed, name + ".weight"), Tensor<T>({out})};
}

template <class T>
NormParams<T> make_norm(std::size_t c) {
  return {Tensor<T>({c}, T{1}), Tensor<T>({c}), {Tensor<T>({c}), Tensor<T>({c}, T{1})}};
}

}  // namespace

template <class T>
Model<T>::Model(EncoderConfig encoder, std::vector<HeadConfig> heads, std::uint64_t seed)
    : encoder_(std::move(encoder)) {
  encoder_.validate();
  std::set<int> ids;
  for (const auto& h : heads) {
    if (!ids.insert(h.task_id).second) throw ConfigError("duplicate task id " + std::to_string(h.task_id));
    if (h.task_id < 0) throw ConfigError("task ids must be nonnegative");
    if (h.output_dim == 0) throw ConfigError("head output dim must be positive");
    if (h.kind == HeadKind::classification && h.output_dim < 2) {
      throw ConfigError("classification heads need at least two outputs");
    }
  }
  if (!ids.count(0)) throw ConfigError("a main head (task id 0) is required");

  std::size_t in = encoder_.input_channels;
  for (std::size_t i = 0; i < encoder_.widths.size(); ++i) {
    const std::size_t w = encoder_.widths[i];
    const std::string prefix = "encoder.stage" + std::to_string(i);
    StageParams<T> st;
    st.conv = make_conv<T>(w, in, 3, seed, prefix + ".conv");
    if (encoder_.residual) {
      st.norm1 = make_norm<T>(in);
      st.norm2 = make_norm<T>(w);
      st.conv2 = make_conv<T>(w, w, 3, seed, prefix + ".conv2");
      if (in != w) st.shortcut = make_conv<T>(w, in, 1, seed, prefix + ".shortcut");
    }
    stages_.push_back(std::move(st));
    in = w;
  }
  if (encoder_.residual) final_norm_ = make_norm<T>(in);

  for (const auto& h : heads) {
    const std::string name = "head" + std::to_string(h.task_id);
    const double bound = std::sqrt(1.0 / static_cast<double>(encoder_.feature_dim));
    heads_.emplace(h.task_id, HeadParams<T>{h, uniform_tensor<T>({h.output_dim, encoder_.feature_dim}, bound, seed, name + ".weight"),
                                            Tensor<T>({h.output_dim})});
  }
}

template <class T>
std::vector<HeadConfig> Model<T>::head_configs() const {
  std::vector<HeadConfig> out;
  for (const auto& [id, h] : heads_) out.push_back(h.config);
  return out;
}

template <class T>
const HeadParams<T>& Model<T>::head(int task_id) const {
  auto it = heads_.find(task_id);
  if (it == heads_.end()) throw UsageError("no head registered for task " + std::to_string(task_id));
  return it->second;
}

template <class T>
void Model<T>::remove_head(int task_id) {
  if (task_id == 0) throw UsageError("the main head cannot be removed");
  if (!heads_.erase(task_id)) throw UsageError("no head registered for task " + std::to_string(task_id));
}

template <class T>
void Model<T>::check_images(const Tensor<T>& images) const {
  if (images.rank() != 4) throw DimensionError("images must be [N,C,H,W], got " + shape_string(images.shape()));
  if (images.dim(1) != encoder_.input_channels) {
    throw DimensionError("images have " + std::to_string(images.dim(1)) + " channels, encoder expects " +
                         std::to_string(encoder_.input_channels));
  }
  const std::size_t f = encoder_.downsample_factor();
  if (images.dim(2) == 0 || images.dim(3) == 0 || images.dim(2) % f || images.dim(3) % f) {
    throw DimensionError("image extents " + shape_string(images.shape()) + " must be positive multiples of " +
                         std::to_string(f));
  }
}

// Only non-const callers pass writable = true or train mode. Eval mode reads
// batch-norm moments without modifying them and read-only registration never
// receives gradients, so the const_casts never write through a const object.
template <class T>
Var Model<T>::encode_impl(Tape<T>& tape, Var images, Mode mode, bool writable) const {
  check_images(tape.value(images));
  auto& self = const_cast<Model&>(*this);
  auto param = [&](const Tensor<T>& p) { return writable ? tape.param(const_cast<Tensor<T>&>(p)) : tape.param(p); };
  const ops::BnMode bn = mode == Mode::train ? ops::BnMode::train : ops::BnMode::eval;
  const ops::Conv2dOptions same{1, 1};

  Var x = images;
  for (std::size_t i = 0; i < stages_.size(); ++i) {
    const StageParams<T>& st = stages_[i];
    auto& mst = self.stages_[i];
    if (!encoder_.residual) {
      x = ops::conv2d(tape, x, param(st.conv.weight), param(st.conv.bias), same);
      x = ops::relu(tape, x);
    } else {
      Var h = ops::batch_norm2d(tape, x, param(st.norm1.scale), param(st.norm1.shift), mst.norm1.moments, bn);
      h = ops::relu(tape, h);
      h = ops::conv2d(tape, h, param(st.conv.weight), param(st.conv.bias), same);
      h = ops::batch_norm2d(tape, h, param(st.norm2.scale), param(st.norm2.shift), mst.norm2.moments, bn);
      h = ops::relu(tape, h);
      h = ops::conv2d(tape, h, param(st.conv2.weight), param(st.conv2.bias), same);
      Var skip = x;
      if (st.shortcut) skip = ops::conv2d(tape, x, param(st.shortcut->weight), param(st.shortcut->bias));
      x = ops::add(tape, h, skip);
    }
    x = ops::max_pool2(tape, x);
  }
  if (encoder_.residual) {
    x = ops::batch_norm2d(tape, x, param(final_norm_.scale), param(final_norm_.shift), self.final_norm_.moments, bn);
    x = ops::relu(tape, x);
  }
  return ops::global_avg_pool(tape, x);
}

template <class T>
Var Model<T>::head_impl(Tape<T>& tape, int task_id, Var features) const {
  const HeadParams<T>& h = head(task_id);
  return ops::linear(tape, features, tape.param(h.weight), tape.param(h.bias));
}

template <class T>
Var Model<T>::encode(Tape<T>& tape, Var images, Mode mode) {
  return encode_impl(tape, images, mode, true);
}

template <class T>
Var Model<T>::head_forward(Tape<T>& tape, int task_id, Var features) {
  auto it = heads_.find(task_id);
  if (it == heads_.end()) throw UsageError("no head registered for task " + std::to_string(task_id));
  return ops::linear(tape, features, tape.param(it->second.weight), tape.param(it->second.bias));
}

template <class T>
Tensor<T> Model<T>::features(const Tensor<T>& images, std::size_t chunk) const {
  check_images(images);
  const std::size_t n = images.dim(0);
  Tensor<T> out({n, encoder_.feature_dim});
  chunk = std::max<std::size_t>(chunk, 1);
  for (std::size_t b = 0; b < n; b += chunk) {
    const std::size_t e = std::min(n, b + chunk);
    Tape<T> tape(GradMode::disabled);
    Var f = encode_impl(tape, tape.input(images.slice(b, e)), Mode::eval, false);
    std::copy(tape.value(f).data().begin(), tape.value(f).data().end(), out.data().begin() + b * encoder_.feature_dim);
  }
  return out;
}

template <class T>
Tensor<T> Model<T>::outputs(const Tensor<T>& images, int task_id, std::size_t chunk) const {
  const std::size_t dim = head(task_id).config.output_dim;
  check_images(images);
  const std::size_t n = images.dim(0);
  Tensor<T> out({n, dim});
  chunk = std::max<std::size_t>(chunk, 1);
  for (std::size_t b = 0; b < n; b += chunk) {
    const std::size_t e = std::min(n, b + chunk);
    Tape<T> tape(GradMode::disabled);
    Var f = encode_impl(tape, tape.input(images.slice(b, e)), Mode::eval, false);
    Var o = head_impl(tape, task_id, f);
    std::copy(tape.value(o).data().begin(), tape.value(o).data().end(), out.data().begin() + b * dim);
  }
  return out;
}

template <class T>
std::vector<int> Model<T>::predict(const Tensor<T>& images, std::size_t chunk) const {
  const Tensor<T> logits = outputs(images, 0, chunk);
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  std::vector<int> out(n);
  for (std::size_t r = 0; r < n; ++r) {
    const T* row = logits.data().data() + r * k;
    out[r] = static_cast<int>(std::max_element(row, row + k) - row);
  }
  return out;
}

template <class T>
template <class Self, class Fn>
void Model<T>::visit(Self& self, Fn&& fn, bool include_buffers) {
  for (std::size_t i = 0; i < self.stages_.size(); ++i) {
    auto& st = self.stages_[i];
    const std::string p = "encoder.stage" + std::to_string(i);
    fn(p + ".conv.weight", st.conv.weight, false);
    fn(p + ".conv.bias", st.conv.bias, false);
    if (self.encoder_.residual) {
      fn(p + ".norm1.scale", st.norm1.scale, false);
      fn(p + ".norm1.shift", st.norm1.shift, false);
      fn(p + ".conv2.weight", st.conv2.weight, false);
      fn(p + ".conv2.bias", st.conv2.bias, false);
      fn(p + ".norm2.scale", st.norm2.scale, false);
      fn(p + ".norm2.shift", st.norm2.shift, false);
      if (st.shortcut) {
        fn(p + ".shortcut.weight", st.shortcut->weight, false);
        fn(p + ".shortcut.bias", st.shortcut->bias, false);
      }
      if (include_buffers) {
        fn(p + ".norm1.running_mean", st.norm1.moments.mean, true);
        fn(p + ".norm1.running_var", st.norm1.moments.var, true);
        fn(p + ".norm2.running_mean", st.norm2.moments.mean, true);
        fn(p + ".norm2.running_var", st.norm2.moments.var, true);
      }
    }
  }
  if (self.encoder_.residual) {
    fn(std::string("encoder.final_norm.scale"), self.final_norm_.scale, false);
    fn(std::string("encoder.final_norm.shift"), self.final_norm_.shift, false);
    if (include_buffers) {
      fn(std::string("encoder.final_norm.running_mean"), self.final_norm_.moments.mean, true);
      fn(std::string("encoder.final_norm.running_var"), self.final_norm_.moments.var, true);
    }
  }
}

template <class T>
std::vector<NamedParam<T>> Model<T>::encoder_parameters() {
  std::vector<NamedParam<T>> out;
  visit(*this, [&](const std::string& name, Tensor<T>& t, bool buffer) {
    if (!buffer) out.push_back({name, &t});
  }, false);
  return out;
}

template <class T>
std::vector<NamedParam<T>> Model<T>::head_parameters(int task_id) {
  auto it = heads_.find(task_id);
  if (it == heads_.end()) throw UsageError("no head registered for task " + std::to_string(task_id));
  const std::string p = "head" + std::to_string(task_id);
  return {{p + ".weight", &it->second.weight}, {p + ".bias", &it->second.bias}};
}

template <class T>
std::vector<NamedParam<T>> Model<T>::parameters() {
  auto out = encoder_parameters();
  for (auto& [id, h] : heads_) {
    auto hp = head_parameters(id);
    out.insert(out.end(), hp.begin(), hp.end());
  }
  return out;
}

template <class T>
std::vector<NamedParam<T>> Model<T>::buffers() {
  std::vector<NamedParam<T>> out;
  visit(*this, [&](const std::string& name, Tensor<T>& t, bool buffer) {
    if (buffer) out.push_back({name, &t});
  }, true);
  return out;
}

template <class T>
std::size_t Model<T>::parameter_count() const {
  std::size_t n = 0;
  visit(*this, [&](const std::string&, const Tensor<T>& t, bool buffer) {
    if (!buffer) n += t.size();
  }, false);
  for (const auto& [id, h] : heads_) n += h.weight.size() + h.bias.size();
  return n;
}

template <class T>
void Model<T>::zero_grad() {
  for (auto& p : parameters()) p.tensor->zero_grad();
}

template <class T>
Model<T> init_model(const EncoderConfig& encoder, const std::vector<HeadConfig>& heads, std::uint64_t seed) {
  for (const auto& w : encoder.validate()) std::cerr << "warning: " << w << '\n';
  return Model<T>(encoder, heads, seed);
}

template <class T>
std::uint64_t parameter_checksum(const Model<T>& model) {
  auto& m = const_cast<Model<T>&>(model);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&](const NamedParam<T>& p) {
    h = fnv1a(p.name, h);
    auto d = p.tensor->data();
    h = fnv1a(std::string_view(reinterpret_cast<const char*>(d.data()), d.size_bytes()), h);
  };
  for (const auto& p : m.parameters()) mix(p);
  for (const auto& p : m.buffers()) mix(p);
  return h;
}

template class Model<float>;
template class Model<double>;
template Model<float> init_model<float>(const EncoderConfig&, const std::vector<HeadConfig>&, std::uint64_t);
template Model<double> init_model<double>(const EncoderConfig&, const std::vector<HeadConfig>&, std::uint64_t);
template std::uint64_t parameter_checksum<float>(const Model<float>&);
template std::uint64_t parameter_checksum<double>(const Model<double>&);

}  // namespace uda
