#include "uda/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "uda/rng.hpp"

namespace uda {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

namespace {

template <class U>
void put(std::string& out, U value) {
  char bytes[sizeof(U)];
  std::memcpy(bytes, &value, sizeof(U));
  out.append(bytes, sizeof(U));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <class U>
  U get() {
    U value;
    std::memcpy(&value, take(sizeof(U)).data(), sizeof(U));
    return value;
  }

  std::string_view take(std::size_t n) {
    if (n > bytes_.size() - pos_) throw FormatError("checkpoint is truncated");
    auto view = bytes_.substr(pos_, n);
    pos_ += n;
    return view;
  }

  std::size_t position() const { return pos_; }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

const char* head_kind_name(HeadKind kind) { return kind == HeadKind::regression ? "regression" : "classification"; }

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  const std::string meta = ckpt.meta.dump();
  put<std::uint64_t>(out, meta.size());
  out += meta;
  put<std::uint64_t>(out, ckpt.tensors.size());
  for (const auto& [name, tensor] : ckpt.tensors) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(tensor.rank()));
    for (std::size_t d : tensor.shape()) put<std::uint64_t>(out, d);
    out.append(reinterpret_cast<const char*>(tensor.data().data()), tensor.size() * sizeof(float));
  }
  put<std::uint64_t>(out, fnv1a(out));

  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw IoError("cannot write checkpoint " + path.string());
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!file) throw IoError("failed writing checkpoint " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw IoError("cannot open checkpoint " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(file)), std::istreambuf_iterator<char>());
  if (bytes.size() < sizeof(kCheckpointMagic) + sizeof(std::uint64_t) ||
      std::memcmp(bytes.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0) {
    throw FormatError(path.string() + " is not a checkpoint");
  }
  const std::string_view body(bytes.data(), bytes.size() - sizeof(std::uint64_t));
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + body.size(), sizeof(stored));

  Reader in(body);
  in.take(sizeof(kCheckpointMagic));
  if (const auto version = in.get<std::uint32_t>(); version != kCheckpointVersion) {
    throw VersionError("checkpoint version " + std::to_string(version) + " is not supported");
  }
  if (fnv1a(body) != stored) throw FormatError("checkpoint checksum mismatch in " + path.string());

  Checkpoint ckpt;
  const auto meta_size = in.get<std::uint64_t>();
  try {
    ckpt.meta = nlohmann::json::parse(in.take(meta_size));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint metadata: ") + e.what());
  }
  const auto count = in.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name(in.take(in.get<std::uint32_t>()));
    Shape shape(in.get<std::uint32_t>());
    for (auto& d : shape) d = in.get<std::uint64_t>();
    std::vector<float> data(shape_size(shape));
    const auto raw = in.take(data.size() * sizeof(float));
    std::memcpy(data.data(), raw.data(), raw.size());
    ckpt.tensors.emplace(std::move(name), Tensor<float>(std::move(shape), std::move(data)));
  }
  if (in.position() != body.size()) throw FormatError("trailing bytes in checkpoint " + path.string());
  return ckpt;
}

nlohmann::json encoder_to_json(const EncoderConfig& cfg) {
  return {{"input_channels", cfg.input_channels},
          {"widths", cfg.widths},
          {"feature_dim", cfg.feature_dim},
          {"residual", cfg.residual}};
}

EncoderConfig encoder_from_json(const nlohmann::json& j) {
  EncoderConfig cfg;
  cfg.input_channels = j.value("input_channels", cfg.input_channels);
  cfg.widths = j.value("widths", cfg.widths);
  cfg.feature_dim = j.value("feature_dim", cfg.widths.empty() ? 0 : cfg.widths.back());
  cfg.residual = j.value("residual", cfg.residual);
  return cfg;
}

nlohmann::json heads_to_json(const std::vector<HeadConfig>& heads) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& h : heads) {
    out.push_back({{"task_id", h.task_id}, {"output_dim", h.output_dim}, {"kind", head_kind_name(h.kind)}});
  }
  return out;
}

std::vector<HeadConfig> heads_from_json(const nlohmann::json& j) {
  std::vector<HeadConfig> heads;
  for (const auto& h : j) {
    heads.push_back({h.at("task_id").get<int>(), h.at("output_dim").get<std::size_t>(),
                     h.at("kind").get<std::string>() == "regression" ? HeadKind::regression : HeadKind::classification});
  }
  return heads;
}

Checkpoint capture(Model<float>& model, const Sgd<float>& optimizer, nlohmann::json meta) {
  Checkpoint ckpt;
  meta["encoder"] = encoder_to_json(model.encoder_config());
  meta["heads"] = heads_to_json(model.head_configs());
  meta["optimizer_steps"] = optimizer.steps_taken();
  ckpt.meta = std::move(meta);
  for (const auto& p : model.parameters()) ckpt.tensors.emplace("param:" + p.name, *p.tensor);
  for (const auto& b : model.buffers()) ckpt.tensors.emplace("buffer:" + b.name, *b.tensor);
  for (const auto& [name, buf] : optimizer.buffers()) {
    ckpt.tensors.emplace("momentum:" + name, Tensor<float>({buf.size()}, buf));
  }
  return ckpt;
}

Model<float> model_from_checkpoint(const Checkpoint& ckpt) {
  if (!ckpt.meta.contains("encoder") || !ckpt.meta.contains("heads")) {
    throw VersionError("checkpoint does not record a model architecture");
  }
  Model<float> model(encoder_from_json(ckpt.meta["encoder"]), heads_from_json(ckpt.meta["heads"]), 0);
  restore_model(model, ckpt);
  return model;
}

void restore_model(Model<float>& model, const Checkpoint& ckpt) {
  if (!ckpt.meta.contains("encoder") || encoder_from_json(ckpt.meta["encoder"]) != model.encoder_config() ||
      !ckpt.meta.contains("heads") || heads_from_json(ckpt.meta["heads"]) != model.head_configs()) {
    throw VersionError("checkpoint architecture does not match the configured model");
  }
  auto load = [&](const std::string& prefix, const std::vector<NamedParam<float>>& items) {
    for (const auto& item : items) {
      auto it = ckpt.tensors.find(prefix + item.name);
      if (it == ckpt.tensors.end()) throw VersionError("checkpoint lacks " + prefix + item.name);
      if (it->second.shape() != item.tensor->shape()) {
        throw VersionError("checkpoint tensor " + item.name + " has shape " + shape_string(it->second.shape()));
      }
      std::copy(it->second.data().begin(), it->second.data().end(), item.tensor->data().begin());
    }
  };
  load("param:", model.parameters());
  load("buffer:", model.buffers());
  model.zero_grad();
}

void restore_optimizer(Sgd<float>& optimizer, const Checkpoint& ckpt) {
  std::map<std::string, std::vector<float>> buffers;
  constexpr std::string_view prefix = "momentum:";
  for (const auto& [name, tensor] : ckpt.tensors) {
    if (name.starts_with(prefix)) buffers.emplace(name.substr(prefix.size()), tensor.values());
  }
  optimizer.restore(std::move(buffers), ckpt.meta.value("optimizer_steps", std::size_t{0}));
}

}  // namespace uda
