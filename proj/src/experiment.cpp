#include "uda/experiment.hpp"

#include <cstdio>
#include <fstream>
#include <iterator>

#include "uda/checkpoint.hpp"
#include "uda/digits.hpp"

namespace uda {

namespace {

enum Stream : std::uint64_t { source_pool = 1, source_test, target_pool, target_pool_shift, target_test, target_test_shift };

Tensor<float> shifted(Tensor<float> images, const std::vector<ShiftSpec>& chain, std::uint64_t seed, Stream stream) {
  for (std::size_t i = 0; i < chain.size(); ++i) images = apply_shift(images, chain[i], derive_seed(seed, {stream, i}));
  return images;
}

std::vector<double> fractions(double val_fraction) {
  if (!(val_fraction > 0 && val_fraction < 1)) throw ConfigError("validation fraction must lie in (0,1)");
  return {1.0 - val_fraction, val_fraction};
}

}  // namespace

nlohmann::json shift_to_json(const ShiftSpec& spec) {
  return {{"kind", shift_name(spec.kind)}, {"alpha", spec.alpha}, {"beta", spec.beta}, {"sigma", spec.sigma}};
}

ShiftSpec shift_from_json(const nlohmann::json& j) {
  ShiftSpec spec;
  spec.kind = parse_shift_kind(j.at("kind").get<std::string>());
  spec.alpha = j.value("alpha", spec.alpha);
  spec.beta = j.value("beta", spec.beta);
  spec.sigma = j.value("sigma", spec.sigma);
  spec.validate();
  return spec;
}

nlohmann::json experiment_to_json(const ExperimentConfig& cfg) {
  nlohmann::json shifts = nlohmann::json::array();
  for (const auto& s : cfg.synth.shifts) shifts.push_back(shift_to_json(s));
  return {{"synth",
           {{"source_count", cfg.synth.source_count},
            {"target_count", cfg.synth.target_count},
            {"test_count", cfg.synth.test_count},
            {"image_size", cfg.synth.image_size},
            {"shifts", shifts},
            {"seed", cfg.synth.seed}}},
          {"data_dir", cfg.data_dir.string()},
          {"val_fraction", cfg.val_fraction},
          {"encoder", encoder_to_json(cfg.encoder)},
          {"train", train_config_to_json(cfg.train)},
          {"out_dir", cfg.out_dir.string()}};
}

ExperimentConfig experiment_from_json(const nlohmann::json& j) {
  ExperimentConfig cfg;
  try {
    if (j.contains("synth")) {
      const auto& s = j["synth"];
      cfg.synth.source_count = s.value("source_count", cfg.synth.source_count);
      cfg.synth.target_count = s.value("target_count", cfg.synth.target_count);
      cfg.synth.test_count = s.value("test_count", cfg.synth.test_count);
      cfg.synth.image_size = s.value("image_size", cfg.synth.image_size);
      cfg.synth.seed = s.value("seed", cfg.synth.seed);
      if (s.contains("shifts")) {
        cfg.synth.shifts.clear();
        for (const auto& shift : s["shifts"]) cfg.synth.shifts.push_back(shift_from_json(shift));
      }
    }
    cfg.data_dir = j.value("data_dir", std::string{});
    cfg.val_fraction = j.value("val_fraction", cfg.val_fraction);
    if (j.contains("encoder")) cfg.encoder = encoder_from_json(j["encoder"]);
    if (j.contains("train")) cfg.train = train_config_from_json(j["train"]);
    cfg.out_dir = j.value("out_dir", cfg.out_dir.string());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("experiment config: ") + e.what());
  }
  cfg.encoder.validate();
  cfg.train.validate();
  return cfg;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  try {
    return experiment_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string file_checksum(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(fnv1a(bytes)));
  return hex;
}

nlohmann::json synthesize(const SynthConfig& cfg, const std::filesystem::path& dir) {
  if (cfg.source_count == 0 || cfg.target_count == 0 || cfg.test_count == 0) throw ConfigError("synthetic set sizes must be positive");
  for (const auto& s : cfg.shifts) s.validate();
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

  const auto source = render_digits(cfg.source_count, derive_seed(cfg.seed, {source_pool}), cfg.image_size);
  const auto source_held = render_digits(cfg.test_count, derive_seed(cfg.seed, {source_test}), cfg.image_size);
  const auto target = render_digits(cfg.target_count, derive_seed(cfg.seed, {target_pool}), cfg.image_size);
  const auto target_held = render_digits(cfg.test_count, derive_seed(cfg.seed, {target_test}), cfg.image_size);

  write_idx_images(dir / files::source_train_images, source.images);
  write_idx_labels(dir / files::source_train_labels, source.labels);
  write_idx_images(dir / files::source_test_images, source_held.images);
  write_idx_labels(dir / files::source_test_labels, source_held.labels);
  write_idx_images(dir / files::target_train_images, shifted(target.images, cfg.shifts, cfg.seed, target_pool_shift));
  write_idx_images(dir / files::target_test_images, shifted(target_held.images, cfg.shifts, cfg.seed, target_test_shift));
  write_idx_labels(dir / files::target_test_sidecar, target_held.labels);

  nlohmann::json shifts = nlohmann::json::array();
  for (const auto& s : cfg.shifts) shifts.push_back(shift_to_json(s));
  nlohmann::json checksums;
  for (const char* name : {files::source_train_images, files::source_train_labels, files::source_test_images,
                           files::source_test_labels, files::target_train_images, files::target_test_images,
                           files::target_test_sidecar}) {
    checksums[name] = file_checksum(dir / name);
  }
  const nlohmann::json manifest{{"generator", "render_digits"},
                                {"seed", cfg.seed},
                                {"image_size", cfg.image_size},
                                {"counts", {{"source", cfg.source_count}, {"target", cfg.target_count}, {"test", cfg.test_count}}},
                                {"shifts", shifts},
                                {"checksums", checksums}};
  std::ofstream out(dir / files::manifest);
  if (!out) throw IoError("cannot write " + (dir / files::manifest).string());
  out << manifest.dump(2) << '\n';
  return manifest;
}

DomainPair load_domain_pair(const std::filesystem::path& dir, double val_fraction, std::uint64_t split_seed) {
  const auto parts = fractions(val_fraction);
  auto source = split(load_labeled_idx(dir / files::source_train_images, dir / files::source_train_labels), parts,
                      derive_seed(split_seed, {0}));
  auto target = split(load_unlabeled_idx(dir / files::target_train_images), parts, derive_seed(split_seed, {1}));
  DomainPair pair{std::move(source[0]), std::move(source[1]), std::move(target[0]), std::move(target[1]),
                  load_target_test(dir)};
  pair.validate();
  return pair;
}

LabeledSet load_source_test(const std::filesystem::path& dir) {
  return load_labeled_idx(dir / files::source_test_images, dir / files::source_test_labels);
}

UnlabeledSet load_target_test(const std::filesystem::path& dir) {
  return load_unlabeled_idx(dir / files::target_test_images, dir / files::target_test_sidecar);
}

}  // namespace uda
