#include "fixtures.hpp"

#include <fstream>
#include <sstream>

#include <unistd.h>

#include "uda/digits.hpp"
#include "uda/rng.hpp"

namespace uda::testing {

TempDir::TempDir(const std::string& tag) {
  static int counter = 0;
  path_ = std::filesystem::temp_directory_path() /
          ("uda-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
  std::filesystem::remove_all(path_);
  std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

DomainPair tiny_domain_pair(std::size_t source, std::size_t target, std::size_t size, std::uint64_t seed) {
  const LabeledSet src = render_digits(source + source / 4, derive_seed(seed, {1}), size);
  const LabeledSet tgt_raw = render_digits(target + target / 4 + 40, derive_seed(seed, {2}), size);
  const ShiftSpec dark{ShiftKind::brightness_scale, 0.4, 0.0, 0.0};
  const LabeledSet tgt = apply_shift(tgt_raw, dark, derive_seed(seed, {3}));
  const UnlabeledSet tgt_all(tgt.images, tgt.labels, tgt.num_classes);

  const std::size_t tgt_pool = target + target / 4;
  const double fs = double(source) / double(src.size());
  const double ft = double(target) / double(tgt_pool);
  const std::vector<double> src_frac{fs, 1.0 - fs};
  auto src_parts = split(src, src_frac, derive_seed(seed, {4}));

  std::vector<std::size_t> pool(tgt_pool), test(tgt.size() - tgt_pool);
  for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = i;
  for (std::size_t i = 0; i < test.size(); ++i) test[i] = tgt_pool + i;
  const std::vector<double> tgt_frac{ft, 1.0 - ft};
  auto tgt_parts = split(tgt_all.gather(pool).without_sidecar(), tgt_frac, derive_seed(seed, {5}));

  DomainPair pair{std::move(src_parts[0]), std::move(src_parts[1]), std::move(tgt_parts[0]), std::move(tgt_parts[1]),
                  tgt_all.gather(test)};
  pair.validate();
  return pair;
}

EncoderConfig tiny_encoder(bool residual) {
  return EncoderConfig{1, {8, 16}, 16, residual};
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace uda::testing
