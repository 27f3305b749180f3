#pragma once

#include <filesystem>
#include <string>

#include "uda/data.hpp"
#include "uda/model.hpp"

namespace uda::testing {

/// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag);
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

/// Small rendered-digit source vs darkened target, already split.
DomainPair tiny_domain_pair(std::size_t source, std::size_t target, std::size_t size, std::uint64_t seed);

/// Encoder small enough for per-test training on 16x16 inputs.
EncoderConfig tiny_encoder(bool residual = false);

std::string read_file(const std::filesystem::path& path);

}  // namespace uda::testing
