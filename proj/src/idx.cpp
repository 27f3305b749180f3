#include <algorithm>
#include <cmath>
#include <fstream>

#include "uda/data.hpp"

namespace uda {
namespace {

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), {});
}

std::uint32_t read_be32(const std::vector<unsigned char>& bytes, std::size_t offset, const std::filesystem::path& path) {
  if (offset + 4 > bytes.size()) throw FormatError(path.string() + ": truncated IDX header");
  return (std::uint32_t(bytes[offset]) << 24) | (std::uint32_t(bytes[offset + 1]) << 16) |
         (std::uint32_t(bytes[offset + 2]) << 8) | std::uint32_t(bytes[offset + 3]);
}

void put_be32(std::ofstream& out, std::uint32_t v) {
  const char b[4] = {char(v >> 24), char(v >> 16), char(v >> 8), char(v)};
  out.write(b, 4);
}

}  // namespace

Tensor<float> read_idx_images(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  const std::uint32_t magic = read_be32(bytes, 0, path);
  if (magic != kIdxImageMagic) throw FormatError(path.string() + ": bad IDX image magic");
  const std::size_t n = read_be32(bytes, 4, path), h = read_be32(bytes, 8, path), w = read_be32(bytes, 12, path);
  if (bytes.size() != 16 + n * h * w) throw FormatError(path.string() + ": IDX payload size does not match header");
  Tensor<float> images({n, 1, h, w});
  for (std::size_t i = 0; i < n * h * w; ++i) images[i] = static_cast<float>(bytes[16 + i]) / 255.0f;
  return images;
}

std::vector<int> read_idx_labels(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  const std::uint32_t magic = read_be32(bytes, 0, path);
  if (magic != kIdxLabelMagic) throw FormatError(path.string() + ": bad IDX label magic");
  const std::size_t n = read_be32(bytes, 4, path);
  if (bytes.size() != 8 + n) throw FormatError(path.string() + ": IDX payload size does not match header");
  return std::vector<int>(bytes.begin() + 8, bytes.end());
}

void write_idx_images(const std::filesystem::path& path, const Tensor<float>& images) {
  if (images.rank() != 4 || images.dim(1) != 1) {
    throw DimensionError("IDX images must be [N,1,H,W], got " + shape_string(images.shape()));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  put_be32(out, kIdxImageMagic);
  put_be32(out, static_cast<std::uint32_t>(images.dim(0)));
  put_be32(out, static_cast<std::uint32_t>(images.dim(2)));
  put_be32(out, static_cast<std::uint32_t>(images.dim(3)));
  std::vector<char> payload(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    const float v = std::clamp(images[i], 0.0f, 1.0f);
    payload[i] = static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0f)));
  }
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

void write_idx_labels(const std::filesystem::path& path, std::span<const int> labels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  put_be32(out, kIdxLabelMagic);
  put_be32(out, static_cast<std::uint32_t>(labels.size()));
  for (int l : labels) {
    if (l < 0 || l > 255) throw LabelError("IDX labels must fit in a byte");
    out.put(static_cast<char>(l));
  }
  if (!out) throw IoError("failed writing " + path.string());
}

LabeledSet load_labeled_idx(const std::filesystem::path& images, const std::filesystem::path& labels, int num_classes) {
  Tensor<float> x = read_idx_images(images);
  std::vector<int> y = read_idx_labels(labels);
  if (y.size() != x.dim(0)) {
    throw ConsistencyError(images.string() + " has " + std::to_string(x.dim(0)) + " images but " + labels.string() +
                           " has " + std::to_string(y.size()) + " labels");
  }
  return LabeledSet(std::move(x), std::move(y), num_classes);
}

UnlabeledSet load_unlabeled_idx(const std::filesystem::path& images, const std::optional<std::filesystem::path>& sidecar,
                                int num_classes) {
  Tensor<float> x = read_idx_images(images);
  if (!sidecar) return UnlabeledSet(std::move(x));
  std::vector<int> y = read_idx_labels(*sidecar);
  if (y.size() != x.dim(0)) {
    throw ConsistencyError(images.string() + " has " + std::to_string(x.dim(0)) + " images but sidecar " +
                           sidecar->string() + " has " + std::to_string(y.size()) + " labels");
  }
  return UnlabeledSet(std::move(x), std::move(y), num_classes);
}

}  // namespace uda
