#include "uda/tensor.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <malloc.h>
#include <type_traits>
#include <numeric>
#include <sstream>

namespace uda {
namespace {

// Training allocates and frees many multi-megabyte activation buffers per
// step. Keeping freed memory mapped avoids paying page faults on every
// allocation.
[[maybe_unused]] const bool kAllocatorTuned = [] {
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  return true;
}();

}  // namespace

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <class T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

template <class T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_size(shape_) != data_.size()) {
    throw DimensionError("tensor shape " + shape_string(shape_) + " does not match " +
                         std::to_string(data_.size()) + " values");
  }
}

template <class T>
std::span<T> Tensor<T>::grad() {
  if (!grad_) throw UsageError("tensor has no gradient");
  return *grad_;
}

template <class T>
std::span<const T> Tensor<T>::grad() const {
  if (!grad_) throw UsageError("tensor has no gradient");
  return *grad_;
}

template <class T>
std::vector<T>& Tensor<T>::ensure_grad() {
  if (!grad_) grad_.emplace(data_.size(), T{0});
  return *grad_;
}

template <class T>
void Tensor<T>::reshape(Shape shape) {
  if (shape_size(shape) != data_.size()) {
    throw DimensionError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  shape_ = std::move(shape);
}

template <class T>
Tensor<T> Tensor<T>::slice(std::size_t begin, std::size_t end) const {
  if (rank() == 0 || begin > end || end > shape_[0]) {
    throw DimensionError("slice [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") out of range for " + shape_string(shape_));
  }
  const std::size_t row = shape_[0] ? data_.size() / shape_[0] : 0;
  Shape s = shape_;
  s[0] = end - begin;
  return Tensor(std::move(s), std::vector<T>(data_.begin() + begin * row, data_.begin() + end * row));
}

template <class T>
Tensor<T> Tensor<T>::gather(std::span<const std::size_t> rows) const {
  if (rank() == 0) throw DimensionError("gather on a scalar tensor");
  const std::size_t row = shape_[0] ? data_.size() / shape_[0] : 0;
  Shape s = shape_;
  s[0] = rows.size();
  std::vector<T> out;
  out.reserve(rows.size() * row);
  for (std::size_t r : rows) {
    if (r >= shape_[0]) throw DimensionError("gather row " + std::to_string(r) + " out of range");
    out.insert(out.end(), data_.begin() + r * row, data_.begin() + (r + 1) * row);
  }
  return Tensor(std::move(s), std::move(out));
}

template <class T>
bool Tensor<T>::all_finite() const {
  // Exponent bits all set means Inf or NaN; the integer form vectorises.
  using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  constexpr Bits mask = static_cast<Bits>(sizeof(T) == 4 ? 0x7f800000ull : 0x7ff0000000000000ull);
  Bits bad = 0;
  for (T v : data_) {
    Bits b;
    std::memcpy(&b, &v, sizeof b);
    bad |= static_cast<Bits>((b & mask) == mask);
  }
  return bad == 0;
}

template <class T>
Tensor<T> stack(std::span<const Tensor<T>> items) {
  if (items.empty()) throw DimensionError("stack of zero tensors");
  Shape s{items.size()};
  s.insert(s.end(), items[0].shape().begin(), items[0].shape().end());
  std::vector<T> out;
  out.reserve(shape_size(s));
  for (const auto& t : items) {
    if (t.shape() != items[0].shape()) throw DimensionError("stack of mismatched shapes");
    out.insert(out.end(), t.data().begin(), t.data().end());
  }
  return Tensor<T>(std::move(s), std::move(out));
}

template class Tensor<float>;
template class Tensor<double>;
template Tensor<float> stack(std::span<const Tensor<float>>);
template Tensor<double> stack(std::span<const Tensor<double>>);

}  // namespace uda
