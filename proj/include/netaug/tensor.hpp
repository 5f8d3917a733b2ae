#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "netaug/error.hpp"

namespace netaug {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

/// Dense row-major f32 array. Value type: copies are deep.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, float fill = 0.0f)
      : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {
    check_dims();
  }

  Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_dims();
    if (data_.size() != shape_numel(shape_)) {
      fail(ErrorKind::dimension, "tensor data length " + std::to_string(data_.size()) +
                                     " does not match shape " + shape_str(shape_));
    }
  }

  static Tensor scalar(float v) { return Tensor(Shape{}, std::vector<float>{v}); }

  static Tensor from_rows(std::initializer_list<std::initializer_list<float>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<float> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) fail(ErrorKind::dimension, "ragged rows");
      data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(data));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t numel() const noexcept { return data_.size(); }
  bool is_scalar() const noexcept { return data_.size() == 1; }

  std::span<float> data() noexcept { return data_; }
  std::span<const float> data() const noexcept { return data_; }
  const std::vector<float>& values() const noexcept { return data_; }

  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }

  float item() const {
    if (data_.size() != 1) fail(ErrorKind::contract, "item() on tensor of shape " + shape_str(shape_));
    return data_[0];
  }

  void fill(float v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
  }

  /// Same data, new shape of equal element count.
  Tensor reshaped(Shape shape) const {
    if (shape_numel(shape) != data_.size()) {
      fail(ErrorKind::dimension, "cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    }
    return Tensor(std::move(shape), data_);
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  void check_dims() const {
    for (auto d : shape_) {
      if (d == 0) fail(ErrorKind::dimension, "zero-sized dimension in shape " + shape_str(shape_));
    }
  }

  Shape shape_;
  std::vector<float> data_;
};

/// Bitwise equality of float payloads (distinguishes -0 and +0, equal NaN payloads).
inline bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  auto x = a.data();
  auto y = b.data();
  return std::equal(x.begin(), x.end(), y.begin(), [](float p, float q) {
    return std::bit_cast<std::uint32_t>(p) == std::bit_cast<std::uint32_t>(q);
  });
}

inline float max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    fail(ErrorKind::dimension, "max_abs_diff of " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  float m = 0.0f;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

// Leading-slice helpers. A leading slice of `full` with extents `sub` keeps
// indices [0, sub[d]) along every dimension d.

namespace detail {

template <typename Fn>
void for_each_leading(const Shape& full, const Shape& sub, Fn&& fn) {
  if (full.size() != sub.size()) {
    fail(ErrorKind::dimension, "slice rank mismatch: " + shape_str(full) + " vs " + shape_str(sub));
  }
  for (std::size_t d = 0; d < full.size(); ++d) {
    if (sub[d] > full[d] || sub[d] == 0) {
      fail(ErrorKind::dimension, "slice " + shape_str(sub) + " exceeds " + shape_str(full));
    }
  }
  const std::size_t rank = full.size();
  if (rank == 0) {
    fn(std::size_t{0}, std::size_t{0});
    return;
  }
  // Innermost dimension is contiguous; iterate over outer index tuples.
  const std::size_t inner = sub[rank - 1];
  std::vector<std::size_t> idx(rank, 0);
  std::vector<std::size_t> full_stride(rank, 1);
  for (std::size_t d = rank - 1; d > 0; --d) full_stride[d - 1] = full_stride[d] * full[d];
  std::size_t sub_offset = 0;
  while (true) {
    std::size_t full_offset = 0;
    for (std::size_t d = 0; d + 1 < rank; ++d) full_offset += idx[d] * full_stride[d];
    for (std::size_t j = 0; j < inner; ++j) fn(full_offset + j, sub_offset + j);
    sub_offset += inner;
    bool done = true;
    for (std::size_t d = rank - 1; d-- > 0;) {
      if (++idx[d] < sub[d]) {
        done = false;
        break;
      }
      idx[d] = 0;
    }
    if (done) return;
  }
}

}  // namespace detail

inline Tensor leading_slice(const Tensor& full, const Shape& sub) {
  Tensor out(sub);
  detail::for_each_leading(full.shape(), sub, [&](std::size_t f, std::size_t s) { out[s] = full[f]; });
  return out;
}

/// full[leading sub] += scale * part
inline void add_into_leading(Tensor& full, const Tensor& part, float scale = 1.0f) {
  detail::for_each_leading(full.shape(), part.shape(),
                           [&](std::size_t f, std::size_t s) { full[f] += scale * part[s]; });
}

inline void assign_leading(Tensor& full, const Tensor& part) {
  detail::for_each_leading(full.shape(), part.shape(), [&](std::size_t f, std::size_t s) { full[f] = part[s]; });
}

/// True when flat index `flat` of a tensor shaped `full` lies inside the leading slice `sub`.
inline bool in_leading(const Shape& full, const Shape& sub, std::size_t flat) {
  for (std::size_t d = full.size(); d-- > 0;) {
    const std::size_t i = flat % full[d];
    flat /= full[d];
    if (i >= sub[d]) return false;
  }
  return true;
}

}  // namespace netaug
