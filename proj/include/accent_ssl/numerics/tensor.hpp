#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "accent_ssl/errors.hpp"

namespace accent_ssl {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

// Dense row-major array. Most of the library works on rank-2 tensors
// (rows x cols); rank-1 tensors are treated as a single row.
template <class S>
class Tensor {
 public:
  using value_type = S;

  Tensor() = default;
  explicit Tensor(Shape shape, S fill = S{0})
      : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}
  Tensor(Shape shape, std::vector<S> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_numel(shape_) != data_.size())
      throw DimensionError("tensor data size " + std::to_string(data_.size()) +
                           " does not match shape " + shape_str(shape_));
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, S fill = S{0}) {
    return Tensor({rows, cols}, fill);
  }
  static Tensor from_rows(const std::vector<std::vector<S>>& rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows[0].size() : 0;
    Tensor t = matrix(r, c);
    for (std::size_t i = 0; i < r; ++i) {
      if (rows[i].size() != c) throw DimensionError("ragged rows in Tensor::from_rows");
      std::copy(rows[i].begin(), rows[i].end(), t.data_.begin() + i * c);
    }
    return t;
  }

  template <class U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.size());
    std::transform(data_.begin(), data_.end(), out.begin(), [](S v) { return static_cast<U>(v); });
    return Tensor<U>(shape_, std::move(out));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::size_t rows() const noexcept {
    if (shape_.empty()) return 1;
    std::size_t r = 1;
    for (std::size_t i = 0; i + 1 < shape_.size(); ++i) r *= shape_[i];
    return r;
  }
  std::size_t cols() const noexcept { return shape_.empty() ? 1 : shape_.back(); }

  S& operator[](std::size_t i) { return data_[i]; }
  const S& operator[](std::size_t i) const { return data_[i]; }
  S& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  const S& at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  std::span<S> row(std::size_t r) { return {data_.data() + r * cols(), cols()}; }
  std::span<const S> row(std::size_t r) const { return {data_.data() + r * cols(), cols()}; }

  std::span<S> values() noexcept { return data_; }
  std::span<const S> values() const noexcept { return data_; }
  std::vector<S>& storage() noexcept { return data_; }
  const std::vector<S>& storage() const noexcept { return data_; }
  S* data() noexcept { return data_.data(); }
  const S* data() const noexcept { return data_.data(); }

  void fill(S v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor& operator+=(const Tensor& o) {
    require_same_shape(o, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }

  void require_same_shape(const Tensor& o, const char* op) const {
    if (shape_ != o.shape_)
      throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(shape_) + " vs " +
                           shape_str(o.shape_));
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](S v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<S> data_;
};

template <class S>
S max_abs_diff(const Tensor<S>& a, const Tensor<S>& b) {
  a.require_same_shape(b, "max_abs_diff");
  S m{0};
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace accent_ssl
