#pragma once

#include <cassert>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "lfb/errors.hpp"
#include "lfb/rng.hpp"

namespace lfb {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
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

/// Dense row-major tensor of arbitrary rank. Rank-2 dominates this codebase;
/// the rank-3/4 accessors exist for feature volumes and pooled grids.
template <typename T>
class TensorT {
 public:
  TensorT() = default;

  explicit TensorT(Shape shape)
      : shape_(std::move(shape)), data_(shape_size(shape_), T(0)) {}

  TensorT(Shape shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_size(shape_)) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_str(shape_));
    }
  }

  static TensorT full(Shape shape, T value) {
    TensorT t(std::move(shape));
    for (T& v : t.data_) v = value;
    return t;
  }

  /// Rank-2 literal, e.g. Tensor::from_rows({{1, 2}, {3, 4}}).
  static TensorT from_rows(std::initializer_list<std::initializer_list<T>> rows) {
    const std::size_t m = rows.size();
    const std::size_t n = m ? rows.begin()->size() : 0;
    TensorT t(Shape{m, n});
    std::size_t i = 0;
    for (const auto& row : rows) {
      if (row.size() != n) throw ShapeError("ragged row in tensor literal");
      for (T v : row) t.data_[i++] = v;
    }
    return t;
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::size_t rows() const {
    assert(rank() == 2);
    return shape_[0];
  }
  std::size_t cols() const {
    assert(rank() == 2);
    return shape_[1];
  }

  T& at(std::size_t i) {
    assert(i < data_.size());
    return data_[i];
  }
  const T& at(std::size_t i) const {
    assert(i < data_.size());
    return data_[i];
  }
  T& at(std::size_t i, std::size_t j) {
    assert(rank() == 2 && i < shape_[0] && j < shape_[1]);
    return data_[i * shape_[1] + j];
  }
  const T& at(std::size_t i, std::size_t j) const {
    assert(rank() == 2 && i < shape_[0] && j < shape_[1]);
    return data_[i * shape_[1] + j];
  }
  T& at(std::size_t i, std::size_t j, std::size_t k) {
    assert(rank() == 3);
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  const T& at(std::size_t i, std::size_t j, std::size_t k) const {
    assert(rank() == 3);
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  T& at(std::size_t i, std::size_t j, std::size_t k, std::size_t l) {
    assert(rank() == 4);
    return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
  }
  const T& at(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const {
    assert(rank() == 4);
    return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
  }

  std::vector<T>& data() { return data_; }
  const std::vector<T>& data() const { return data_; }

  bool same_shape(const TensorT& other) const { return shape_ == other.shape_; }

  bool operator==(const TensorT& other) const {
    return shape_ == other.shape_ && data_ == other.data_;
  }
  bool operator!=(const TensorT& other) const { return !(*this == other); }

  /// Same data, new shape; element count must match.
  TensorT reshaped(Shape shape) const {
    if (shape_size(shape) != data_.size()) {
      throw ShapeError("reshape " + shape_str(shape_) + " -> " +
                       shape_str(shape) + " changes element count");
    }
    return TensorT(std::move(shape), data_);
  }

 private:
  Shape shape_;
  std::vector<T> data_;
};

using Tensor = TensorT<double>;

template <typename T>
void fill_uniform(TensorT<T>& t, RngStream& rng, T lo, T hi) {
  for (T& v : t.data()) v = lo + (hi - lo) * static_cast<T>(rng.next_double());
}

template <typename T>
void fill_gaussian(TensorT<T>& t, RngStream& rng, T mean, T stddev) {
  for (T& v : t.data()) {
    v = mean + stddev * static_cast<T>(rng.next_gaussian());
  }
}

/// Every op leaves only finite values behind; a NaN or Inf anywhere is a bug
/// upstream and is reported at the op that produced it.
template <typename T>
void check_finite(const TensorT<T>& t, const char* what) {
  for (const T& v : t.data()) {
    if (!std::isfinite(v)) {
      throw ValueError(std::string(what) + ": non-finite value produced");
    }
  }
}

template <typename T>
T max_abs(const TensorT<T>& t) {
  T m = T(0);
  for (const T& v : t.data()) m = std::max(m, std::abs(v));
  return m;
}

template <typename T>
T max_abs_diff(const TensorT<T>& a, const TensorT<T>& b) {
  if (!a.same_shape(b)) {
    throw ShapeError("max_abs_diff: shapes " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  T m = T(0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(a.at(i) - b.at(i)));
  }
  return m;
}

}  // namespace lfb
