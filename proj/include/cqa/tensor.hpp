#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "cqa/errors.hpp"

namespace cqa {

// Dense row-major matrix. The default scalar is float; a double instantiation
// exists for finite-difference gradient verification. Rank-1 data is held as
// an n x 1 or 1 x n matrix, scalars as 1 x 1.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::int64_t rows, std::int64_t cols)
      : rows_(rows), cols_(cols), data_(static_cast<std::size_t>(rows * cols), T(0)) {
    if (rows < 0 || cols < 0) throw ShapeMismatch("negative tensor dimension");
  }
  Tensor(std::int64_t rows, std::int64_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (static_cast<std::int64_t>(data_.size()) != rows * cols)
      throw ShapeMismatch("data length does not match shape");
  }

  static Tensor scalar(T v) {
    Tensor t(1, 1);
    t.data_[0] = v;
    return t;
  }
  static Tensor row(std::initializer_list<T> vals) {
    Tensor t(1, static_cast<std::int64_t>(vals.size()));
    std::size_t i = 0;
    for (T v : vals) t.data_[i++] = v;
    return t;
  }
  static Tensor column(std::initializer_list<T> vals) {
    Tensor t(static_cast<std::int64_t>(vals.size()), 1);
    std::size_t i = 0;
    for (T v : vals) t.data_[i++] = v;
    return t;
  }

  std::int64_t rows() const { return rows_; }
  std::int64_t cols() const { return cols_; }
  std::int64_t size() const { return rows_ * cols_; }
  std::vector<std::int64_t> shape() const { return {rows_, cols_}; }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  T& operator()(std::int64_t r, std::int64_t c) { return data_[static_cast<std::size_t>(r * cols_ + c)]; }
  T operator()(std::int64_t r, std::int64_t c) const { return data_[static_cast<std::size_t>(r * cols_ + c)]; }
  T& at(std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  T at(std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
  void zero() { fill(T(0)); }

  bool same_shape(const Tensor& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  bool all_finite() const {
    for (T v : data_)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(rows_, cols_);
    for (std::int64_t i = 0; i < size(); ++i) out.at(i) = static_cast<U>(data_[static_cast<std::size_t>(i)]);
    return out;
  }

 private:
  std::int64_t rows_ = 0;
  std::int64_t cols_ = 0;
  std::vector<T> data_;
};

template <typename T>
inline void require_shape(const Tensor<T>& t, std::int64_t rows, std::int64_t cols,
                          const std::string& what) {
  if (t.rows() != rows || t.cols() != cols)
    throw ShapeMismatch(what + ": expected " + std::to_string(rows) + "x" + std::to_string(cols) +
                        ", got " + std::to_string(t.rows()) + "x" + std::to_string(t.cols()));
}

template <typename T>
inline void require_finite(const Tensor<T>& t, const char* op) {
  if (!t.all_finite()) throw NumericError(std::string("non-finite values produced by ") + op);
}

}  // namespace cqa
