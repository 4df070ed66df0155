#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "lgsan/core/errors.hpp"

namespace lgsan {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

// Dense row-major tensor. Rank is dynamic; feature maps are BCHW,
// token arrays are [B, N, C], scalars are [1].
template <class S>
class Tensor {
 public:
  using ArrayMap = Eigen::Map<Eigen::Array<S, Eigen::Dynamic, 1>>;
  using ConstArrayMap = Eigen::Map<const Eigen::Array<S, Eigen::Dynamic, 1>>;
  using MatrixRM = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatMap = Eigen::Map<MatrixRM>;
  using ConstMatMap = Eigen::Map<const MatrixRM>;

  Tensor() = default;
  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<size_t>(numel_of(shape_)), S(0));
  }
  Tensor(Shape shape, S fill) : shape_(std::move(shape)) {
    data_.assign(static_cast<size_t>(numel_of(shape_)), fill);
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, S v) { return Tensor(std::move(shape), v); }
  static Tensor scalar(S v) { return Tensor(Shape{1}, v); }

  static Index numel_of(const Shape& s) {
    Index n = 1;
    for (Index d : s) n *= d;
    return n;
  }

  bool empty() const { return data_.empty(); }
  Index numel() const { return static_cast<Index>(data_.size()); }
  int rank() const { return static_cast<int>(shape_.size()); }
  const Shape& shape() const { return shape_; }
  Index dim(int i) const { return shape_[static_cast<size_t>(i)]; }

  S* data() { return data_.data(); }
  const S* data() const { return data_.data(); }
  S& operator[](Index i) { return data_[static_cast<size_t>(i)]; }
  S operator[](Index i) const { return data_[static_cast<size_t>(i)]; }

  // BCHW accessors
  S& at(Index b, Index c, Index h, Index w) {
    return data_[static_cast<size_t>(((b * dim(1) + c) * dim(2) + h) * dim(3) + w)];
  }
  S at(Index b, Index c, Index h, Index w) const {
    return data_[static_cast<size_t>(((b * dim(1) + c) * dim(2) + h) * dim(3) + w)];
  }
  // [B, N, C] accessors
  S& at3(Index b, Index n, Index c) {
    return data_[static_cast<size_t>((b * dim(1) + n) * dim(2) + c)];
  }
  S at3(Index b, Index n, Index c) const {
    return data_[static_cast<size_t>((b * dim(1) + n) * dim(2) + c)];
  }

  ArrayMap flat() { return ArrayMap(data_.data(), numel()); }
  ConstArrayMap flat() const { return ConstArrayMap(data_.data(), numel()); }

  MatMap mat(Index rows, Index cols) {
    check_view(rows * cols);
    return MatMap(data_.data(), rows, cols);
  }
  ConstMatMap mat(Index rows, Index cols) const {
    check_view(rows * cols);
    return ConstMatMap(data_.data(), rows, cols);
  }
  // offset view, for per-batch matrix slices
  MatMap mat_at(Index offset, Index rows, Index cols) {
    return MatMap(data_.data() + offset, rows, cols);
  }
  ConstMatMap mat_at(Index offset, Index rows, Index cols) const {
    return ConstMatMap(data_.data() + offset, rows, cols);
  }

  Tensor reshaped(Shape s) const {
    if (numel_of(s) != numel())
      throw ShapeError("reshape " + shape_str(shape_) + " -> " + shape_str(s) +
                       " changes element count");
    Tensor t = *this;
    t.shape_ = std::move(s);
    return t;
  }

  void fill(S v) { std::fill(data_.begin(), data_.end(), v); }
  void set_zero() { fill(S(0)); }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  template <class T>
  Tensor<T> cast() const {
    Tensor<T> t(shape_);
    for (Index i = 0; i < numel(); ++i) t[i] = static_cast<T>(data_[static_cast<size_t>(i)]);
    return t;
  }

  bool all_finite() const {
    for (S v : data_)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

 private:
  void check_view(Index n) const {
    if (n != numel())
      throw ShapeError("matrix view of " + std::to_string(n) + " elements over tensor " +
                       shape_str(shape_));
  }

  Shape shape_;
  std::vector<S> data_;
};

template <class S>
Shape bchw(Index b, Index c, Index h, Index w) {
  return Shape{b, c, h, w};
}

}  // namespace lgsan
