#pragma once

#include <Eigen/Dense>

#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "msync/errors.hpp"
#include "msync/rng.hpp"

namespace msync {

using Index = Eigen::Index;

template <typename S>
using EVec = Eigen::Matrix<S, Eigen::Dynamic, 1>;
template <typename S>
using EMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Dense n-d array, row-major, Eigen-backed. Rank 0 (scalar) through 3 are
// what the ops use; shape is kept as a plain extent list.
template <typename S>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<Index> shape) : shape_(std::move(shape)) {
    data_.setZero(count(shape_));
  }

  Tensor(std::vector<Index> shape, std::vector<S> values)
      : shape_(std::move(shape)) {
    if (Index(values.size()) != count(shape_))
      throw ShapeMismatch("value count " + std::to_string(values.size()) +
                          " does not fill shape " + shape_string(shape_));
    data_ = Eigen::Map<const EVec<S>>(values.data(), Index(values.size()));
  }

  static Tensor zeros(std::vector<Index> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<Index> shape, S v) {
    Tensor t(std::move(shape));
    t.data_.setConstant(v);
    return t;
  }

  static Tensor scalar(S v) { return full({}, v); }

  static Tensor uniform(std::vector<Index> shape, Rng& rng, S lo, S hi) {
    Tensor t(std::move(shape));
    for (Index i = 0; i < t.size(); ++i)
      t.data_[i] = S(rng.uniform(double(lo), double(hi)));
    return t;
  }

  static Tensor normal(std::vector<Index> shape, Rng& rng, S mean, S stddev) {
    Tensor t(std::move(shape));
    for (Index i = 0; i < t.size(); ++i)
      t.data_[i] = S(rng.normal(double(mean), double(stddev)));
    return t;
  }

  const std::vector<Index>& shape() const { return shape_; }
  int rank() const { return int(shape_.size()); }
  Index dim(int i) const { return shape_[size_t(i)]; }
  Index size() const { return data_.size(); }

  S* data() { return data_.data(); }
  const S* data() const { return data_.data(); }

  S& operator[](Index i) { return data_[i]; }
  S operator[](Index i) const { return data_[i]; }

  // Scalar value of a rank-0/size-1 tensor.
  S item() const {
    if (size() != 1) throw ShapeMismatch("item() on tensor of size " + std::to_string(size()));
    return data_[0];
  }

  S& at(Index r, Index c) { return data_[r * dim(1) + c]; }
  S at(Index r, Index c) const { return data_[r * dim(1) + c]; }
  S& at(Index i, Index j, Index k) { return data_[(i * dim(1) + j) * dim(2) + k]; }
  S at(Index i, Index j, Index k) const { return data_[(i * dim(1) + j) * dim(2) + k]; }

  // Eigen views over the flat storage.
  Eigen::Map<EVec<S>> vec() { return {data_.data(), data_.size()}; }
  Eigen::Map<const EVec<S>> vec() const { return {data_.data(), data_.size()}; }

  Eigen::Map<EMat<S>> mat() {
    require_rank(2);
    return {data_.data(), dim(0), dim(1)};
  }
  Eigen::Map<const EMat<S>> mat() const {
    require_rank(2);
    return {data_.data(), dim(0), dim(1)};
  }

  // View as a matrix with explicit extents (for rank-1/3 reinterpretation).
  Eigen::Map<EMat<S>> as_mat(Index rows, Index cols) {
    if (rows * cols != size()) throw ShapeMismatch("as_mat extents do not match size");
    return {data_.data(), rows, cols};
  }
  Eigen::Map<const EMat<S>> as_mat(Index rows, Index cols) const {
    if (rows * cols != size()) throw ShapeMismatch("as_mat extents do not match size");
    return {data_.data(), rows, cols};
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  Tensor reshaped(std::vector<Index> shape) const {
    if (count(shape) != size())
      throw ShapeMismatch("reshape " + shape_string(shape_) + " -> " + shape_string(shape));
    Tensor t = *this;
    t.shape_ = std::move(shape);
    return t;
  }

  template <typename S2>
  Tensor<S2> cast() const {
    Tensor<S2> t(shape_);
    for (Index i = 0; i < size(); ++i) t[i] = S2(data_[i]);
    return t;
  }

  void set_zero() { data_.setZero(); }

  static Index count(const std::vector<Index>& shape) {
    Index n = 1;
    for (Index d : shape) n *= d;
    return n;
  }

  static std::string shape_string(const std::vector<Index>& shape) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
  }

 private:
  void require_rank(int r) const {
    if (rank() != r)
      throw ShapeMismatch("expected rank " + std::to_string(r) + ", got " +
                          shape_string(shape_));
  }

  std::vector<Index> shape_;
  EVec<S> data_;
};

}  // namespace msync
