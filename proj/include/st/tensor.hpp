#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "st/errors.hpp"

namespace st {

template <typename S>
using MatrixR = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using VectorX = Eigen::Matrix<S, Eigen::Dynamic, 1>;
template <typename S>
using ArrayX = Eigen::Array<S, Eigen::Dynamic, 1>;

// Dense n-d array: shape metadata over flat row-major storage. Math goes
// through Eigen maps; the tensor itself only owns memory and shape.
template <typename S = float>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int> shape)
      : shape_(std::move(shape)), data_(size_t(checked_size(shape_)), S(0)) {}

  Tensor(std::vector<int> shape, std::vector<S> data) : shape_(std::move(shape)), data_(std::move(data)) {
    require(checked_size(shape_) == long(data_.size()), Err::shape_mismatch,
            "data length does not match shape product");
  }

  static Tensor full(std::vector<int> shape, S value) {
    Tensor t(std::move(shape));
    t.flat().setConstant(value);
    return t;
  }

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return int(shape_.size()); }
  int dim(int i) const { return shape_[size_t(i)]; }
  long size() const { return long(data_.size()); }
  bool empty() const { return data_.empty(); }

  S* data() { return data_.data(); }
  const S* data() const { return data_.data(); }
  S& operator[](long i) { return data_[size_t(i)]; }
  S operator[](long i) const { return data_[size_t(i)]; }

  Eigen::Map<ArrayX<S>> flat() { return {data_.data(), Eigen::Index(data_.size())}; }
  Eigen::Map<const ArrayX<S>> flat() const { return {data_.data(), Eigen::Index(data_.size())}; }

  // Reinterpret the flat storage as a rows x cols row-major matrix.
  Eigen::Map<MatrixR<S>> matrix(Eigen::Index rows, Eigen::Index cols) {
    require(rows * cols == Eigen::Index(data_.size()), Err::shape_mismatch, "matrix view size mismatch");
    return {data_.data(), rows, cols};
  }
  Eigen::Map<const MatrixR<S>> matrix(Eigen::Index rows, Eigen::Index cols) const {
    require(rows * cols == Eigen::Index(data_.size()), Err::shape_mismatch, "matrix view size mismatch");
    return {data_.data(), rows, cols};
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const { return data_.empty() || flat().isFinite().all(); }

  template <typename T>
  Tensor<T> cast() const {
    Tensor<T> out(shape_);
    for (long i = 0; i < size(); ++i) out[i] = T(data_[size_t(i)]);
    return out;
  }

  std::string shape_str() const {
    std::string s = "[";
    for (size_t i = 0; i < shape_.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(shape_[i]);
    }
    return s + "]";
  }

 private:
  static long checked_size(const std::vector<int>& shape) {
    long n = 1;
    for (int d : shape) {
      require(d > 0, Err::shape_mismatch, "tensor dims must be positive");
      n *= d;
    }
    return shape.empty() ? 0 : n;
  }

  std::vector<int> shape_;
  std::vector<S> data_;
};

template <typename S>
Tensor<S> zeros_like(const Tensor<S>& t) {
  return Tensor<S>(t.shape());
}

}  // namespace st
