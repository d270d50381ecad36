#pragma once

#include <algorithm>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "laneflow/common.hpp"

namespace laneflow {

/// Dense row-major tensor of doubles. Rank is the shape length; most model
/// math runs on rank-2 views, rank-3 is used for (lane, time, feature)
/// datasets.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape) : shape_(std::move(shape)) {
    data_.assign(numel_of(shape_), 0.0);
  }

  Tensor(std::vector<std::size_t> shape, std::vector<double> values)
      : shape_(std::move(shape)), data_(std::move(values)) {
    require(data_.size() == numel_of(shape_), "tensor: value count ", data_.size(),
            " does not match shape ", shape_string(shape_));
  }

  static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<std::size_t> shape, double v) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), v);
    return t;
  }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  static Tensor identity(std::size_t n) {
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
    return t;
  }

  static std::size_t numel_of(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return shape.empty() ? 0 : n;
  }

  static std::string shape_string(const std::vector<std::size_t>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
      if (i) s += "x";
      s += std::to_string(shape[i]);
    }
    return s + "]";
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t rows() const { return rank() == 1 ? 1 : shape_[0]; }
  std::size_t cols() const { return rank() == 1 ? shape_[0] : shape_[rank() - 1]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  /// 2-D Eigen map (rank-1 tensors map to a single row).
  using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<Matrix> mat() {
    return Eigen::Map<Matrix>(data_.data(), static_cast<Eigen::Index>(rows()),
                              static_cast<Eigen::Index>(cols()));
  }
  Eigen::Map<const Matrix> mat() const {
    return Eigen::Map<const Matrix>(data_.data(), static_cast<Eigen::Index>(rows()),
                                    static_cast<Eigen::Index>(cols()));
  }

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

namespace tensor_ops {

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.rank() <= 2 && b.rank() <= 2, "matmul: rank-2 operands required, got ",
          Tensor::shape_string(a.shape()), " and ", Tensor::shape_string(b.shape()));
  require(a.cols() == b.rows(), "matmul: shape mismatch ", Tensor::shape_string(a.shape()), " x ",
          Tensor::shape_string(b.shape()));
  Tensor out({a.rows(), b.cols()});
  out.mat().noalias() = a.mat() * b.mat();
  return out;
}

inline Tensor transpose(const Tensor& a) {
  Tensor out({a.cols(), a.rows()});
  out.mat() = a.mat().transpose();
  return out;
}

}  // namespace tensor_ops

}  // namespace laneflow
