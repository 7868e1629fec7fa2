#pragma once

#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <vector>

#include <Eigen/Core>

#include "saic/common.hpp"

namespace saic {

using MatrixRM = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<MatrixRM>;
using ConstMatMap = Eigen::Map<const MatrixRM>;

// Dense float tensor with row-major layout. This is a plain value type;
// differentiation lives in autograd.hpp.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> dims) : dims_(std::move(dims)) {
    data_.assign(numel_of(dims_), 0.0f);
  }
  Tensor(std::vector<int> dims, std::vector<float> data)
      : dims_(std::move(dims)), data_(std::move(data)) {
    check_contract(data_.size() == numel_of(dims_), "Tensor: data size ",
                   data_.size(), " does not match shape");
  }

  static Tensor scalar(float v) { return Tensor({1}, {v}); }

  const std::vector<int>& dims() const { return dims_; }
  int dim(int i) const { return dims_.at(static_cast<std::size_t>(i)); }
  int rank() const { return static_cast<int>(dims_.size()); }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }

  // [B, C, H, W] accessor for image-like tensors.
  float& at4(int b, int c, int h, int w) {
    return data_[idx4(b, c, h, w)];
  }
  float at4(int b, int c, int h, int w) const { return data_[idx4(b, c, h, w)]; }

  std::size_t idx4(int b, int c, int h, int w) const {
    return ((static_cast<std::size_t>(b) * dims_[1] + c) * dims_[2] + h) * dims_[3] + w;
  }

  void fill(float v) { std::fill(data_.begin(), data_.end(), v); }

  bool same_shape(const Tensor& o) const { return dims_ == o.dims_; }

  // Views the tensor as a rows x cols row-major matrix.
  MatMap as_matrix(int rows, int cols) {
    check_contract(static_cast<std::size_t>(rows) * cols == numel(),
                   "Tensor::as_matrix: ", rows, "x", cols, " != ", numel());
    return MatMap(data_.data(), rows, cols);
  }
  ConstMatMap as_matrix(int rows, int cols) const {
    check_contract(static_cast<std::size_t>(rows) * cols == numel(),
                   "Tensor::as_matrix: ", rows, "x", cols, " != ", numel());
    return ConstMatMap(data_.data(), rows, cols);
  }

  static std::size_t numel_of(const std::vector<int>& dims) {
    std::size_t n = 1;
    for (int d : dims) {
      check_contract(d >= 0, "Tensor: negative dimension");
      n *= static_cast<std::size_t>(d);
    }
    return dims.empty() ? 0 : n;
  }

  bool all_finite() const {
    for (float v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

 private:
  std::vector<int> dims_;
  std::vector<float> data_;
};

inline std::string shape_str(const std::vector<int>& dims) {
  std::string s = "(";
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(dims[i]);
  }
  return s + ")";
}

}  // namespace saic
