// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major tensor of 64-bit floats. Tensors are plain values; gradient
// bookkeeping lives on the Tape (tape.hpp).

#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <string>
#include <utility>
#include <vector>

#include "tmlga/errors.hpp"

namespace tmlga {

class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape)
      : shape_(std::move(shape)), values_(checked_numel(shape_), 0.0) {}

  Tensor(std::vector<std::size_t> shape, std::vector<double> values)
      : shape_(std::move(shape)), values_(std::move(values)) {
    if (checked_numel(shape_) != values_.size()) {
      throw shape_error("tensor: shape " + shape_str() + " expects " +
                        std::to_string(checked_numel(shape_)) + " values, got " +
                        std::to_string(values_.size()));
    }
  }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }
  static Tensor vector(std::vector<double> v) {
    std::size_t n = v.size();
    return Tensor({n}, std::move(v));
  }
  static Tensor matrix(std::size_t r, std::size_t c, std::vector<double> v) {
    return Tensor({r, c}, std::move(v));
  }
  static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<std::size_t> shape, double v) {
    Tensor t(std::move(shape));
    for (double& x : t.values_) x = v;
    return t;
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t numel() const { return values_.size(); }

  std::size_t rows() const { return shape_.at(0); }
  std::size_t cols() const { return shape_.at(1); }

  double operator[](std::size_t i) const { return values_[i]; }
  double& operator[](std::size_t i) { return values_[i]; }
  double at(std::size_t i, std::size_t j) const { return values_[i * cols() + j]; }
  double& at(std::size_t i, std::size_t j) { return values_[i * cols() + j]; }

  const double* data() const { return values_.data(); }
  double* data() { return values_.data(); }
  const std::vector<double>& values() const { return values_; }
  std::vector<double>& values() { return values_; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  std::string shape_str() const {
    std::string s = "[";
    for (std::size_t i = 0; i < shape_.size(); ++i) {
      if (i) s += "x";
      s += std::to_string(shape_[i]);
    }
    return s + "]";
  }

  bool all_finite() const {
    for (double v : values_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

 private:
  static std::size_t checked_numel(const std::vector<std::size_t>& shape) {
    if (shape.empty()) throw shape_error("tensor: rank-0 shape not allowed");
    std::size_t n = 1;
    for (std::size_t d : shape) {
      if (d == 0) throw shape_error("tensor: zero dimension not allowed");
      n *= d;
    }
    return n;
  }

  std::vector<std::size_t> shape_;
  std::vector<double> values_;
};

}  // namespace tmlga
