// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "skald/common.hpp"

namespace skald {

int64_t shape_numel(const std::vector<int> &shape);
std::string shape_string(const std::vector<int> &shape);

/// Dense n-d array, row-major. T is float for training, double for
/// gradient checks.
template <class T> struct Tensor {
  std::vector<int> shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s)
      : shape(std::move(s)), data(size_t(shape_numel(shape)), T(0)) {}

  int64_t size() const { return int64_t(data.size()); }

  T &operator()(int i, int j) {
    return data[size_t(i) * shape[1] + size_t(j)];
  }
  T operator()(int i, int j) const {
    return data[size_t(i) * shape[1] + size_t(j)];
  }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }

  void reshape(std::vector<int> s) {
    if (shape_numel(s) != size())
      throw DimensionError("reshape to " + shape_string(s) + " changes size");
    shape = std::move(s);
  }

  bool finite() const {
    for (T v : data)
      if (!std::isfinite(double(v)))
        return false;
    return true;
  }
};

template <class T>
using EigenRowMat =
    Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class T>
Eigen::Map<EigenRowMat<T>> mat_map(Tensor<T> &t, int rows, int cols) {
  return Eigen::Map<EigenRowMat<T>>(t.data.data(), rows, cols);
}

template <class T>
Eigen::Map<const EigenRowMat<T>> mat_map(const Tensor<T> &t, int rows,
                                         int cols) {
  return Eigen::Map<const EigenRowMat<T>>(t.data.data(), rows, cols);
}

} // namespace skald
