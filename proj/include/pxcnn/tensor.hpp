/**
 * Copyright 2026 The pxcnn Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef PXCNN_TENSOR_HPP_
#define PXCNN_TENSOR_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pxcnn/error.hpp"

namespace pxcnn {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_product(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

/**
 * Dense row-major array of doubles with rank 1 to 4.
 *
 * Images are stored as [channels, height, width], conv kernels as
 * [out, in, kh, kw], dense weights as [in, out]. Every public constructor
 * checks that the data length matches the shape and that all values are
 * finite.
 */
class Tensor {
 public:
  static constexpr std::size_t kMaxRank = 4;

  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape(shape_);
    if (data_.size() != shape_product(shape_)) {
      fail_argument("tensor data length " + std::to_string(data_.size()) +
                    " does not match shape " + shape_string(shape_) + " (product " +
                    std::to_string(shape_product(shape_)) + ")");
    }
    for (double v : data_) {
      if (!std::isfinite(v)) fail_argument("tensor data contains a non-finite value");
    }
  }

  static Tensor zeros(Shape shape) { return filled(std::move(shape), 0.0); }

  static Tensor filled(Shape shape, double value) {
    validate_shape(shape);
    const std::size_t n = shape_product(shape);
    return Tensor(Unchecked{}, std::move(shape), std::vector<double>(n, value));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }

  std::span<const double> values() const noexcept { return data_; }
  // Raw write access for layer kernels and optimizers; callers are
  // responsible for keeping the values finite.
  std::span<double> mutable_values() noexcept { return data_; }

  double operator[](std::size_t flat) const { return data_[flat]; }
  double& operator[](std::size_t flat) { return data_[flat]; }

  template <typename... Index>
  std::size_t offset(Index... index) const {
    static_assert(sizeof...(Index) >= 1 && sizeof...(Index) <= kMaxRank);
    const std::size_t idx[] = {static_cast<std::size_t>(index)...};
    if (sizeof...(Index) != shape_.size()) {
      fail_argument("index rank " + std::to_string(sizeof...(Index)) + " does not match shape " +
                    shape_string(shape_));
    }
    std::size_t flat = 0;
    for (std::size_t a = 0; a < sizeof...(Index); ++a) {
      if (idx[a] >= shape_[a]) fail_argument("index out of range for shape " + shape_string(shape_));
      flat = flat * shape_[a] + idx[a];
    }
    return flat;
  }

  template <typename... Index>
  double operator()(Index... index) const {
    return data_[offset(index...)];
  }

  template <typename... Index>
  double& operator()(Index... index) {
    return data_[offset(index...)];
  }

  /// Same data under a new shape of equal element count.
  Tensor reshaped(Shape shape) const {
    validate_shape(shape);
    if (shape_product(shape) != data_.size()) {
      fail_argument("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    }
    return Tensor(Unchecked{}, std::move(shape), data_);
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  struct Unchecked {};
  Tensor(Unchecked, Shape shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {}

  static void validate_shape(const Shape& shape) {
    if (shape.empty() || shape.size() > kMaxRank) {
      fail_argument("tensor rank must be between 1 and 4, got shape " + shape_string(shape));
    }
    if (std::find(shape.begin(), shape.end(), std::size_t{0}) != shape.end()) {
      fail_argument("tensor dimensions must be positive, got shape " + shape_string(shape));
    }
  }

  Shape shape_;
  std::vector<double> data_;
};

/// Matrix product of [m,k] by [k,n]. Each output element sums its k terms
/// in ascending index order.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    fail_argument("matmul shape mismatch: " + shape_string(a.shape()) + " x " +
                  shape_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out = Tensor::zeros({m, n});
  const auto av = a.values();
  const auto bv = b.values();
  auto ov = out.mutable_values();
  // i-t-j order: each out(i,j) still receives its t terms in ascending t.
  for (std::size_t i = 0; i < m; ++i) {
    double* row = ov.data() + i * n;
    for (std::size_t t = 0; t < k; ++t) {
      const double lhs = av[i * k + t];
      const double* brow = bv.data() + t * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += lhs * brow[j];
    }
  }
  return out;
}

enum class ElementwiseOp { add, sub, mul };

inline Tensor elementwise(const Tensor& a, const Tensor& b, ElementwiseOp op) {
  if (a.shape() != b.shape()) {
    fail_argument("elementwise shape mismatch: " + shape_string(a.shape()) + " vs " +
                  shape_string(b.shape()));
  }
  Tensor out = Tensor::zeros(a.shape());
  auto ov = out.mutable_values();
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < ov.size(); ++i) {
    switch (op) {
      case ElementwiseOp::add: ov[i] = av[i] + bv[i]; break;
      case ElementwiseOp::sub: ov[i] = av[i] - bv[i]; break;
      case ElementwiseOp::mul: ov[i] = av[i] * bv[i]; break;
    }
  }
  return out;
}

inline Tensor add(const Tensor& a, const Tensor& b) { return elementwise(a, b, ElementwiseOp::add); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(a, b, ElementwiseOp::sub); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(a, b, ElementwiseOp::mul); }

inline Tensor neg(const Tensor& a) {
  Tensor out = a;
  for (double& v : out.mutable_values()) v = -v;
  return out;
}

}  // namespace pxcnn

#endif  // PXCNN_TENSOR_HPP_
