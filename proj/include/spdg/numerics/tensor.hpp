// Copyright 2026 The spdg Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "spdg/error.hpp"

namespace spdg {

using Shape = std::vector<std::size_t>;

/// Storage precision used when a tensor is serialized. Arithmetic is always 64-bit.
enum class DType : std::uint8_t { kF64 = 0, kF32 = 1 };

/// Vectors below this Euclidean norm are rejected rather than clamped.
inline constexpr double kNormEpsilon = 1e-12;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

/// Dense row-major array of doubles.
class Tensor {
 public:
  Tensor() : shape_{}, data_(1, 0.0) {}

  explicit Tensor(Shape shape, double fill = 0.0) : shape_(std::move(shape)), data_(numel(shape_), fill) {
    check_shape();
  }

  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape();
    if (data_.size() != numel(shape_)) {
      fail(ErrorCode::kShapeMismatch, "shape " + shape_string(shape_) + " needs " + std::to_string(numel(shape_)) +
                                          " values, got " + std::to_string(data_.size()));
    }
  }

  static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }
  static Tensor vector(std::vector<double> v) {
    const std::size_t n = v.size();
    return Tensor(Shape{n}, std::move(v));
  }
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
    std::vector<double> data;
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    for (const auto& row : rows) {
      if (row.size() != c) fail(ErrorCode::kShapeMismatch, "ragged matrix literal");
      data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor(Shape{r, c}, std::move(data));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }

  std::size_t rows() const { return rank() == 2 ? shape_[0] : 1; }
  std::size_t cols() const { return rank() == 0 ? 1 : shape_.back(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::vector<double>& storage() noexcept { return data_; }
  const std::vector<double>& storage() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  double item() const {
    if (data_.size() != 1) fail(ErrorCode::kNonScalarLoss, "item() on tensor of shape " + shape_string(shape_));
    return data_[0];
  }

  std::span<const double> row(std::size_t r) const { return std::span<const double>(data_).subspan(r * cols(), cols()); }
  std::span<double> row(std::size_t r) { return std::span<double>(data_).subspan(r * cols(), cols()); }

  Tensor reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

  bool all_finite() const {
    for (double v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  friend bool operator==(const Tensor& a, const Tensor& b) { return a.shape_ == b.shape_ && a.data_ == b.data_; }

 private:
  void check_shape() const {
    for (std::size_t d : shape_) {
      if (d == 0) fail(ErrorCode::kShapeMismatch, "zero-length axis in shape " + shape_string(shape_));
    }
  }

  Shape shape_;
  std::vector<double> data_;
};

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

/// Plain cosine similarity; throws on degenerate vectors.
inline double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    fail(ErrorCode::kDimension, "cosine_similarity lengths " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  }
  const double na = norm(a);
  const double nb = norm(b);
  if (na <= kNormEpsilon || nb <= kNormEpsilon) fail(ErrorCode::kDegenerateVector, "cosine_similarity on near-zero vector");
  return dot(a, b) / (na * nb);
}

/// Max-shifted log(sum(exp(x))).
inline double log_sum_exp(std::span<const double> x) {
  if (x.empty()) fail(ErrorCode::kEmptyInput, "log_sum_exp of empty input");
  double m = x[0];
  for (double v : x) m = std::max(m, v);
  double s = 0.0;
  for (double v : x) s += std::exp(v - m);
  return m + std::log(s);
}

inline std::vector<double> unit(std::span<const double> a) {
  const double n = norm(a);
  if (n <= kNormEpsilon) fail(ErrorCode::kDegenerateVector, "l2_normalize of near-zero vector");
  std::vector<double> out(a.begin(), a.end());
  for (double& v : out) v /= n;
  return out;
}

/// out = a(r x k) * b(k x c), plain triple loop in fixed order.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    fail(ErrorCode::kDimension, "matmul " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  const std::size_t r = a.dim(0), k = a.dim(1), c = b.dim(1);
  Tensor out(Shape{r, c});
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      for (std::size_t j = 0; j < c; ++j) out[i * c + j] += av * b[p * c + j];
    }
  }
  return out;
}

}  // namespace spdg
