/*
 * Copyright (c) 2026 The LFAM Authors. All Rights Reserved
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "lfam/errors.hpp"

namespace lfam {

using Shape = std::vector<std::size_t>;
using Bytes = std::vector<std::uint8_t>;

/// Number of elements described by `shape`; the empty shape is a scalar.
inline std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_to_string(const Shape& shape);

/**
 * Dense row-major array. `Tensor` (f32) carries weights, activations and
 * gradients; `IntTensor` (i8) carries quantized values and never holds -128.
 * The toy model computes internally on `Matrix` (f64).
 */
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() : data_(1, T{}) {}

  explicit BasicTensor(Shape shape) : shape_(std::move(shape)), data_(element_count(shape_), T{}) {
    check_dims();
  }

  BasicTensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_dims();
    if (data_.size() != element_count(shape_)) {
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_to_string(shape_));
    }
    if constexpr (std::is_same_v<T, std::int8_t>) {
      for (auto v : data_) {
        if (v < -127) throw ValueError("int8 tensor element -128 is outside [-127, 127]");
      }
    }
  }

  static BasicTensor matrix(std::size_t rows, std::size_t cols) { return BasicTensor(Shape{rows, cols}); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t rows() const { return shape_.at(0); }
  std::size_t cols() const { return shape_.at(1); }

  std::span<const T> data() const noexcept { return data_; }
  std::span<T> data() noexcept { return data_; }
  const std::vector<T>& values() const noexcept { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  std::span<T> row(std::size_t r) { return std::span<T>(data_).subspan(r * shape_[1], shape_[1]); }
  std::span<const T> row(std::size_t r) const {
    return std::span<const T>(data_).subspan(r * shape_[1], shape_[1]);
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    if constexpr (std::is_floating_point_v<T>) {
      for (auto v : data_) {
        if (!std::isfinite(v)) return false;
      }
    }
    return true;
  }

  friend bool operator==(const BasicTensor&, const BasicTensor&) = default;

 private:
  void check_dims() const {
    for (auto d : shape_) {
      if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_to_string(shape_));
    }
  }

  Shape shape_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<float>;
using IntTensor = BasicTensor<std::int8_t>;
using Matrix = BasicTensor<double>;

template <typename To, typename From>
BasicTensor<To> tensor_cast(const BasicTensor<From>& t) {
  std::vector<To> out(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) out[i] = static_cast<To>(t[i]);
  return BasicTensor<To>(t.shape(), std::move(out));
}

/// Row-major matrix product of two rank-2 tensors.
template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw DimensionError("matmul expects rank-2 operands, got " + shape_to_string(a.shape()) + " and " +
                         shape_to_string(b.shape()));
  }
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul inner dimensions disagree: " + shape_to_string(a.shape()) + " x " +
                         shape_to_string(b.shape()));
  }
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  BasicTensor<T> out = BasicTensor<T>::matrix(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    T* orow = out.data().data() + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a(i, p);
      if (av == T{}) continue;
      const T* brow = b.data().data() + p * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

/// Mean of squared elementwise differences, accumulated in double.
template <typename T>
double mse(const BasicTensor<T>& x, const BasicTensor<T>& y) {
  if (x.shape() != y.shape()) {
    throw DimensionError("mse shape mismatch: " + shape_to_string(x.shape()) + " vs " +
                         shape_to_string(y.shape()));
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = static_cast<double>(x[i]) - static_cast<double>(y[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(x.size());
}

/// Little-endian f32 dump, 4 bytes per element, no header.
Bytes serialize_raw(const Tensor& t);
Tensor deserialize_raw(std::span<const std::uint8_t> bytes, const Shape& shape);

// Little-endian scalar helpers shared by the binary formats.
void put_u8(Bytes& out, std::uint8_t v);
void put_u16(Bytes& out, std::uint16_t v);
void put_u32(Bytes& out, std::uint32_t v);
void put_u64(Bytes& out, std::uint64_t v);
void put_f32(Bytes& out, float v);
std::uint16_t get_u16(const std::uint8_t* p);
std::uint32_t get_u32(const std::uint8_t* p);
std::uint64_t get_u64(const std::uint8_t* p);
float get_f32(const std::uint8_t* p);

}  // namespace lfam
