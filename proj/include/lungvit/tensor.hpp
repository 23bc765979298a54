// Copyright 2026 The lungvit Authors. All Rights Reserved.
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

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "lungvit/common.hpp"

namespace lungvit {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);
std::size_t shape_size(const Shape& shape);

/// Dense row-major array. Every extent is positive and the element count
/// always equals the product of the shape.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, Scalar fill = Scalar(0));
  Tensor(Shape shape, std::vector<Scalar> data);

  static Tensor matrix(std::initializer_list<std::initializer_list<Scalar>> rows);
  static Tensor vector(std::initializer_list<Scalar> values);
  static Tensor scalar(Scalar value);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  /// Leading extent; for a rank-1 tensor this is 1 (viewed as a row).
  std::size_t rows() const;
  /// Trailing extent.
  std::size_t cols() const;

  std::span<Scalar> data() { return data_; }
  std::span<const Scalar> data() const { return data_; }
  Scalar* raw() { return data_.data(); }
  const Scalar* raw() const { return data_.data(); }

  Scalar& operator[](std::size_t i) { return data_[i]; }
  Scalar operator[](std::size_t i) const { return data_[i]; }
  Scalar& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  Scalar operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  /// Value of a single-element tensor.
  Scalar item() const;

  void fill(Scalar value);
  Tensor reshaped(Shape shape) const;
  bool all_finite() const;

  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  std::vector<Scalar> data_;
};

namespace kernels {

// out[m×n] (+)= a[m×k] · b[k×n]; the transposed variants read a or b as
// stored transposed. All loops run in a fixed order so results are
// reproducible bit for bit.
void gemm_nn(const Scalar* a, const Scalar* b, Scalar* out, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate);
void gemm_nt(const Scalar* a, const Scalar* b, Scalar* out, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate);
void gemm_tn(const Scalar* a, const Scalar* b, Scalar* out, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate);

}  // namespace kernels

}  // namespace lungvit
