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

#include "lungvit/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace lungvit {

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i != 0) os << "x";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto extent : shape) n *= extent;
  return n;
}

namespace {

void check_shape(const Shape& shape) {
  if (shape.empty()) throw DimensionError("tensor shape must have at least one extent");
  for (auto extent : shape) {
    if (extent == 0) throw DimensionError("tensor extents must be positive, got " + shape_string(shape));
  }
}

}  // namespace

Tensor::Tensor(Shape shape, Scalar fill) : shape_(std::move(shape)) {
  check_shape(shape_);
  data_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<Scalar> data) : shape_(std::move(shape)), data_(std::move(data)) {
  check_shape(shape_);
  if (shape_size(shape_) != data_.size()) {
    throw DimensionError("shape " + shape_string(shape_) + " does not match " +
                         std::to_string(data_.size()) + " elements");
  }
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<Scalar>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<Scalar> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("ragged matrix literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(data));
}

Tensor Tensor::vector(std::initializer_list<Scalar> values) {
  return Tensor({values.size()}, std::vector<Scalar>(values));
}

Tensor Tensor::scalar(Scalar value) { return Tensor({1}, std::vector<Scalar>{value}); }

std::size_t Tensor::rows() const {
  if (shape_.size() < 2) return 1;
  return shape_size(shape_) / shape_.back();
}

std::size_t Tensor::cols() const { return shape_.empty() ? 0 : shape_.back(); }

Scalar Tensor::item() const {
  if (data_.size() != 1) {
    throw DimensionError("item() needs a single-element tensor, got " + shape_string(shape_));
  }
  return data_[0];
}

void Tensor::fill(Scalar value) { std::fill(data_.begin(), data_.end(), value); }

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != data_.size()) {
    throw DimensionError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](Scalar v) { return std::isfinite(v); });
}

namespace kernels {

void gemm_nn(const Scalar* a, const Scalar* b, Scalar* out, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate) {
  if (!accumulate) std::fill(out, out + m * n, Scalar(0));
  for (std::size_t i = 0; i < m; ++i) {
    Scalar* out_row = out + i * n;
    const Scalar* a_row = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const Scalar aip = a_row[p];
      const Scalar* b_row = b + p * n;
      for (std::size_t j = 0; j < n; ++j) out_row[j] += aip * b_row[j];
    }
  }
}

void gemm_nt(const Scalar* a, const Scalar* b, Scalar* out, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    const Scalar* a_row = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const Scalar* b_row = b + j * k;
      Scalar acc = 0;
      for (std::size_t p = 0; p < k; ++p) acc += a_row[p] * b_row[p];
      out[i * n + j] = accumulate ? out[i * n + j] + acc : acc;
    }
  }
}

void gemm_tn(const Scalar* a, const Scalar* b, Scalar* out, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate) {
  if (!accumulate) std::fill(out, out + m * n, Scalar(0));
  for (std::size_t p = 0; p < k; ++p) {
    const Scalar* a_row = a + p * m;
    const Scalar* b_row = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const Scalar api = a_row[i];
      Scalar* out_row = out + i * n;
      for (std::size_t j = 0; j < n; ++j) out_row[j] += api * b_row[j];
    }
  }
}

}  // namespace kernels

}  // namespace lungvit
