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
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "lungvit/tensor.hpp"

namespace lungvit {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; only valid while
/// the tape is alive.
class Var {
 public:
  Var() = default;

  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  /// Gradient buffer after Tape::backward. Only leaves keep theirs.
  const Tensor& grad() const;

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Define-by-run record of primitive operations for reverse-mode
/// differentiation. Single-threaded; give each worker its own tape.
class Tape {
 public:
  /// Accumulates into the gradient buffers of the op's inputs. A slot is
  /// null when that input does not require a gradient.
  using BackwardFn =
      std::function<void(const Tensor& grad_out, std::span<Tensor* const> grad_inputs)>;

  Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var parameter(Tensor value);
  /// Borrowed leaves: the tensor is not copied and must outlive the tape.
  Var constant_ref(const Tensor& value);
  Var parameter_ref(const Tensor& value);

  /// Records an op. `backward` is dropped when no input requires a gradient.
  Var record(const char* op, Tensor value, std::vector<Var> inputs, BackwardFn backward);

  /// Reverse sweep from a single-element `loss`. Gradients are reset first,
  /// so calling it twice gives identical buffers.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }
  const Tensor& value(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  const Tensor& grad(std::size_t id) const;
  const char* op_name(std::size_t id) const { return nodes_.at(id).op; }

  /// Node ids whose backward ran during the last sweep, in visit order.
  const std::vector<std::size_t>& last_backward_order() const { return backward_order_; }

  /// Post-op NaN/Inf assertion; on by default only in debug builds.
  void set_check_finite(bool on) { check_finite_ = on; }

 private:
  struct Node {
    const char* op = "leaf";
    Tensor owned;
    const Tensor* borrowed = nullptr;
    bool requires_grad = false;
    bool leaf = true;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    Tensor grad;
    const Tensor& value() const { return borrowed != nullptr ? *borrowed : owned; }
  };

  Var push_leaf(Tensor owned, const Tensor* borrowed, bool requires_grad);
  void ensure_grad(Node& node);

  std::deque<Node> nodes_;
  std::vector<std::size_t> backward_order_;
  bool check_finite_ = kDebugBuild;
};

// Differentiable primitives. Matrices are rank 2; rank-1 tensors are read as
// a single row where noted.

/// a[m×k] · b[k×n].
Var matmul(Var a, Var b);
Var transpose(Var a);
/// Elementwise sum of two same-shape tensors.
Var add(Var a, Var b);
/// Elementwise product of two same-shape tensors.
Var mul(Var a, Var b);
Var scale(Var a, Scalar factor);
/// x[n×d] + bias[d] broadcast over rows.
Var add_bias(Var x, Var bias);
/// Sum of all elements, as a [1] tensor.
Var sum(Var a);
Var reshape(Var a, Shape shape);

/// Row-wise softmax with per-row max subtraction.
Var softmax_rows(Var x);
/// Per-row standardization followed by elementwise gain and bias.
Var layer_norm(Var x, Var gain, Var bias, Scalar eps = Scalar(1e-6));
/// Exact x·Φ(x).
Var gelu(Var x);
/// Mean over rows of −log softmax(logits)[label].
Var cross_entropy(Var logits, std::span<const int> labels);

Var slice_rows(Var x, std::size_t first, std::size_t count);
Var slice_cols(Var x, std::size_t first, std::size_t count);
/// Stacks matrices (or rank-1 rows) vertically; all must share the width.
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);

/// Exact GeLU on a single value.
Scalar gelu_value(Scalar x);

using TapeFunction = std::function<Var(Tape&, Var)>;

enum class Stencil {
  /// (f(x+h) − f(x−h)) / 2h.
  kSecondOrder,
  /// (8(f(x+h) − f(x−h)) − (f(x+2h) − f(x−2h))) / 12h; lets a larger h keep
  /// roundoff low on deep compositions.
  kFourthOrder,
};

/// Central-difference check of `f`'s reverse-mode gradient at `x`.
/// Returns the largest coordinatewise relative error, with denominator
/// max(|analytic|, |numeric|, 1e-8). Throws OracleInvalidError when two
/// evaluations at `x` disagree.
double finite_diff_check(const TapeFunction& f, const Tensor& x, double h = 1e-5,
                         Stencil stencil = Stencil::kSecondOrder);

}  // namespace lungvit
