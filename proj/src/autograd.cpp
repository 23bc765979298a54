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

#include "lungvit/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace lungvit {

// ---------------------------------------------------------------- Var

const Tensor& Var::value() const {
  if (tape_ == nullptr) throw ContractError("value() on an unbound Var");
  return tape_->value(id_);
}

bool Var::requires_grad() const { return tape_ != nullptr && tape_->requires_grad(id_); }

const Tensor& Var::grad() const {
  if (tape_ == nullptr) throw ContractError("grad() on an unbound Var");
  return tape_->grad(id_);
}

// ---------------------------------------------------------------- Tape

Tape::Tape() = default;

Var Tape::push_leaf(Tensor owned, const Tensor* borrowed, bool requires_grad) {
  Node node;
  node.owned = std::move(owned);
  node.borrowed = borrowed;
  node.requires_grad = requires_grad;
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) { return push_leaf(std::move(value), nullptr, false); }
Var Tape::parameter(Tensor value) { return push_leaf(std::move(value), nullptr, true); }
Var Tape::constant_ref(const Tensor& value) { return push_leaf(Tensor{}, &value, false); }
Var Tape::parameter_ref(const Tensor& value) { return push_leaf(Tensor{}, &value, true); }

Var Tape::record(const char* op, Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  if (check_finite_ && !value.all_finite()) {
    throw NumericError(std::string("non-finite value produced by ") + op);
  }
  Node node;
  node.op = op;
  node.owned = std::move(value);
  node.leaf = false;
  node.inputs.reserve(inputs.size());
  for (const Var& v : inputs) {
    if (v.tape() != this) throw ContractError(std::string(op) + ": input recorded on another tape");
    node.inputs.push_back(v.id());
    node.requires_grad = node.requires_grad || nodes_[v.id()].requires_grad;
  }
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

const Tensor& Tape::value(std::size_t id) const { return nodes_.at(id).value(); }

const Tensor& Tape::grad(std::size_t id) const {
  const Node& node = nodes_.at(id);
  if (node.grad.empty()) {
    throw ContractError("no gradient buffer for node " + std::to_string(id) + " (" + node.op + ")");
  }
  return node.grad;
}

void Tape::ensure_grad(Node& node) {
  if (node.grad.empty()) node.grad = Tensor(node.value().shape(), Scalar(0));
}

void Tape::backward(Var loss) {
  if (loss.tape() != this) throw ContractError("backward: loss belongs to another tape");
  const Node& root = nodes_.at(loss.id());
  if (root.value().size() != 1) {
    throw ContractError("backward needs a scalar loss, got shape " + shape_string(root.value().shape()));
  }
  for (Node& node : nodes_) node.grad = Tensor{};
  backward_order_.clear();

  Node& seed = nodes_[loss.id()];
  ensure_grad(seed);
  seed.grad.fill(Scalar(1));

  std::vector<Tensor*> grad_inputs;
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (node.grad.empty() || !node.backward) continue;
    grad_inputs.clear();
    for (std::size_t in : node.inputs) {
      Node& input = nodes_[in];
      if (input.requires_grad) {
        ensure_grad(input);
        grad_inputs.push_back(&input.grad);
      } else {
        grad_inputs.push_back(nullptr);
      }
    }
    node.backward(node.grad, grad_inputs);
    backward_order_.push_back(id);
    if (!node.leaf) node.grad = Tensor{};
  }
  for (Node& node : nodes_) {
    if (node.leaf && node.requires_grad) ensure_grad(node);
  }
}

// ---------------------------------------------------------------- helpers

namespace {

void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

void accumulate(Tensor* dst, const Tensor& src) {
  if (dst == nullptr) return;
  auto d = dst->data();
  auto s = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

Tape& tape_of(Var v, const char* op) {
  if (!v.valid()) throw ContractError(std::string(op) + ": unbound input");
  return *v.tape();
}

}  // namespace

// ---------------------------------------------------------------- ops

Var matmul(Var a, Var b) {
  Tape& tape = tape_of(a, "matmul");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_matrix(av, "matmul");
  require_matrix(bv, "matmul");
  const std::size_t m = av.shape()[0], k = av.shape()[1], n = bv.shape()[1];
  if (bv.shape()[0] != k) {
    throw DimensionError("matmul: inner dimensions differ for " + shape_string(av.shape()) + " and " +
                         shape_string(bv.shape()));
  }
  Tensor out({m, n});
  kernels::gemm_nn(av.raw(), bv.raw(), out.raw(), m, k, n, false);
  const Tensor* ap = &av;
  const Tensor* bp = &bv;
  return tape.record("matmul", std::move(out), {a, b},
                     [ap, bp, m, k, n](const Tensor& g, std::span<Tensor* const> grads) {
                       if (grads[0] != nullptr) kernels::gemm_nt(g.raw(), bp->raw(), grads[0]->raw(), m, n, k, true);
                       if (grads[1] != nullptr) kernels::gemm_tn(ap->raw(), g.raw(), grads[1]->raw(), k, m, n, true);
                     });
}

Var transpose(Var a) {
  Tape& tape = tape_of(a, "transpose");
  const Tensor& av = a.value();
  require_matrix(av, "transpose");
  const std::size_t r = av.shape()[0], c = av.shape()[1];
  Tensor out({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out(j, i) = av(i, j);
  return tape.record("transpose", std::move(out), {a},
                     [r, c](const Tensor& g, std::span<Tensor* const> grads) {
                       Tensor* ga = grads[0];
                       for (std::size_t i = 0; i < r; ++i)
                         for (std::size_t j = 0; j < c; ++j) (*ga)(i, j) += g(j, i);
                     });
}

Var add(Var a, Var b) {
  Tape& tape = tape_of(a, "add");
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  accumulate(&out, b.value());
  return tape.record("add", std::move(out), {a, b},
                     [](const Tensor& g, std::span<Tensor* const> grads) {
                       accumulate(grads[0], g);
                       accumulate(grads[1], g);
                     });
}

Var mul(Var a, Var b) {
  Tape& tape = tape_of(a, "mul");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_same_shape(av, bv, "mul");
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  const Tensor* ap = &av;
  const Tensor* bp = &bv;
  return tape.record("mul", std::move(out), {a, b},
                     [ap, bp](const Tensor& g, std::span<Tensor* const> grads) {
                       if (grads[0] != nullptr)
                         for (std::size_t i = 0; i < g.size(); ++i) (*grads[0])[i] += g[i] * (*bp)[i];
                       if (grads[1] != nullptr)
                         for (std::size_t i = 0; i < g.size(); ++i) (*grads[1])[i] += g[i] * (*ap)[i];
                     });
}

Var scale(Var a, Scalar factor) {
  Tape& tape = tape_of(a, "scale");
  Tensor out = a.value();
  for (auto& v : out.data()) v *= factor;
  return tape.record("scale", std::move(out), {a},
                     [factor](const Tensor& g, std::span<Tensor* const> grads) {
                       for (std::size_t i = 0; i < g.size(); ++i) (*grads[0])[i] += g[i] * factor;
                     });
}

Var add_bias(Var x, Var bias) {
  Tape& tape = tape_of(x, "add_bias");
  const Tensor& xv = x.value();
  const Tensor& bv = bias.value();
  const std::size_t n = xv.rows(), d = xv.cols();
  if (bv.size() != d) {
    throw DimensionError("add_bias: bias " + shape_string(bv.shape()) + " does not fit " +
                         shape_string(xv.shape()));
  }
  Tensor out = xv;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] += bv[j];
  return tape.record("add_bias", std::move(out), {x, bias},
                     [n, d](const Tensor& g, std::span<Tensor* const> grads) {
                       accumulate(grads[0], g);
                       if (grads[1] != nullptr)
                         for (std::size_t i = 0; i < n; ++i)
                           for (std::size_t j = 0; j < d; ++j) (*grads[1])[j] += g[i * d + j];
                     });
}

Var sum(Var a) {
  Tape& tape = tape_of(a, "sum");
  Scalar total = 0;
  for (Scalar v : a.value().data()) total += v;
  return tape.record("sum", Tensor::scalar(total), {a},
                     [](const Tensor& g, std::span<Tensor* const> grads) {
                       const Scalar s = g[0];
                       for (auto& v : grads[0]->data()) v += s;
                     });
}

Var reshape(Var a, Shape shape) {
  Tape& tape = tape_of(a, "reshape");
  Tensor out = a.value().reshaped(std::move(shape));
  return tape.record("reshape", std::move(out), {a},
                     [](const Tensor& g, std::span<Tensor* const> grads) {
                       auto dst = grads[0]->data();
                       for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
                     });
}

Var softmax_rows(Var x) {
  Tape& tape = tape_of(x, "softmax_rows");
  const Tensor& xv = x.value();
  const std::size_t n = xv.rows(), m = xv.cols();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < n; ++i) {
    const Scalar* in = xv.raw() + i * m;
    Scalar* o = out.raw() + i * m;
    const Scalar mx = *std::max_element(in, in + m);
    Scalar total = 0;
    for (std::size_t j = 0; j < m; ++j) {
      o[j] = std::exp(in[j] - mx);
      total += o[j];
    }
    const Scalar inv = Scalar(1) / total;
    for (std::size_t j = 0; j < m; ++j) o[j] *= inv;
  }
  // The backward reads this op's own output, which lives in the node about
  // to be recorded; deque storage keeps it in place.
  const std::size_t self = tape.size();
  const Tape* owner = &tape;
  return tape.record("softmax_rows", std::move(out), {x},
                     [owner, self, n, m](const Tensor& g, std::span<Tensor* const> grads) {
                       const Tensor& yv = owner->value(self);
                       for (std::size_t i = 0; i < n; ++i) {
                         const Scalar* y = yv.raw() + i * m;
                         const Scalar* gr = g.raw() + i * m;
                         Scalar dot = 0;
                         for (std::size_t j = 0; j < m; ++j) dot += gr[j] * y[j];
                         Scalar* dst = grads[0]->raw() + i * m;
                         for (std::size_t j = 0; j < m; ++j) dst[j] += y[j] * (gr[j] - dot);
                       }
                     });
}

Var layer_norm(Var x, Var gain, Var bias, Scalar eps) {
  Tape& tape = tape_of(x, "layer_norm");
  if (!(eps > 0)) throw ContractError("layer_norm: eps must be positive");
  const Tensor& xv = x.value();
  const std::size_t n = xv.rows(), d = xv.cols();
  if (gain.value().size() != d || bias.value().size() != d) {
    throw DimensionError("layer_norm: gain/bias must have " + std::to_string(d) + " elements");
  }
  const Tensor& gv = gain.value();
  const Tensor& bv = bias.value();
  Tensor normalized(xv.shape());
  std::vector<Scalar> inv_std(n);
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < n; ++i) {
    const Scalar* row = xv.raw() + i * d;
    Scalar mean = 0;
    for (std::size_t j = 0; j < d; ++j) mean += row[j];
    mean /= Scalar(d);
    Scalar var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= Scalar(d);
    const Scalar is = Scalar(1) / std::sqrt(var + eps);
    inv_std[i] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const Scalar xh = (row[j] - mean) * is;
      normalized[i * d + j] = xh;
      out[i * d + j] = xh * gv[j] + bv[j];
    }
  }
  const Tensor* gp = &gv;
  return tape.record(
      "layer_norm", std::move(out), {x, gain, bias},
      [gp, n, d, xhat = std::move(normalized), inv_std = std::move(inv_std)](
          const Tensor& g, std::span<Tensor* const> grads) {
        for (std::size_t i = 0; i < n; ++i) {
          const Scalar* gr = g.raw() + i * d;
          const Scalar* xh = xhat.raw() + i * d;
          if (grads[1] != nullptr)
            for (std::size_t j = 0; j < d; ++j) (*grads[1])[j] += gr[j] * xh[j];
          if (grads[2] != nullptr)
            for (std::size_t j = 0; j < d; ++j) (*grads[2])[j] += gr[j];
          if (grads[0] != nullptr) {
            Scalar mean_gy = 0, mean_gy_xh = 0;
            for (std::size_t j = 0; j < d; ++j) {
              const Scalar gy = gr[j] * (*gp)[j];
              mean_gy += gy;
              mean_gy_xh += gy * xh[j];
            }
            mean_gy /= Scalar(d);
            mean_gy_xh /= Scalar(d);
            Scalar* dst = grads[0]->raw() + i * d;
            for (std::size_t j = 0; j < d; ++j) {
              const Scalar gy = gr[j] * (*gp)[j];
              dst[j] += inv_std[i] * (gy - mean_gy - xh[j] * mean_gy_xh);
            }
          }
        }
      });
}

Scalar gelu_value(Scalar x) {
  return Scalar(0.5) * x * (Scalar(1) + std::erf(x / std::numbers::sqrt2_v<Scalar>));
}

Var gelu(Var x) {
  Tape& tape = tape_of(x, "gelu");
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = gelu_value(xv[i]);
  const Tensor* xp = &xv;
  return tape.record("gelu", std::move(out), {x}, [xp](const Tensor& g, std::span<Tensor* const> grads) {
    constexpr Scalar inv_sqrt_2pi = Scalar(0.5) * std::numbers::inv_sqrtpi_v<Scalar> * std::numbers::sqrt2_v<Scalar>;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const Scalar v = (*xp)[i];
      const Scalar cdf = Scalar(0.5) * (Scalar(1) + std::erf(v / std::numbers::sqrt2_v<Scalar>));
      const Scalar pdf = inv_sqrt_2pi * std::exp(Scalar(-0.5) * v * v);
      (*grads[0])[i] += g[i] * (cdf + v * pdf);
    }
  });
}

Var cross_entropy(Var logits, std::span<const int> labels) {
  Tape& tape = tape_of(logits, "cross_entropy");
  const Tensor& lv = logits.value();
  const std::size_t n = lv.rows(), m = lv.cols();
  if (labels.size() != n) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(n) + " rows");
  }
  Tensor probs(lv.shape());
  Scalar loss = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const int label = labels[i];
    if (label < 0 || static_cast<std::size_t>(label) >= m) {
      throw IndexError("cross_entropy: label " + std::to_string(label) + " outside [0, " +
                       std::to_string(m) + ")");
    }
    const Scalar* row = lv.raw() + i * m;
    const Scalar mx = *std::max_element(row, row + m);
    Scalar total = 0;
    for (std::size_t j = 0; j < m; ++j) total += std::exp(row[j] - mx);
    const Scalar log_z = mx + std::log(total);
    loss += log_z - row[label];
    for (std::size_t j = 0; j < m; ++j) probs[i * m + j] = std::exp(row[j] - log_z);
  }
  loss /= Scalar(n);
  std::vector<int> kept(labels.begin(), labels.end());
  return tape.record("cross_entropy", Tensor::scalar(loss), {logits},
                     [n, m, probs = std::move(probs), kept = std::move(kept)](
                         const Tensor& g, std::span<Tensor* const> grads) {
                       const Scalar s = g[0] / Scalar(n);
                       for (std::size_t i = 0; i < n; ++i) {
                         for (std::size_t j = 0; j < m; ++j) {
                           const Scalar target = static_cast<int>(j) == kept[i] ? Scalar(1) : Scalar(0);
                           (*grads[0])[i * m + j] += s * (probs[i * m + j] - target);
                         }
                       }
                     });
}

Var slice_rows(Var x, std::size_t first, std::size_t count) {
  Tape& tape = tape_of(x, "slice_rows");
  const Tensor& xv = x.value();
  const std::size_t n = xv.rows(), d = xv.cols();
  if (count == 0 || first + count > n) {
    throw DimensionError("slice_rows: rows [" + std::to_string(first) + ", " + std::to_string(first + count) +
                         ") outside " + shape_string(xv.shape()));
  }
  std::vector<Scalar> data(xv.raw() + first * d, xv.raw() + (first + count) * d);
  return tape.record("slice_rows", Tensor({count, d}, std::move(data)), {x},
                     [first, d](const Tensor& g, std::span<Tensor* const> grads) {
                       Scalar* dst = grads[0]->raw() + first * d;
                       for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
                     });
}

Var slice_cols(Var x, std::size_t first, std::size_t count) {
  Tape& tape = tape_of(x, "slice_cols");
  const Tensor& xv = x.value();
  require_matrix(xv, "slice_cols");
  const std::size_t n = xv.shape()[0], d = xv.shape()[1];
  if (count == 0 || first + count > d) {
    throw DimensionError("slice_cols: columns [" + std::to_string(first) + ", " +
                         std::to_string(first + count) + ") outside " + shape_string(xv.shape()));
  }
  Tensor out({n, count});
  for (std::size_t i = 0; i < n; ++i)
    std::copy_n(xv.raw() + i * d + first, count, out.raw() + i * count);
  return tape.record("slice_cols", std::move(out), {x},
                     [n, d, first, count](const Tensor& g, std::span<Tensor* const> grads) {
                       for (std::size_t i = 0; i < n; ++i) {
                         Scalar* dst = grads[0]->raw() + i * d + first;
                         const Scalar* src = g.raw() + i * count;
                         for (std::size_t j = 0; j < count; ++j) dst[j] += src[j];
                       }
                     });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat_rows: nothing to concatenate");
  Tape& tape = tape_of(parts[0], "concat_rows");
  const std::size_t d = parts[0].value().cols();
  std::size_t total = 0;
  std::vector<std::size_t> offsets;
  for (const Var& p : parts) {
    if (p.value().cols() != d) {
      throw DimensionError("concat_rows: width " + std::to_string(p.value().cols()) + " vs " +
                           std::to_string(d));
    }
    offsets.push_back(total);
    total += p.value().size();
  }
  std::vector<Scalar> data;
  data.reserve(total);
  for (const Var& p : parts) data.insert(data.end(), p.value().data().begin(), p.value().data().end());
  return tape.record("concat_rows", Tensor({total / d, d}, std::move(data)),
                     std::vector<Var>(parts.begin(), parts.end()),
                     [offsets = std::move(offsets)](const Tensor& g, std::span<Tensor* const> grads) {
                       for (std::size_t k = 0; k < grads.size(); ++k) {
                         if (grads[k] == nullptr) continue;
                         auto dst = grads[k]->data();
                         for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[offsets[k] + i];
                       }
                     });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat_cols: nothing to concatenate");
  Tape& tape = tape_of(parts[0], "concat_cols");
  const std::size_t n = parts[0].value().rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const Var& p : parts) {
    require_matrix(p.value(), "concat_cols");
    if (p.value().rows() != n) {
      throw DimensionError("concat_cols: height " + std::to_string(p.value().rows()) + " vs " +
                           std::to_string(n));
    }
    widths.push_back(p.value().cols());
    total += p.value().cols();
  }
  Tensor out({n, total});
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const std::size_t w = p.value().cols();
    for (std::size_t i = 0; i < n; ++i) std::copy_n(p.value().raw() + i * w, w, out.raw() + i * total + offset);
    offset += w;
  }
  return tape.record("concat_cols", std::move(out), std::vector<Var>(parts.begin(), parts.end()),
                     [n, total, widths = std::move(widths)](const Tensor& g, std::span<Tensor* const> grads) {
                       std::size_t off = 0;
                       for (std::size_t k = 0; k < grads.size(); ++k) {
                         const std::size_t w = widths[k];
                         if (grads[k] != nullptr) {
                           for (std::size_t i = 0; i < n; ++i) {
                             Scalar* dst = grads[k]->raw() + i * w;
                             const Scalar* src = g.raw() + i * total + off;
                             for (std::size_t j = 0; j < w; ++j) dst[j] += src[j];
                           }
                         }
                         off += w;
                       }
                     });
}

// ---------------------------------------------------------------- oracle

double finite_diff_check(const TapeFunction& f, const Tensor& x, double h, Stencil stencil) {
  if (!(h > 0)) throw ContractError("finite_diff_check: h must be positive");

  auto evaluate = [&f](const Tensor& at) {
    Tape tape;
    Var out = f(tape, tape.constant(at));
    return static_cast<double>(out.value().item());
  };

  Tensor analytic;
  double base = 0;
  {
    Tape tape;
    Var input = tape.parameter(x);
    Var out = f(tape, input);
    if (out.value().size() != 1) throw ContractError("finite_diff_check: f must be scalar-valued");
    base = out.value().item();
    tape.backward(out);
    analytic = input.grad();
  }
  if (evaluate(x) != base) {
    throw OracleInvalidError("finite_diff_check: f is not deterministic at x");
  }

  double worst = 0;
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const Scalar original = probe[i];
    auto at = [&](double offset) {
      probe[i] = static_cast<Scalar>(original + offset);
      const double v = evaluate(probe);
      probe[i] = original;
      return v;
    };
    const double near = at(h) - at(-h);
    const double numeric = stencil == Stencil::kSecondOrder ? near / (2.0 * h)
                                                            : (8.0 * near - (at(2 * h) - at(-2 * h))) / (12.0 * h);
    const double a = analytic[i];
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(a - numeric) / denom);
  }
  return worst;
}

}  // namespace lungvit
