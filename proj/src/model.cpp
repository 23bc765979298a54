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

#include "lungvit/model.hpp"

#include <algorithm>
#include <cmath>

#include "lungvit/common.hpp"
#include "lungvit/dataset.hpp"
#include "lungvit/rng.hpp"

namespace lungvit {

ModelConfig ModelConfig::paper(int mel_bins, int frames) {
  ModelConfig c;
  c.mel_bins = mel_bins;
  c.frames = frames;
  return c;
}

ModelConfig ModelConfig::toy(int mel_bins, int frames) {
  ModelConfig c;
  c.layers = 2;
  c.heads = 4;
  c.embed_dim = 32;
  c.mlp_dim = 64;
  c.mel_bins = mel_bins;
  c.frames = frames;
  return c;
}

void ModelConfig::validate() const {
  if (layers < 0 || heads <= 0 || embed_dim <= 0 || mlp_dim <= 0) {
    throw ConfigError("model: layers must be >= 0 and heads, embed_dim, mlp_dim positive");
  }
  if (embed_dim % heads != 0) {
    throw ConfigError("model: embed_dim " + std::to_string(embed_dim) + " is not divisible by heads " +
                      std::to_string(heads));
  }
  if (num_classes != kNumClasses) throw ConfigError("model: num_classes must be 4");
  if (mel_bins < static_cast<int>(PatchGrid::kPatch) || frames < static_cast<int>(PatchGrid::kPatch)) {
    throw ConfigError("model: input " + std::to_string(mel_bins) + "x" + std::to_string(frames) +
                      " is smaller than one 16x16 patch");
  }
  if (!(init_std > 0)) throw ConfigError("model: init_std must be positive");
}

std::vector<std::pair<std::string, Shape>> param_shapes(const ModelConfig& cfg) {
  cfg.validate();
  const std::size_t d = static_cast<std::size_t>(cfg.embed_dim);
  const std::size_t mlp = static_cast<std::size_t>(cfg.mlp_dim);
  const std::size_t m = static_cast<std::size_t>(cfg.num_classes);
  ParamSet<Shape> s;
  s.patch_embed = {kPatchDim, d};
  s.cls_token = {d};
  s.dist_token = {d};
  s.pos_embed = {cfg.seq_len(), d};
  s.layers.resize(static_cast<std::size_t>(cfg.layers));
  for (auto& l : s.layers) {
    l.ln1_gain = l.ln1_bias = l.ln2_gain = l.ln2_bias = {d};
    l.qkv = {d, 3 * d};
    l.proj = {d, d};
    l.fc1 = {d, mlp};
    l.fc1_bias = {mlp};
    l.fc2 = {mlp, d};
    l.fc2_bias = {d};
  }
  s.final_ln_gain = s.final_ln_bias = {d};
  s.head_token = s.head_dist = {d, m};
  std::vector<std::pair<std::string, Shape>> out;
  s.visit([&](const std::string& name, const Shape& shape) { out.emplace_back(name, shape); });
  return out;
}

std::size_t param_count(const ModelConfig& cfg) {
  std::size_t n = 0;
  for (const auto& [name, shape] : param_shapes(cfg)) n += shape_size(shape);
  return n;
}

namespace {

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
  const auto shapes = param_shapes(cfg);
  ModelParams p;
  p.layers.resize(static_cast<std::size_t>(cfg.layers));
  Rng rng(seed);
  std::size_t i = 0;
  p.visit([&](const std::string& name, Tensor& t) {
    t = Tensor(shapes[i++].second);
    if (ends_with(name, ".gain")) {
      t.fill(1);
    } else if (!ends_with(name, "bias")) {
      for (auto& v : t.data()) v = static_cast<Scalar>(cfg.init_std * rng.truncated_normal());
    }
  });
  return p;
}

void check_params(const ModelParams& params, const ModelConfig& cfg) {
  if (params.layers.size() != static_cast<std::size_t>(cfg.layers)) {
    throw ContractError("model params have " + std::to_string(params.layers.size()) + " layers, config expects " +
                        std::to_string(cfg.layers));
  }
  const auto shapes = param_shapes(cfg);
  std::size_t i = 0;
  params.visit([&](const std::string& name, const Tensor& t) {
    if (t.shape() != shapes[i].second) {
      throw ContractError("model param " + name + " has shape " + shape_string(t.shape()) + ", config expects " +
                          shape_string(shapes[i].second));
    }
    ++i;
  });
}

BoundParams bind(Tape& tape, const ModelParams& params, bool trainable) {
  BoundParams b;
  b.layers.resize(params.layers.size());
  std::vector<const Tensor*> flat;
  params.visit([&](const std::string&, const Tensor& t) { flat.push_back(&t); });
  std::size_t i = 0;
  b.visit([&](const std::string&, Var& v) {
    v = trainable ? tape.parameter_ref(*flat[i]) : tape.constant_ref(*flat[i]);
    ++i;
  });
  return b;
}

Tensor extract_patches(const Tensor& spec) {
  if (spec.rank() != 2) throw DimensionError("extract_patches: expected a matrix, got " + shape_string(spec.shape()));
  const std::size_t rows = spec.rows(), cols = spec.cols();
  const PatchGrid g = patch_grid(rows, cols);
  constexpr std::size_t P = PatchGrid::kPatch, S = PatchGrid::kStride;
  Tensor out({g.count(), kPatchDim});
  Scalar* dst = out.raw();
  for (std::size_t pf = 0; pf < g.n_freq; ++pf)
    for (std::size_t pt = 0; pt < g.n_time; ++pt)
      for (std::size_t r = 0; r < P; ++r) {
        const Scalar* src = spec.raw() + (pf * S + r) * cols + pt * S;
        for (std::size_t c = 0; c < P; ++c) *dst++ = src[c];
      }
  return out;
}

Var patchify_embed(Tape& tape, const Tensor& spec, const BoundParams& p, const ModelConfig& cfg) {
  if (spec.rank() != 2 || spec.rows() != static_cast<std::size_t>(cfg.mel_bins) ||
      spec.cols() != static_cast<std::size_t>(cfg.frames)) {
    throw ContractError("spectrogram " + shape_string(spec.shape()) + " does not match the model geometry [" +
                        std::to_string(cfg.mel_bins) + "x" + std::to_string(cfg.frames) + "]");
  }
  const Var patches = tape.constant(extract_patches(spec));
  const Var embedded = matmul(patches, p.patch_embed);
  const Var parts[] = {p.cls_token, p.dist_token, embedded};
  return add(concat_rows(parts), p.pos_embed);
}

namespace {

Var attend(Var q, Var k, Var v, std::size_t head_dim) {
  const Scalar scale_factor = Scalar(1) / std::sqrt(static_cast<Scalar>(head_dim));
  const Var a = softmax_rows(scale(matmul(q, transpose(k)), scale_factor));
  return matmul(a, v);
}

}  // namespace

Var self_attention(Var z, Var u_qkv, std::size_t head_dim) {
  if (u_qkv.value().cols() != 3 * head_dim) {
    throw DimensionError("self_attention: U_QKV " + shape_string(u_qkv.shape()) + " is not [d x 3*" +
                         std::to_string(head_dim) + "]");
  }
  const Var qkv = matmul(z, u_qkv);
  return attend(slice_cols(qkv, 0, head_dim), slice_cols(qkv, head_dim, head_dim),
                slice_cols(qkv, 2 * head_dim, head_dim), head_dim);
}

Var multi_head_attention(Var z, Var qkv_w, Var proj, std::size_t heads) {
  const std::size_t d = z.value().cols();
  if (heads == 0 || d % heads != 0) throw DimensionError("multi_head_attention: width not divisible by heads");
  if (qkv_w.value().cols() != 3 * d) {
    throw DimensionError("multi_head_attention: fused QKV " + shape_string(qkv_w.shape()) + " for width " +
                         std::to_string(d));
  }
  const std::size_t dk = d / heads;
  const Var qkv = matmul(z, qkv_w);
  std::vector<Var> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    outs.push_back(attend(slice_cols(qkv, h * dk, dk), slice_cols(qkv, d + h * dk, dk),
                          slice_cols(qkv, 2 * d + h * dk, dk), dk));
  }
  const Var cat = heads == 1 ? outs[0] : concat_cols(outs);
  return matmul(cat, proj);
}

Var encoder_layer(Var z, const LayerParams<Var>& p, std::size_t heads) {
  const Var z1 = add(z, multi_head_attention(layer_norm(z, p.ln1_gain, p.ln1_bias), p.qkv, p.proj, heads));
  const Var hidden = gelu(add_bias(matmul(layer_norm(z1, p.ln2_gain, p.ln2_bias), p.fc1), p.fc1_bias));
  return add(z1, add_bias(matmul(hidden, p.fc2), p.fc2_bias));
}

ForwardOutput classify_sequence(Var z0, const BoundParams& p, const ModelConfig& cfg) {
  if (p.layers.size() != static_cast<std::size_t>(cfg.layers)) {
    throw ContractError("forward: bound params have " + std::to_string(p.layers.size()) + " layers, config " +
                        std::to_string(cfg.layers));
  }
  Var z = z0;
  for (const auto& layer : p.layers) z = encoder_layer(z, layer, static_cast<std::size_t>(cfg.heads));
  const Var y = layer_norm(slice_rows(z, 0, 2), p.final_ln_gain, p.final_ln_bias);
  ForwardOutput out;
  out.logits_token = matmul(slice_rows(y, 0, 1), p.head_token);
  out.logits_dist = matmul(slice_rows(y, 1, 1), p.head_dist);
  out.logits_final = scale(add(out.logits_token, out.logits_dist), Scalar(0.5));
  return out;
}

ForwardOutput forward(Tape& tape, const Tensor& spec, const BoundParams& p, const ModelConfig& cfg) {
  return classify_sequence(patchify_embed(tape, spec, p, cfg), p, cfg);
}

Logits infer(const Tensor& spec, const ModelParams& params, const ModelConfig& cfg) {
  Tape tape;
  const BoundParams b = bind(tape, params, false);
  const ForwardOutput out = forward(tape, spec, b, cfg);
  return Logits{out.logits_token.value(), out.logits_dist.value(), out.logits_final.value()};
}

int predict(std::span<const Scalar> logits) {
  if (logits.empty()) throw ContractError("predict: empty logits");
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i)
    if (logits[i] > logits[best]) best = i;
  return static_cast<int>(best);
}

std::vector<double> class_probabilities(std::span<const Scalar> logits) {
  if (logits.empty()) throw ContractError("class_probabilities: empty logits");
  double top = static_cast<double>(logits[0]);
  for (Scalar v : logits) top = std::max(top, static_cast<double>(v));
  std::vector<double> p(logits.size());
  double total = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) total += p[i] = std::exp(static_cast<double>(logits[i]) - top);
  for (auto& v : p) v /= total;
  return p;
}

}  // namespace lungvit
