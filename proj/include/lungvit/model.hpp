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

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lungvit/autograd.hpp"
#include "lungvit/features.hpp"
#include "lungvit/tensor.hpp"

namespace lungvit {

struct ModelConfig {
  int layers = 12;
  int heads = 12;
  int embed_dim = 768;
  int mlp_dim = 3072;
  int num_classes = 4;
  /// Input spectrogram geometry; fixes the patch count and pos_embed length.
  int mel_bins = 128;
  int frames = 1000;
  double init_std = 0.02;

  static ModelConfig paper(int mel_bins = 128, int frames = 1000);
  static ModelConfig toy(int mel_bins = 128, int frames = 1000);

  int head_dim() const { return embed_dim / heads; }
  PatchGrid grid() const { return patch_grid(static_cast<std::size_t>(mel_bins), static_cast<std::size_t>(frames)); }
  std::size_t n_patches() const { return grid().count(); }
  std::size_t seq_len() const { return n_patches() + 2; }
  /// Throws ConfigError on non-positive dims, d % h != 0 or a class count other than 4.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

inline constexpr std::size_t kPatchDim = PatchGrid::kPatch * PatchGrid::kPatch;

template <class T>
struct LayerParams {
  T ln1_gain, ln1_bias;
  /// [d × 3d]: Q | K | V thirds; head i uses columns [i·D_k, (i+1)·D_k) of each third.
  T qkv;
  T proj;
  T ln2_gain, ln2_bias;
  T fc1, fc1_bias;
  T fc2, fc2_bias;

  template <class Self, class F>
  static void walk(Self& s, const std::string& prefix, F&& f) {
    f(prefix + "ln1.gain", s.ln1_gain);
    f(prefix + "ln1.bias", s.ln1_bias);
    f(prefix + "attn.qkv", s.qkv);
    f(prefix + "attn.proj", s.proj);
    f(prefix + "ln2.gain", s.ln2_gain);
    f(prefix + "ln2.bias", s.ln2_bias);
    f(prefix + "mlp.fc1", s.fc1);
    f(prefix + "mlp.fc1_bias", s.fc1_bias);
    f(prefix + "mlp.fc2", s.fc2);
    f(prefix + "mlp.fc2_bias", s.fc2_bias);
  }
};

/// Every trainable tensor of the network, generic over the storage type so
/// the same layout serves plain tensors and tape handles.
template <class T>
struct ParamSet {
  T patch_embed;  // [256 × d]
  T cls_token;    // [d]
  T dist_token;   // [d]
  T pos_embed;    // [(N+2) × d]
  std::vector<LayerParams<T>> layers;
  T final_ln_gain, final_ln_bias;
  T head_token;  // [d × m]
  T head_dist;   // [d × m]

  /// Calls f(name, tensor) in a fixed order shared by init, optimizers and
  /// checkpoints.
  template <class F>
  void visit(F&& f) {
    walk(*this, f);
  }
  template <class F>
  void visit(F&& f) const {
    walk(*this, f);
  }

 private:
  template <class Self, class F>
  static void walk(Self& s, F& f) {
    f(std::string("patch_embed"), s.patch_embed);
    f(std::string("cls_token"), s.cls_token);
    f(std::string("dist_token"), s.dist_token);
    f(std::string("pos_embed"), s.pos_embed);
    for (std::size_t i = 0; i < s.layers.size(); ++i)
      LayerParams<T>::walk(s.layers[i], "layer" + std::to_string(i) + ".", f);
    f(std::string("final_ln.gain"), s.final_ln_gain);
    f(std::string("final_ln.bias"), s.final_ln_bias);
    f(std::string("head_token"), s.head_token);
    f(std::string("head_dist"), s.head_dist);
  }
};

using ModelParams = ParamSet<Tensor>;
using BoundParams = ParamSet<Var>;

/// Shapes of every parameter, in visit order.
std::vector<std::pair<std::string, Shape>> param_shapes(const ModelConfig& cfg);
std::size_t param_count(const ModelConfig& cfg);

/// Truncated normal (±2σ, σ = init_std) for weights, tokens and positions;
/// zeros for biases; ones for LN gains.
ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed);
/// Throws ContractError naming the first tensor whose shape disagrees with cfg.
void check_params(const ModelParams& params, const ModelConfig& cfg);

/// Records every tensor as a borrowed leaf. `params` must outlive the tape.
BoundParams bind(Tape& tape, const ModelParams& params, bool trainable);

/// [N × 256]: 16×16 windows at stride 10, frequency-major, each flattened
/// row-major (frequency, then time).
Tensor extract_patches(const Tensor& spec);

/// [N+2 × d]: cls, dist, then E-projected patches, plus positions.
Var patchify_embed(Tape& tape, const Tensor& spec, const BoundParams& p, const ModelConfig& cfg);

/// Single head: [Q, K, V] = z·u_qkv; softmax(Q·Kᵀ/√D_k)·V.
Var self_attention(Var z, Var u_qkv, std::size_t head_dim);
/// Concatenated heads projected by `proj`.
Var multi_head_attention(Var z, Var qkv, Var proj, std::size_t heads);
/// Pre-norm block: z + MSA(LN(z)), then + MLP(LN(·)).
Var encoder_layer(Var z, const LayerParams<Var>& p, std::size_t heads);

struct ForwardOutput {
  Var logits_token;
  Var logits_dist;
  /// Mean of the two heads, used for prediction.
  Var logits_final;
};

/// Encoder stack, final LN on the two token rows, and both heads, starting
/// from an embedded sequence z0 [n × d].
ForwardOutput classify_sequence(Var z0, const BoundParams& p, const ModelConfig& cfg);
ForwardOutput forward(Tape& tape, const Tensor& spec, const BoundParams& p, const ModelConfig& cfg);

struct Logits {
  Tensor token, dist, final;
};

/// Gradient-free forward on a parameter snapshot; reentrant.
Logits infer(const Tensor& spec, const ModelParams& params, const ModelConfig& cfg);

/// argmax with ties resolved toward the lowest index.
int predict(std::span<const Scalar> logits);

/// Softmax of one logit row, computed in double with max subtraction.
std::vector<double> class_probabilities(std::span<const Scalar> logits);

}  // namespace lungvit
