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
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lungvit/audio.hpp"
#include "lungvit/dataset.hpp"
#include "lungvit/features.hpp"
#include "lungvit/metrics.hpp"
#include "lungvit/model.hpp"

namespace lungvit {

enum class OptimizerKind { kAdam, kSgdMomentum };

struct TrainConfig {
  int batch_size = 8;
  int epochs = 50;
  double learning_rate = 3e-4;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  /// Used by kSgdMomentum.
  double momentum = 0.9;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;
  int eval_every = 1;
  /// Inverse-frequency class weights in the loss.
  bool class_weighting = false;

  /// Throws ConfigError naming the offending field.
  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

std::string_view to_string(OptimizerKind kind);
OptimizerKind optimizer_from_name(std::string_view name);

/// One labelled spectrogram, normalized and ready for the model, with the
/// patient it came from.
struct Example {
  Tensor spec;
  int label = 0;
  int patient = 0;
};

/// First and second moments, one tensor per parameter in visit order.
struct OptimizerState {
  std::uint64_t step = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
};

OptimizerState init_optimizer(const ModelParams& params);

/// Flat gradient list in parameter visit order.
using Gradients = std::vector<Tensor>;

struct StepResult {
  double loss = 0.0;
  double max_abs_grad = 0.0;
};

/// Mean over the batch of CE(token head) + CE(dist head), optionally class
/// weighted, and its gradient. Samples run on their own tapes; gradients
/// are summed in batch order.
std::pair<StepResult, Gradients> batch_loss_and_grad(const ModelParams& params, std::span<const Example* const> batch,
                                                     const ModelConfig& cfg,
                                                     std::span<const double> class_weights = {});

/// One optimizer update. Throws NumericError when the loss is not finite.
void apply_update(ModelParams& params, const Gradients& grads, OptimizerState& state, const TrainConfig& cfg);

/// batch_loss_and_grad followed by apply_update.
StepResult train_step(ModelParams& params, OptimizerState& state, std::span<const Example* const> batch,
                      const ModelConfig& cfg, const TrainConfig& tcfg, std::span<const double> class_weights = {});

ConfusionMatrix evaluate(std::span<const Example> examples, const ModelParams& params, const ModelConfig& cfg);

/// A cycle's audio at the feature rate, with its label and patient.
struct Instance {
  Waveform audio;
  int label = 0;
  int patient = 0;
  std::string id;
};

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;
  /// Empty when the epoch was not evaluated or a metric was undefined.
  std::optional<double> sensitivity, specificity, score, uar;
  bool operator==(const EpochRecord&) const = default;
};

/// Everything needed to continue training bit-identically. Data order and
/// crop offsets are derived from (seed, epoch), so the epoch counter is the
/// only stream state.
struct RunState {
  int epoch = 0;
  ModelParams params;
  OptimizerState optimizer;
  std::vector<EpochRecord> history;
  std::optional<double> best_score;
  int best_epoch = 0;
  ModelParams best_params;
  NormStats norm;
};

struct TrainHooks {
  /// Called after every epoch with the updated state.
  std::function<void(const RunState&)> on_epoch;
};

struct TrainResult {
  RunState state;
  /// Parameters selected by validation Score, or the final ones when no
  /// epoch produced a Score.
  const ModelParams& best() const { return state.best_score ? state.best_params : state.params; }
};

/// Featurized, fixed-length spectrogram of one instance.
Tensor featurize(const Instance& inst, const FeatureExtractor& fx, const FixDurationPolicy& policy);

/// Normalization statistics from fixed-start training spectrograms.
NormStats training_norm_stats(std::span<const Instance> train, const FeatureExtractor& fx,
                              const FixDurationPolicy& policy);

/// Full training loop. Training instances are cropped at random per
/// (seed, epoch, instance); evaluation instances at the fixed start. A
/// training instance from an evaluation patient is a hard failure.
TrainResult train(std::span<const Instance> train_set, std::span<const Instance> eval_set, const SplitSpec& split,
                  const ModelConfig& mcfg, const FeatureConfig& fcfg, const FixDurationPolicy& policy,
                  const TrainConfig& tcfg, const TrainHooks& hooks = {}, std::optional<RunState> resume = {});

}  // namespace lungvit
