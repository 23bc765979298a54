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

#include "lungvit/training.hpp"

#include <cmath>
#include <numeric>

#include "lungvit/common.hpp"
#include "lungvit/rng.hpp"

namespace lungvit {

namespace {

// Stream ids for derive_seed.
constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kOrderStream = 2;
constexpr std::uint64_t kCropStream = 3;

// Training spectrograms that never change between epochs are kept in
// memory up to this many bytes.
constexpr std::size_t kStaticCacheBytes = std::size_t{1} << 30;

std::vector<Tensor*> flat_params(ModelParams& p) {
  std::vector<Tensor*> out;
  p.visit([&](const std::string&, Tensor& t) { out.push_back(&t); });
  return out;
}

std::vector<double> inverse_frequency_weights(std::span<const Instance> train) {
  std::array<std::size_t, kNumClasses> counts{};
  for (const auto& inst : train) ++counts[static_cast<std::size_t>(inst.label)];
  std::vector<double> w(kNumClasses, 1.0);
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] > 0) w[c] = static_cast<double>(train.size()) / (kNumClasses * static_cast<double>(counts[c]));
  }
  return w;
}

template <class F>
std::optional<double> defined_or_empty(F&& f) {
  try {
    return f();
  } catch (const UndefinedMetricError&) {
    return std::nullopt;
  }
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (epochs < 0) throw ConfigError("train.epochs must be >= 0");
  if (!(learning_rate > 0) || !std::isfinite(learning_rate)) throw ConfigError("train.learning_rate must be positive");
  if (!(beta1 >= 0 && beta1 < 1)) throw ConfigError("train.beta1 must be in [0, 1)");
  if (!(beta2 >= 0 && beta2 < 1)) throw ConfigError("train.beta2 must be in [0, 1)");
  if (!(adam_eps > 0)) throw ConfigError("train.adam_eps must be positive");
  if (!(momentum >= 0 && momentum < 1)) throw ConfigError("train.momentum must be in [0, 1)");
  if (!(weight_decay >= 0)) throw ConfigError("train.weight_decay must be >= 0");
  if (eval_every < 1) throw ConfigError("train.eval_every must be >= 1");
}

std::string_view to_string(OptimizerKind kind) { return kind == OptimizerKind::kAdam ? "adam" : "sgd_momentum"; }

OptimizerKind optimizer_from_name(std::string_view name) {
  if (name == "adam") return OptimizerKind::kAdam;
  if (name == "sgd_momentum") return OptimizerKind::kSgdMomentum;
  throw ConfigError("train.optimizer must be \"adam\" or \"sgd_momentum\", got \"" + std::string(name) + "\"");
}

OptimizerState init_optimizer(const ModelParams& params) {
  OptimizerState s;
  params.visit([&](const std::string&, const Tensor& t) {
    s.m.emplace_back(t.shape());
    s.v.emplace_back(t.shape());
  });
  return s;
}

std::pair<StepResult, Gradients> batch_loss_and_grad(const ModelParams& params, std::span<const Example* const> batch,
                                                     const ModelConfig& cfg, std::span<const double> class_weights) {
  if (batch.empty()) throw ContractError("train_step: empty batch");
  double weight_total = 0;
  std::vector<double> weights(batch.size(), 1.0);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const int label = batch[i]->label;
    if (label < 0 || label >= kNumClasses) {
      throw ContractError("train_step: label " + std::to_string(label) + " outside [0, 4)");
    }
    if (!class_weights.empty()) weights[i] = class_weights[static_cast<std::size_t>(label)];
    weight_total += weights[i];
  }

  Gradients grads;
  params.visit([&](const std::string&, const Tensor& t) { grads.emplace_back(t.shape()); });
  StepResult result;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    Tape tape;
    const BoundParams bound = bind(tape, params, true);
    const ForwardOutput out = forward(tape, batch[i]->spec, bound, cfg);
    const int labels[] = {batch[i]->label};
    const Var loss = add(cross_entropy(out.logits_token, labels), cross_entropy(out.logits_dist, labels));
    const double share = weights[i] / weight_total;
    result.loss += share * static_cast<double>(loss.value().item());
    tape.backward(loss);
    std::size_t j = 0;
    bound.visit([&](const std::string&, const Var& v) {
      const Tensor& g = v.grad();
      Scalar* dst = grads[j++].raw();
      for (std::size_t k = 0; k < g.size(); ++k) dst[k] += static_cast<Scalar>(share * g[k]);
    });
  }
  for (const auto& g : grads)
    for (Scalar v : g.data()) result.max_abs_grad = std::max(result.max_abs_grad, std::abs(static_cast<double>(v)));
  return {result, std::move(grads)};
}

void apply_update(ModelParams& params, const Gradients& grads, OptimizerState& state, const TrainConfig& cfg) {
  auto flat = flat_params(params);
  if (flat.size() != grads.size() || state.m.size() != flat.size() || state.v.size() != flat.size()) {
    throw ContractError("apply_update: parameter, gradient and optimizer state counts differ");
  }
  ++state.step;
  const double lr = cfg.learning_rate;
  const double t = static_cast<double>(state.step);
  const double bias1 = 1.0 - std::pow(cfg.beta1, t);
  const double bias2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t j = 0; j < flat.size(); ++j) {
    Tensor& p = *flat[j];
    const Tensor& g = grads[j];
    Tensor& m = state.m[j];
    Tensor& v = state.v[j];
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double gk = static_cast<double>(g[k]) + cfg.weight_decay * static_cast<double>(p[k]);
      if (cfg.optimizer == OptimizerKind::kAdam) {
        const double mk = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * gk;
        const double vk = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * gk * gk;
        m[k] = static_cast<Scalar>(mk);
        v[k] = static_cast<Scalar>(vk);
        p[k] -= static_cast<Scalar>(lr * (mk / bias1) / (std::sqrt(vk / bias2) + cfg.adam_eps));
      } else {
        const double mk = cfg.momentum * m[k] + gk;
        m[k] = static_cast<Scalar>(mk);
        p[k] -= static_cast<Scalar>(lr * mk);
      }
    }
  }
}

StepResult train_step(ModelParams& params, OptimizerState& state, std::span<const Example* const> batch,
                      const ModelConfig& cfg, const TrainConfig& tcfg, std::span<const double> class_weights) {
  auto [result, grads] = batch_loss_and_grad(params, batch, cfg, class_weights);
  if (!std::isfinite(result.loss)) {
    throw NumericError("non-finite training loss (max |grad| = " + std::to_string(result.max_abs_grad) + ")");
  }
  apply_update(params, grads, state, tcfg);
  return result;
}

ConfusionMatrix evaluate(std::span<const Example> examples, const ModelParams& params, const ModelConfig& cfg) {
  ConfusionMatrix cm;
  for (const auto& ex : examples) {
    const Logits logits = infer(ex.spec, params, cfg);
    cm.add(ex.label, predict(logits.final.data()));
  }
  return cm;
}

Tensor featurize(const Instance& inst, const FeatureExtractor& fx, const FixDurationPolicy& policy) {
  if (inst.audio.sample_rate_hz != fx.config().sample_rate_hz) {
    throw ContractError("instance " + inst.id + " is at " + std::to_string(inst.audio.sample_rate_hz) +
                        " Hz; features expect " + std::to_string(fx.config().sample_rate_hz) + " Hz");
  }
  return fx(fix_duration(inst.audio, policy));
}

NormStats training_norm_stats(std::span<const Instance> train, const FeatureExtractor& fx,
                              const FixDurationPolicy& policy) {
  if (train.empty()) throw ContractError("normalization statistics need at least one training instance");
  FixDurationPolicy fixed = policy;
  fixed.mode = CropMode::kFixedStart;
  // Streaming two-pass form of compute_norm_stats, so the corpus never has
  // to sit in memory at once.
  double total = 0;
  std::size_t count = 0;
  for (const auto& inst : train) {
    const Tensor s = featurize(inst, fx, fixed);
    for (Scalar v : s.data()) total += v;
    count += s.size();
  }
  const double mean = total / static_cast<double>(count);
  double sq = 0;
  for (const auto& inst : train) {
    const Tensor s = featurize(inst, fx, fixed);
    for (Scalar v : s.data()) sq += (v - mean) * (v - mean);
  }
  return NormStats{mean, std::sqrt(sq / static_cast<double>(count)), SplitRole::kTrain};
}

TrainResult train(std::span<const Instance> train_set, std::span<const Instance> eval_set, const SplitSpec& split,
                  const ModelConfig& mcfg, const FeatureConfig& fcfg, const FixDurationPolicy& policy,
                  const TrainConfig& tcfg, const TrainHooks& hooks, std::optional<RunState> resume) {
  tcfg.validate();
  mcfg.validate();
  const FeatureExtractor fx(fcfg);
  const std::size_t frames = fx.output_frames(target_length(policy, fx.config().sample_rate_hz));
  if (static_cast<std::size_t>(mcfg.frames) != frames ||
      static_cast<std::size_t>(mcfg.mel_bins) != static_cast<std::size_t>(fx.config().mel_bins)) {
    throw ConfigError("model input " + std::to_string(mcfg.mel_bins) + "x" + std::to_string(mcfg.frames) +
                      " does not match the feature geometry " + std::to_string(fx.config().mel_bins) + "x" +
                      std::to_string(frames));
  }

  TrainResult result;
  RunState& state = result.state;
  if (resume) {
    state = std::move(*resume);
    check_params(state.params, mcfg);
  } else {
    state.params = init_params(mcfg, derive_seed(tcfg.seed, kInitStream));
    state.optimizer = init_optimizer(state.params);
    if (tcfg.epochs > 0) state.norm = training_norm_stats(train_set, fx, policy);
  }
  if (state.epoch >= tcfg.epochs) return result;

  FixDurationPolicy fixed = policy;
  fixed.mode = CropMode::kFixedStart;
  FixDurationPolicy crop = policy;
  crop.mode = CropMode::kRandomCrop;
  const std::size_t target = target_length(policy, fx.config().sample_rate_hz);

  // Instances no longer than the target are identical every epoch.
  std::vector<std::optional<Tensor>> static_specs(train_set.size());
  std::size_t cached_bytes = 0;
  for (std::size_t i = 0; i < train_set.size(); ++i) {
    if (train_set[i].audio.samples.size() > target) continue;
    const std::size_t bytes = static_cast<std::size_t>(mcfg.mel_bins) * frames * sizeof(Scalar);
    if (cached_bytes + bytes > kStaticCacheBytes) break;
    static_specs[i] = normalize(featurize(train_set[i], fx, fixed), state.norm);
    cached_bytes += bytes;
  }

  if (eval_set.empty()) warn("evaluation split is empty; history rows will carry no metrics");
  const std::vector<double> class_weights =
      tcfg.class_weighting ? inverse_frequency_weights(train_set) : std::vector<double>{};
  const std::size_t batch_size = static_cast<std::size_t>(tcfg.batch_size);

  for (int epoch = state.epoch + 1; epoch <= tcfg.epochs; ++epoch) {
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);
    Rng(derive_seed(tcfg.seed, kOrderStream, static_cast<std::uint64_t>(epoch))).shuffle(std::span(order));
    const std::uint64_t crop_base = derive_seed(tcfg.seed, kCropStream, static_cast<std::uint64_t>(epoch));

    double loss_sum = 0;
    std::size_t batch_index = 0;
    for (std::size_t first = 0; first < order.size(); first += batch_size, ++batch_index) {
      const std::size_t n = std::min(batch_size, order.size() - first);
      std::vector<Example> batch(n);
      std::vector<const Example*> ptrs(n);
      for (std::size_t b = 0; b < n; ++b) {
        const std::size_t i = order[first + b];
        const Instance& inst = train_set[i];
        if (split.is_eval(inst.patient)) {
          throw ContractError("subject independence violated: evaluation patient " + std::to_string(inst.patient) +
                              " (instance " + inst.id + ") in a training batch");
        }
        batch[b].label = inst.label;
        batch[b].patient = inst.patient;
        if (static_specs[i]) {
          batch[b].spec = *static_specs[i];
        } else {
          crop.rng_seed = derive_seed(crop_base, i);
          batch[b].spec = normalize(featurize(inst, fx, crop), state.norm);
        }
        ptrs[b] = &batch[b];
      }
      auto [step, grads] = batch_loss_and_grad(state.params, ptrs, mcfg, class_weights);
      if (!std::isfinite(step.loss)) {
        throw NumericError("non-finite training loss at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batch_index) + " (max |grad| = " + std::to_string(step.max_abs_grad) + ")");
      }
      apply_update(state.params, grads, state.optimizer, tcfg);
      loss_sum += step.loss * static_cast<double>(n);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.loss = train_set.empty() ? 0.0 : loss_sum / static_cast<double>(train_set.size());
    if (!eval_set.empty() && (epoch % tcfg.eval_every == 0 || epoch == tcfg.epochs)) {
      ConfusionMatrix cm;
      for (const auto& inst : eval_set) {
        const Example ex{normalize(featurize(inst, fx, fixed), state.norm), inst.label, inst.patient};
        cm.merge(evaluate(std::span(&ex, 1), state.params, mcfg));
      }
      rec.sensitivity = defined_or_empty([&] { return sensitivity(cm); });
      rec.specificity = defined_or_empty([&] { return specificity(cm); });
      rec.score = defined_or_empty([&] { return score(cm); });
      rec.uar = defined_or_empty([&] {
        ScopedWarningCapture precision_warnings;
        return uar_and_macro_precision(cm).uar;
      });
      if (rec.score && (!state.best_score || *rec.score > *state.best_score)) {
        state.best_score = rec.score;
        state.best_epoch = epoch;
        state.best_params = state.params;
      }
    }
    state.history.push_back(rec);
    state.epoch = epoch;
    if (hooks.on_epoch) hooks.on_epoch(state);
  }
  return result;
}

}  // namespace lungvit
