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

#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "lungvit/checkpoint.hpp"
#include "lungvit/common.hpp"
#include "lungvit/synth.hpp"
#include "lungvit/training.hpp"

using namespace lungvit;

namespace {

// 0.2 s at 4 kHz gives 20 frames: one patch column.
constexpr double kTargetS = 0.2;

FixDurationPolicy policy() { return FixDurationPolicy{kTargetS, CropMode::kFixedStart, 0.0, 0}; }

ModelConfig tiny_model() { return ModelConfig::toy(128, 20); }

Instance make_instance(int label, int patient, double seconds, std::uint64_t seed) {
  Rng rng(seed);
  Instance inst;
  inst.audio.sample_rate_hz = 4000;
  inst.audio.samples = synth_cycle(static_cast<RespiratoryClass>(label), static_cast<std::size_t>(seconds * 4000),
                                   4000, rng);
  inst.label = label;
  inst.patient = patient;
  inst.id = "p" + std::to_string(patient) + "_" + std::to_string(seed);
  return inst;
}

// Two patients per side, every class present, some instances longer than
// the target so random crops are exercised.
std::vector<Instance> instances(int first_patient, int patients) {
  std::vector<Instance> out;
  std::uint64_t seed = static_cast<std::uint64_t>(first_patient) * 100;
  for (int p = first_patient; p < first_patient + patients; ++p)
    for (int c = 0; c < kNumClasses; ++c) out.push_back(make_instance(c, p, c % 2 ? 0.35 : 0.15, ++seed));
  return out;
}

SplitSpec split_for(std::set<int> train, std::set<int> eval) {
  SplitSpec s;
  s.train_patients = std::move(train);
  s.eval_patients = std::move(eval);
  return s;
}

TrainConfig small_train(int epochs) {
  TrainConfig t;
  t.batch_size = 3;
  t.epochs = epochs;
  t.seed = 7;
  return t;
}

Tensor random_spec(const ModelConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t({static_cast<std::size_t>(cfg.mel_bins), static_cast<std::size_t>(cfg.frames)});
  for (auto& v : t.data()) v = static_cast<Scalar>(rng.normal());
  return t;
}

bool params_equal(const ModelParams& a, const ModelParams& b) {
  std::vector<const Tensor*> flat;
  a.visit([&](const std::string&, const Tensor& t) { flat.push_back(&t); });
  std::size_t i = 0;
  bool same = true;
  b.visit([&](const std::string&, const Tensor& t) { same = same && i < flat.size() && *flat[i++] == t; });
  return same && i == flat.size();
}

}  // namespace

TEST_CASE("train config validation") {
  TrainConfig t;
  CHECK_NOTHROW(t.validate());
  t.batch_size = 0;
  CHECK_THROWS_AS(t.validate(), ConfigError);
  t = {};
  t.learning_rate = 0;
  CHECK_THROWS_AS(t.validate(), ConfigError);
  CHECK(optimizer_from_name("sgd_momentum") == OptimizerKind::kSgdMomentum);
  CHECK_THROWS_AS(optimizer_from_name("rmsprop"), ConfigError);
}

TEST_CASE("a zero learning rate leaves parameters bit-identical") {
  const ModelConfig cfg = ModelConfig::toy(32, 32);
  ModelParams params = init_params(cfg, 3);
  const ModelParams before = params;
  OptimizerState state = init_optimizer(params);
  TrainConfig t;
  t.learning_rate = 0;
  const Example ex{random_spec(cfg, 1), 2, 1};
  const Example* batch[] = {&ex};
  for (auto kind : {OptimizerKind::kAdam, OptimizerKind::kSgdMomentum}) {
    t.optimizer = kind;
    const auto r = train_step(params, state, batch, cfg, t);
    CHECK(std::isfinite(r.loss));
    CHECK(r.max_abs_grad > 0);
    CHECK(params_equal(params, before));
  }
}

TEST_CASE("momentum SGD first step is p - lr * g") {
  const ModelConfig cfg = ModelConfig::toy(32, 32);
  ModelParams params = init_params(cfg, 4);
  const ModelParams before = params;
  const Example ex{random_spec(cfg, 2), 1, 1};
  const Example* batch[] = {&ex};
  auto [res, grads] = batch_loss_and_grad(params, batch, cfg);
  OptimizerState state = init_optimizer(params);
  TrainConfig t;
  t.optimizer = OptimizerKind::kSgdMomentum;
  t.learning_rate = 0.5;
  apply_update(params, grads, state, t);
  std::size_t j = 0;
  std::vector<const Tensor*> old;
  before.visit([&](const std::string&, const Tensor& x) { old.push_back(&x); });
  params.visit([&](const std::string&, const Tensor& p) {
    for (std::size_t k = 0; k < p.size(); ++k) CHECK(p[k] == (*old[j])[k] - static_cast<Scalar>(0.5 * grads[j][k]));
    ++j;
  });
}

TEST_CASE("duplicated batch has the single-sample loss and gradient") {
  const ModelConfig cfg = ModelConfig::toy(32, 32);
  const ModelParams params = init_params(cfg, 5);
  const Example ex{random_spec(cfg, 3), 3, 1};
  const Example* one[] = {&ex};
  const Example* four[] = {&ex, &ex, &ex, &ex};
  auto [r1, g1] = batch_loss_and_grad(params, one, cfg);
  auto [r4, g4] = batch_loss_and_grad(params, four, cfg);
  CHECK(r4.loss == doctest::Approx(r1.loss).epsilon(1e-13));
  for (std::size_t j = 0; j < g1.size(); ++j)
    for (std::size_t k = 0; k < g1[j].size(); ++k) CHECK(std::abs(g4[j][k] - g1[j][k]) <= 1e-12 * (1 + std::abs(g1[j][k])));
}

TEST_CASE("class weights rescale the batch mean") {
  const ModelConfig cfg = ModelConfig::toy(32, 32);
  const ModelParams params = init_params(cfg, 6);
  const Example a{random_spec(cfg, 4), 0, 1};
  const Example b{random_spec(cfg, 5), 1, 1};
  const Example* only_a[] = {&a};
  const Example* only_b[] = {&b};
  const Example* both[] = {&a, &b};
  const double la = batch_loss_and_grad(params, only_a, cfg).first.loss;
  const double lb = batch_loss_and_grad(params, only_b, cfg).first.loss;
  const double w[] = {3.0, 1.0, 1.0, 1.0};
  CHECK(batch_loss_and_grad(params, both, cfg).first.loss == doctest::Approx((la + lb) / 2).epsilon(1e-13));
  CHECK(batch_loss_and_grad(params, both, cfg, w).first.loss == doctest::Approx(0.75 * la + 0.25 * lb).epsilon(1e-13));
}

TEST_CASE("single-sample memorization in 200 steps") {
  const ModelConfig cfg = ModelConfig::toy(32, 32);
  ModelParams params = init_params(cfg, 8);
  OptimizerState state = init_optimizer(params);
  TrainConfig t;
  // The default 3e-4 needs far more than 200 steps from a 0.02-std init.
  t.learning_rate = 3e-3;
  const Example ex{random_spec(cfg, 6), 2, 1};
  const Example* batch[] = {&ex};
  double first = 0, loss = 0;
  for (int step = 0; step < 200; ++step) {
    loss = train_step(params, state, batch, cfg, t).loss;
    if (step == 0) first = loss;
  }
  CHECK(first > 2.0);
  CHECK(batch_loss_and_grad(params, batch, cfg).first.loss < 0.01);
}

TEST_CASE("train_step rejects bad batches and non-finite losses") {
  const ModelConfig cfg = ModelConfig::toy(32, 32);
  ModelParams params = init_params(cfg, 9);
  OptimizerState state = init_optimizer(params);
  const TrainConfig t;
  CHECK_THROWS_AS(train_step(params, state, std::span<const Example* const>{}, cfg, t), ContractError);
  const Example bad_label{random_spec(cfg, 7), 4, 1};
  const Example* b1[] = {&bad_label};
  CHECK_THROWS_AS(train_step(params, state, b1, cfg, t), ContractError);
  Example nan{random_spec(cfg, 8), 0, 1};
  nan.spec[5] = std::nan("");
  const Example* b2[] = {&nan};
  const ModelParams before = params;
  CHECK_THROWS_AS(train_step(params, state, b2, cfg, t), NumericError);
  CHECK(params_equal(params, before));
}

TEST_CASE("evaluate: zero model predicts Normal and counts are conserved") {
  const ModelConfig cfg = ModelConfig::toy(32, 32);
  ModelParams zero = init_params(cfg, 1);
  zero.visit([](const std::string&, Tensor& t) { t.fill(0); });
  std::vector<Example> exs;
  for (int i = 0; i < 9; ++i) exs.push_back({random_spec(cfg, 100 + i), i % 4, 1});
  const ConfusionMatrix cm = evaluate(exs, zero, cfg);
  CHECK(cm.total() == exs.size());
  CHECK(cm.column_total(0) == exs.size());

  const ModelParams random = init_params(cfg, 2);
  CHECK(evaluate(exs, random, cfg).total() == exs.size());
}

TEST_CASE("train: zero epochs returns the initial parameters") {
  const auto tr = instances(1, 2);
  const auto split = split_for({1, 2}, {});
  const auto r = train(tr, {}, split, tiny_model(), FeatureConfig{}, policy(), small_train(0));
  CHECK(r.state.history.empty());
  CHECK(r.state.epoch == 0);
  CHECK(params_equal(r.state.params, init_params(tiny_model(), derive_seed(7, 1))));
  CHECK(params_equal(r.best(), r.state.params));
}

TEST_CASE("train: geometry and subject-independence checks") {
  const auto tr = instances(1, 2);
  CHECK_THROWS_AS(train(tr, {}, split_for({1, 2}, {}), ModelConfig::toy(128, 40), FeatureConfig{}, policy(),
                        small_train(1)),
                  ConfigError);
  try {
    train(tr, {}, split_for({1}, {2}), tiny_model(), FeatureConfig{}, policy(), small_train(1));
    FAIL("expected a subject-independence failure");
  } catch (const ContractError& e) {
    CHECK(std::string(e.what()).find("subject independence violated: evaluation patient 2") != std::string::npos);
  }
}

TEST_CASE("train: non-finite loss aborts with epoch and batch") {
  auto tr = instances(1, 1);
  const FeatureConfig fc;
  const FeatureExtractor fx(fc);
  TrainConfig t = small_train(1);
  t.learning_rate = 1e300;
  try {
    train(tr, {}, split_for({1}, {}), tiny_model(), fc, policy(), t);
    FAIL("expected a numeric failure");
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("non-finite training loss at epoch 1, batch 1") != std::string::npos);
    CHECK(msg.find("max |grad|") != std::string::npos);
  }
}

TEST_CASE("train: history is deterministic and evaluation is consistent") {
  const auto tr = instances(1, 2);
  const auto ev = instances(3, 1);
  const auto split = split_for({1, 2}, {3});
  TrainConfig t = small_train(3);
  t.eval_every = 2;
  const auto a = train(tr, ev, split, tiny_model(), FeatureConfig{}, policy(), t);
  const auto b = train(tr, ev, split, tiny_model(), FeatureConfig{}, policy(), t);
  REQUIRE(a.state.history.size() == 3);
  CHECK(a.state.history == b.state.history);
  CHECK(params_equal(a.state.params, b.state.params));
  CHECK_FALSE(a.state.history[0].score.has_value());
  CHECK(a.state.history[1].score.has_value());
  CHECK(a.state.history[2].score.has_value());
  CHECK(a.state.best_score.has_value());

  // The last row matches a fresh evaluation of the final parameters.
  const FeatureExtractor fx(FeatureConfig{});
  ConfusionMatrix cm;
  for (const auto& inst : ev) {
    const Example ex{normalize(featurize(inst, fx, policy()), a.state.norm), inst.label, inst.patient};
    cm.merge(evaluate(std::span(&ex, 1), a.state.params, tiny_model()));
  }
  CHECK(cm.total() == ev.size());
  CHECK(score(cm) == *a.state.history[2].score);

  t.seed = 8;
  const auto c = train(tr, ev, split, tiny_model(), FeatureConfig{}, policy(), t);
  CHECK_FALSE(params_equal(a.state.params, c.state.params));
}

TEST_CASE("train: resuming from a saved run state is bit-identical") {
  const auto tr = instances(1, 2);
  const auto ev = instances(3, 1);
  const auto split = split_for({1, 2}, {3});
  const auto full = train(tr, ev, split, tiny_model(), FeatureConfig{}, policy(), small_train(3));

  const auto path = std::filesystem::temp_directory_path() / "lungvit_test_run_state.lvck";
  const auto head = train(tr, ev, split, tiny_model(), FeatureConfig{}, policy(), small_train(2));
  save_run_state(path, head.state, tiny_model());
  RunState restored = load_run_state(path, tiny_model());
  CHECK(restored.history == head.state.history);
  CHECK(restored.optimizer.step == head.state.optimizer.step);
  const auto resumed =
      train(tr, ev, split, tiny_model(), FeatureConfig{}, policy(), small_train(3), {}, std::move(restored));
  CHECK(resumed.state.history == full.state.history);
  CHECK(params_equal(resumed.state.params, full.state.params));
  CHECK(params_equal(resumed.best(), full.best()));
  CHECK(resumed.state.best_epoch == full.state.best_epoch);
  std::filesystem::remove(path);
}
