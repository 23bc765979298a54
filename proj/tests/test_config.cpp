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

#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "lungvit/checkpoint.hpp"
#include "lungvit/common.hpp"
#include "lungvit/config.hpp"

using namespace lungvit;
namespace fs = std::filesystem;

namespace {

std::string error_of(const Json& j) {
  try {
    run_config_from_json(j).resolve();
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "lungvit_test_config";
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("defaults resolve to the paper preset at 10 s") {
  RunConfig c;
  c.resolve();
  CHECK(c.model_preset == "paper");
  CHECK(c.model == ModelConfig::paper(128, 1000));
  CHECK(c.features.fft_size == 512);
  CHECK(c.model.n_patches() == 1188);
}

TEST_CASE("toy preset expands and tracks the audio length") {
  Json j{{"model", {{"preset", "toy"}}}, {"audio", {{"target_s", 2.0}}}};
  RunConfig c = run_config_from_json(j);
  c.resolve();
  CHECK(c.model_preset == "toy");
  CHECK(c.model == ModelConfig::toy(128, 200));

  j["model"]["layers"] = 3;
  c = run_config_from_json(j);
  c.resolve();
  CHECK(c.model_preset == "custom");
  CHECK(c.model.layers == 3);
}

TEST_CASE("resolved config round-trips through JSON and disk") {
  RunConfig c;
  c.manifest = "data/manifest.jsonl";
  c.index = "run/index.jsonl";
  c.target_s = 2.0;
  c.model_preset = "toy";
  c.model = ModelConfig::toy();
  c.train.epochs = 12;
  c.train.optimizer = OptimizerKind::kSgdMomentum;
  c.split_ratio = SplitRatio{60, 40};
  c.split_seed = 99;
  c.resolve();

  const auto path = scratch("config.json");
  save_run_config(path, c);
  RunConfig back = load_run_config(path);
  back.resolve();
  CHECK(to_json(back) == to_json(c));
  CHECK(back.train == c.train);
  CHECK(back.model == c.model);
  CHECK(back.split_ratio == SplitRatio{60, 40});

  // Every field is written explicitly.
  const Json j = to_json(c);
  CHECK(j.at("features").at("fft_size") == 512);
  CHECK(j.at("model").at("frames") == 200);
  CHECK(j.at("train").at("optimizer") == "sgd_momentum");
}

TEST_CASE("config errors name the field") {
  CHECK(error_of(Json{{"split", {{"ratio", "70:30"}}}}).find("config field 'split.ratio'") != std::string::npos);
  CHECK(error_of(Json{{"train", {{"epocs", 3}}}}) == "unknown config field 'train.epocs'");
  CHECK(error_of(Json{{"bogus", 1}}) == "unknown config field 'bogus'");
  CHECK(error_of(Json{{"train", {{"batch_size", "eight"}}}}) == "config field 'train.batch_size': expected an integer");
  CHECK(error_of(Json{{"train", {{"batch_size", 0}}}}).find("train.batch_size") != std::string::npos);
  CHECK(error_of(Json{{"model", {{"preset", "huge"}}}}).find("model.preset") != std::string::npos);
  CHECK(error_of(Json{{"model", {{"preset", "toy"}, {"heads", 5}}}}).find("head") != std::string::npos);
  CHECK(error_of(Json{{"audio", {{"target_s", 0.01}}}}).find("fewer than one patch") != std::string::npos);

  const auto path = scratch("broken.json");
  std::ofstream(path) << "{ not json";
  CHECK_THROWS_AS(load_run_config(path), ConfigError);
  CHECK_THROWS_AS(load_run_config(scratch("absent.json")), ConfigError);
}

TEST_CASE("dotted overrides") {
  Json j = to_json(RunConfig{});
  apply_override(j, "train.epochs", "7");
  apply_override(j, "model.preset", "toy");
  apply_override(j, "data.manifest", "m.jsonl");
  apply_override(j, "train.learning_rate", "1e-3");
  CHECK(j["train"]["epochs"] == 7);
  CHECK(j["model"]["preset"] == "toy");
  CHECK(j["data"]["manifest"] == "m.jsonl");
  const RunConfig c = run_config_from_json(j);
  CHECK(c.train.epochs == 7);
  CHECK(c.train.learning_rate == 1e-3);
  CHECK_THROWS_AS(apply_override(j, "train..x", "1"), ConfigError);
  CHECK_THROWS_AS(apply_override(j, "train.epochs.x", "1"), ConfigError);
}

TEST_CASE("feature hash follows feature-relevant settings only") {
  RunConfig a;
  a.resolve();
  RunConfig b = a;
  b.train.epochs = 1;
  CHECK(feature_hash(a) == feature_hash(b));
  b.target_s = 5;
  CHECK(feature_hash(a) != feature_hash(b));
  b = a;
  b.features.mel_bins = 64;
  CHECK(feature_hash(a) != feature_hash(b));
}

TEST_CASE("checkpoint round trip is exact") {
  const ModelConfig cfg = ModelConfig::toy(32, 32);
  Checkpoint ck;
  ck.model = cfg;
  ck.features = resolve(FeatureConfig{});
  ck.norm = NormStats{-3.25, 1.5, SplitRole::kTrain};
  ck.params = init_params(cfg, 11);
  ck.meta = Json{{"epoch", 4}};
  const auto path = scratch("model.lvck");
  save_checkpoint(path, ck);
  const Checkpoint back = load_checkpoint(path, &cfg);
  CHECK(back.model == cfg);
  CHECK(back.features == ck.features);
  CHECK(back.norm.mean == -3.25);
  CHECK(back.norm.std == 1.5);
  CHECK(back.meta == ck.meta);
  std::vector<const Tensor*> a;
  ck.params.visit([&](const std::string&, const Tensor& t) { a.push_back(&t); });
  std::size_t i = 0;
  back.params.visit([&](const std::string&, const Tensor& t) { CHECK(t == *a[i++]); });
  CHECK(i == a.size());
  CHECK_FALSE(fs::exists(path.string() + ".tmp"));
}

TEST_CASE("checkpoint shape mismatch names the first tensor") {
  const ModelConfig toy = ModelConfig::toy(128, 1000);
  Checkpoint ck;
  ck.model = toy;
  ck.params = init_params(toy, 1);
  const auto path = scratch("toy.lvck");
  save_checkpoint(path, ck);
  const ModelConfig paper = ModelConfig::paper(128, 1000);
  try {
    load_checkpoint(path, &paper);
    FAIL("expected a shape error");
  } catch (const CheckpointError& e) {
    CHECK(std::string(e.what()).find("tensor patch_embed has shape [256x32], config expects [256x768]") !=
          std::string::npos);
  }
}

TEST_CASE("corrupt checkpoints are rejected") {
  const ModelConfig cfg = ModelConfig::toy(32, 32);
  Checkpoint ck;
  ck.model = cfg;
  ck.params = init_params(cfg, 2);
  const auto path = scratch("corrupt.lvck");
  save_checkpoint(path, ck);
  std::string bytes;
  {
    std::ifstream in(path, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  }
  auto write = [&](const std::string& b) { std::ofstream(path, std::ios::binary | std::ios::trunc) << b; };

  std::string flipped = bytes;
  flipped[flipped.size() - 3] ^= 0x10;
  write(flipped);
  CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("digest mismatch"), CheckpointError);

  write(bytes.substr(0, bytes.size() - 8));
  CHECK_THROWS_AS(load_checkpoint(path), CheckpointError);

  std::string magic = bytes;
  magic[0] = 'X';
  write(magic);
  CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("bad magic"), CheckpointError);

  write(bytes.substr(0, 10));
  CHECK_THROWS_AS(load_checkpoint(path), CheckpointError);
  CHECK_THROWS_AS(load_checkpoint(scratch("missing.lvck")), CheckpointError);
}
