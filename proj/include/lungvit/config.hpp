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

#include <filesystem>
#include <string>
#include <string_view>

#include "json.hpp"
#include "lungvit/audio.hpp"
#include "lungvit/dataset.hpp"
#include "lungvit/features.hpp"
#include "lungvit/model.hpp"
#include "lungvit/training.hpp"

namespace lungvit {

using Json = nlohmann::ordered_json;

// Conversions throw ConfigError naming the field path on unknown keys or
// wrong types. Missing keys keep their defaults.
Json to_json(const FeatureConfig& c);
FeatureConfig feature_config_from_json(const Json& j, const std::string& where = "features");
Json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const Json& j, const std::string& where = "model");
Json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const Json& j, const std::string& where = "train");
Json to_json(const NormStats& s);
NormStats norm_stats_from_json(const Json& j, const std::string& where = "norm");

/// Everything one run needs. After resolve() every derived field is filled
/// in, and the JSON form written to a run directory is complete.
struct RunConfig {
  // data
  std::string manifest;
  /// Base for relative manifest paths; empty means the manifest's directory.
  std::string data_root;
  /// Cycle index written by `prepare` and read by the later commands.
  std::string index;
  /// Empty disables the on-disk feature cache.
  std::string cache_dir;

  // audio
  double target_s = 10.0;
  double eval_start_s = 0.0;

  FeatureConfig features;
  /// "paper", "toy" or "custom".
  std::string model_preset = "paper";
  ModelConfig model;
  TrainConfig train;

  SplitRatio split_ratio;
  std::uint64_t split_seed = 0;

  std::string output_dir = "run";

  /// Resolves features, expands the model preset and derives the model's
  /// input geometry from the audio and feature settings.
  void resolve();
  FixDurationPolicy duration_policy() const;
};

Json to_json(const RunConfig& c);
/// Reads a (possibly partial) config. Unknown fields are errors.
RunConfig run_config_from_json(const Json& j);

RunConfig load_run_config(const std::filesystem::path& path);
void save_run_config(const std::filesystem::path& path, const RunConfig& c);

/// Sets a dotted field ("train.epochs") from text. The text is parsed as
/// JSON when possible, else taken as a string.
void apply_override(Json& j, std::string_view dotted, std::string_view value);

/// Stable digest of the feature-relevant settings, for cache keys.
std::uint64_t feature_hash(const RunConfig& c);

}  // namespace lungvit
