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
#include <utility>
#include <vector>

#include "lungvit/config.hpp"
#include "lungvit/model.hpp"
#include "lungvit/training.hpp"

namespace lungvit {

/// Container layout: "LVCK", u32 format version, u64 header length, the
/// JSON header, then every tensor as little-endian float64 in manifest
/// order. The header lists names, shapes and element offsets plus an
/// FNV-1a digest of the payload.
struct TensorArchive {
  Json header = Json::object();
  std::vector<std::pair<std::string, Tensor>> tensors;
};

void write_archive(const std::filesystem::path& path, const TensorArchive& archive);
/// Throws CheckpointError on a bad magic, version, truncation or digest.
TensorArchive read_archive(const std::filesystem::path& path);

struct Checkpoint {
  ModelConfig model;
  FeatureConfig features;
  NormStats norm;
  ModelParams params;
  /// Free-form extras (epoch, score, ...).
  Json meta = Json::object();
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
/// When `expected` is given, every tensor is checked against its shapes and
/// the first mismatch is reported by name.
Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig* expected = nullptr);

void save_run_state(const std::filesystem::path& path, const RunState& state, const ModelConfig& cfg);
RunState load_run_state(const std::filesystem::path& path, const ModelConfig& cfg);

}  // namespace lungvit
