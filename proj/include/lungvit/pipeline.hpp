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
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "lungvit/dataset.hpp"
#include "lungvit/training.hpp"

namespace lungvit {

struct SkippedFile {
  std::string path;
  std::string reason;
};

struct PreparedIndex {
  std::vector<CycleRecord> records;
  std::vector<SkippedFile> skipped;
  std::size_t recordings = 0;
};

/// Parses every manifest entry into cycle records in manifest order.
/// Recordings whose name, annotation or WAV header cannot be read are
/// listed in `skipped` and left out.
PreparedIndex prepare_index(const std::vector<ManifestEntry>& entries);

/// Durations come from the annotations; audio is not loaded.
CorpusStatistics index_statistics(std::span<const CycleRecord> records);

std::set<int> index_patients(std::span<const CycleRecord> records);

/// Loads, resamples and slices the selected records. Each WAV is decoded
/// once. Output keeps index order.
std::vector<Instance> load_instances(std::span<const CycleRecord> records, int sample_rate_hz,
                                     const std::function<bool(const CycleRecord&)>& keep = {});

}  // namespace lungvit
