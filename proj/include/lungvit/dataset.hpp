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

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lungvit/waveform.hpp"

namespace lungvit {

// ICBHI 2017 corpus conventions: recordings are named
// patientID_recordingIndex_chestLocation_mode_equipment.wav and carry a
// sibling .txt with one "start end crackle wheeze" line per cycle.

enum class ChestLocation { kTc, kAl, kAr, kPl, kPr, kLl, kLr };
enum class AcquisitionMode { kSingleChannel, kMultiChannel };

enum class RespiratoryClass : int { kNormal = 0, kCrackle = 1, kWheeze = 2, kBoth = 3 };
inline constexpr int kNumClasses = 4;

std::string_view to_string(ChestLocation loc);
std::string_view to_string(AcquisitionMode mode);
std::string_view class_name(RespiratoryClass c);
RespiratoryClass class_from_name(std::string_view name);

struct RecordingMeta {
  int patient_id = 0;
  std::string recording_index;
  ChestLocation chest_location = ChestLocation::kTc;
  AcquisitionMode acquisition_mode = AcquisitionMode::kSingleChannel;
  std::string equipment;

  bool operator==(const RecordingMeta&) const = default;
};

/// Accepts a bare filename or a path; only the last component is parsed.
RecordingMeta parse_filename(std::string_view name);
std::string format_filename(const RecordingMeta& meta);

struct CycleAnnotation {
  double start_s = 0;
  double end_s = 0;
  bool crackle = false;
  bool wheeze = false;

  double duration_s() const { return end_s - start_s; }
  bool operator==(const CycleAnnotation&) const = default;
};

/// Parses annotation text. Blank lines are skipped; errors carry the
/// 1-based line number.
std::vector<CycleAnnotation> parse_annotation_file(std::string_view text);
std::vector<CycleAnnotation> read_annotation_file(const std::filesystem::path& path);
/// Tab-separated, shortest round-trip decimal form.
std::string format_annotation_file(std::span<const CycleAnnotation> cycles);

RespiratoryClass label_from_flags(bool crackle, bool wheeze);

struct LabeledCycle {
  RecordingMeta meta;
  CycleAnnotation annotation;
  RespiratoryClass label = RespiratoryClass::kNormal;
  Waveform audio;
};

/// Train:eval percentage split.
struct SplitRatio {
  int train_percent = 80;
  int eval_percent = 20;

  bool operator==(const SplitRatio&) const = default;
};

/// Accepts "60:40" and "80:20" only.
SplitRatio parse_split_ratio(std::string_view text);
std::string to_string(SplitRatio ratio);

struct SplitSpec {
  SplitRatio ratio;
  std::uint64_t seed = 0;
  std::set<int> train_patients;
  std::set<int> eval_patients;

  bool is_eval(int patient) const { return eval_patients.count(patient) != 0; }
  bool operator==(const SplitSpec&) const = default;
};

/// Patients are sorted, shuffled with Rng(seed), and the first
/// ceil(train_percent * n / 100) go to training.
SplitSpec build_subject_independent_split(const std::set<int>& patients, SplitRatio ratio, std::uint64_t seed);

struct CorpusStatistics {
  std::size_t count = 0;
  std::array<std::size_t, kNumClasses> per_class{};
  std::size_t patients = 0;
  std::size_t recordings = 0;
  // Empty when there are no cycles.
  std::optional<double> min_duration_s;
  std::optional<double> mean_duration_s;
  std::optional<double> max_duration_s;
};

CorpusStatistics corpus_statistics(std::span<const LabeledCycle> cycles);

// ---- batch ingestion

/// One manifest line: {"wav": ..., "annotation": ..., "partition": "train"|"test"}.
/// The partition is optional and names the official challenge side.
struct ManifestEntry {
  std::filesystem::path wav;
  std::filesystem::path annotation;
  std::string partition;
};

/// Relative paths resolve against `root` when given, else the manifest's
/// directory.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path,
                                         const std::filesystem::path& root = {});
void write_manifest(const std::filesystem::path& path, std::span<const ManifestEntry> entries);

/// One line of the cycle index written by `prepare`.
struct CycleRecord {
  std::string wav;
  double start_s = 0;
  double end_s = 0;
  bool crackle = false;
  bool wheeze = false;
  RespiratoryClass label = RespiratoryClass::kNormal;
  int patient = 0;
  std::string partition;

  bool operator==(const CycleRecord&) const = default;
};

std::vector<CycleRecord> read_cycle_index(const std::filesystem::path& path);
void write_cycle_index(const std::filesystem::path& path, std::span<const CycleRecord> records);

}  // namespace lungvit
