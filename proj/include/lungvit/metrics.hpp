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
#include <string>

#include "lungvit/dataset.hpp"

namespace lungvit {

/// Rows are the true class, columns the prediction.
class ConfusionMatrix {
 public:
  using Counts = std::array<std::array<std::uint64_t, kNumClasses>, kNumClasses>;

  ConfusionMatrix() = default;
  explicit ConfusionMatrix(const Counts& counts) : counts_(counts) {}

  void add(int truth, int predicted, std::uint64_t n = 1);
  /// Entrywise sum.
  ConfusionMatrix& merge(const ConfusionMatrix& other);

  std::uint64_t at(int truth, int predicted) const;
  std::uint64_t row_total(int truth) const;
  std::uint64_t column_total(int predicted) const;
  std::uint64_t total() const;
  const Counts& counts() const { return counts_; }

  bool operator==(const ConfusionMatrix&) const = default;

 private:
  Counts counts_{};
};

/// Correct abnormal predictions over all abnormal cycles. Throws
/// UndefinedMetricError without abnormal cycles.
double sensitivity(const ConfusionMatrix& cm);
/// Correct Normal predictions over Normal cycles.
double specificity(const ConfusionMatrix& cm);
/// (Se + Sp) / 2.
double score(const ConfusionMatrix& cm);

struct ClassRates {
  std::array<std::optional<double>, kNumClasses> recall{};
  std::array<std::optional<double>, kNumClasses> precision{};
  double uar = 0.0;
  double macro_precision = 0.0;
};

/// Per-class recall and precision with their unweighted means. An empty
/// row throws UndefinedMetricError; a never-predicted column is left out of
/// the precision mean with a warning.
ClassRates uar_and_macro_precision(const ConfusionMatrix& cm);

struct MetricsReport {
  double sensitivity = 0.0;
  double specificity = 0.0;
  double score = 0.0;
  ClassRates rates;
  std::uint64_t total = 0;
};

MetricsReport make_report(const ConfusionMatrix& cm);

/// "AS-ViT (ours), <precision>, <recall>, <score>" with values in percent to
/// one decimal; recall is the unweighted average recall.
std::string table_row(const MetricsReport& report);

/// Writes metrics.csv, confusion.csv, confusion.svg and table_row.txt into
/// `dir`. Throws IoError naming the path on failure.
void emit_report(const MetricsReport& report, const ConfusionMatrix& cm, const std::filesystem::path& dir);

std::string format_confusion_csv(const ConfusionMatrix& cm);
ConfusionMatrix parse_confusion_csv(const std::string& text);
ConfusionMatrix read_confusion_csv(const std::filesystem::path& path);

}  // namespace lungvit
