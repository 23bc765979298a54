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
#include <sstream>

#include "doctest.h"
#include "lungvit/common.hpp"
#include "lungvit/metrics.hpp"
#include "lungvit/rng.hpp"
#include "oracles.hpp"

using namespace lungvit;

namespace {

ConfusionMatrix diagonal(std::uint64_t n) {
  ConfusionMatrix cm;
  for (int c = 0; c < 4; ++c) cm.add(c, c, n);
  return cm;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST_CASE("sensitivity, specificity and score: examples") {
  const auto diag = diagonal(3);
  CHECK(sensitivity(diag) == 1.0);
  CHECK(specificity(diag) == 1.0);
  CHECK(score(diag) == 1.0);

  ConfusionMatrix half;
  half.add(1, 1, 2);
  half.add(1, 0, 1);
  half.add(2, 2, 1);
  half.add(2, 3, 2);
  half.add(3, 3, 1);
  half.add(3, 1, 1);
  CHECK(sensitivity(half) == 0.5);

  ConfusionMatrix missed;
  for (int c = 1; c < 4; ++c) missed.add(c, 0, 4);
  missed.add(0, 0, 1);
  CHECK(sensitivity(missed) == 0.0);

  ConfusionMatrix normals;
  normals.add(0, 0, 7);
  normals.add(0, 2, 3);
  CHECK(specificity(normals) == doctest::Approx(0.7));
  ConfusionMatrix all_wheeze;
  all_wheeze.add(0, 2, 5);
  CHECK(specificity(all_wheeze) == 0.0);

  ConfusionMatrix mixed = half;
  mixed.merge(normals);
  CHECK(score(mixed) == doctest::Approx(0.6));
  CHECK(score(mixed) == (sensitivity(mixed) + specificity(mixed)) / 2.0);

  CHECK_THROWS_AS((void)sensitivity(normals), UndefinedMetricError);
  CHECK_THROWS_AS((void)specificity(half), UndefinedMetricError);
  CHECK_THROWS_AS((void)score(ConfusionMatrix{}), UndefinedMetricError);
  CHECK_THROWS_AS(mixed.add(4, 0), ContractError);
}

TEST_CASE("UAR and macro precision") {
  ScopedWarningCapture capture;
  const auto d = uar_and_macro_precision(diagonal(2));
  CHECK(d.uar == 1.0);
  CHECK(d.macro_precision == 1.0);
  CHECK(capture.messages().empty());

  ConfusionMatrix never_both;
  never_both.add(0, 0, 4);
  never_both.add(1, 1, 3);
  never_both.add(1, 0, 1);
  never_both.add(2, 2, 2);
  never_both.add(3, 2, 2);
  const auto r = uar_and_macro_precision(never_both);
  CHECK_FALSE(r.precision[3].has_value());
  CHECK(r.uar == doctest::Approx((1.0 + 0.75 + 1.0 + 0.0) / 4));
  CHECK(r.macro_precision == doctest::Approx((0.8 + 1.0 + 0.5) / 3));
  CHECK(capture.contains("never-predicted class Both"));

  ConfusionMatrix no_wheeze;
  no_wheeze.add(0, 0);
  no_wheeze.add(1, 1);
  no_wheeze.add(3, 3);
  try {
    (void)uar_and_macro_precision(no_wheeze);
    FAIL("expected undefined metric");
  } catch (const UndefinedMetricError& e) {
    CHECK(std::string(e.what()).find("Wheeze") != std::string::npos);
  }

  // Uniform guessing over balanced classes.
  Rng rng(2024);
  ConfusionMatrix guess;
  for (int i = 0; i < 10000; ++i) guess.add(i % 4, static_cast<int>(rng.index(4)));
  CHECK(std::abs(uar_and_macro_precision(guess).uar - 0.25) < 0.02);
}

TEST_CASE("metrics equal a naive recomputation on random matrices") {
  Rng rng(77);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto stream = oracle::random_stream(rng, 50);
    const auto cm = oracle::to_matrix(stream);
    CHECK(cm.total() == stream.size());
    const auto mismatch = oracle::compare_with_naive(cm, oracle::naive_metrics(stream));
    CAPTURE(trial);
    REQUIRE(mismatch.empty());
  }
}

TEST_CASE("merging matrices equals scoring the concatenated stream") {
  Rng rng(78);
  for (int trial = 0; trial < 200; ++trial) {
    auto a = oracle::random_stream(rng, 40);
    const auto b = oracle::random_stream(rng, 40);
    ConfusionMatrix merged = oracle::to_matrix(a);
    merged.merge(oracle::to_matrix(b));
    a.insert(a.end(), b.begin(), b.end());
    REQUIRE(merged == oracle::to_matrix(a));
    REQUIRE(oracle::compare_with_naive(merged, oracle::naive_metrics(a)).empty());
    rng.shuffle(std::span<std::pair<int, int>>(a));
    REQUIRE(oracle::to_matrix(a) == merged);
  }
}

TEST_CASE("report files") {
  const auto dir = std::filesystem::temp_directory_path() / "lungvit_test_report";
  std::filesystem::remove_all(dir);
  const auto cm = diagonal(5);
  const auto report = make_report(cm);
  emit_report(report, cm, dir);
  const auto metrics = slurp(dir / "metrics.csv");
  CHECK(metrics.find("score,1.0000\n") != std::string::npos);
  CHECK(metrics.find("uar,1.0000\n") != std::string::npos);
  CHECK(read_confusion_csv(dir / "confusion.csv") == cm);
  CHECK(slurp(dir / "confusion.svg").find("<svg") == 0);
  CHECK(table_row(report) == "AS-ViT (ours), 100.0, 100.0, 100.0");
  CHECK(slurp(dir / "table_row.txt").find("AS-ViT (ours), 100.0, 100.0, 100.0") != std::string::npos);

  Rng rng(3);
  for (int i = 0; i < 50; ++i) {
    const auto m = oracle::to_matrix(oracle::random_stream(rng, 500));
    REQUIRE(parse_confusion_csv(format_confusion_csv(m)) == m);
  }
  CHECK_THROWS_AS((void)parse_confusion_csv("x\nNormal,1,2\n"), ParseError);
  CHECK_THROWS_AS(emit_report(report, cm, "/proc/lungvit/forbidden"), IoError);
  std::filesystem::remove_all(dir);
}
