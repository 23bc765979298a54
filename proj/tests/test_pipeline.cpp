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

#include <algorithm>
#include <cmath>
#include <numeric>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "lungvit/audio.hpp"
#include "lungvit/common.hpp"
#include "lungvit/features.hpp"
#include "lungvit/pipeline.hpp"
#include "lungvit/synth.hpp"

using namespace lungvit;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

double rms(std::span<const float> x) {
  double acc = 0;
  for (float v : x) acc += static_cast<double>(v) * v;
  return std::sqrt(acc / static_cast<double>(x.size()));
}

// Log-mel energy per frame, averaged over the bins whose centre lies in
// [lo, hi] Hz. Padding frames are skipped.
std::vector<double> band_profile(const Tensor& logmel, const FeatureConfig& cfg, double lo, double hi,
                                 std::size_t frames) {
  const double mlo = hz_to_mel(cfg.fmin_hz), mhi = hz_to_mel(cfg.fmax_hz);
  const std::size_t bins = logmel.shape()[0], cols = logmel.shape()[1];
  std::vector<double> out(frames, 0.0);
  std::size_t used = 0;
  for (std::size_t b = 0; b < bins; ++b) {
    const double centre = mel_to_hz(mlo + (mhi - mlo) * static_cast<double>(b + 1) / static_cast<double>(bins + 1));
    if (centre < lo || centre > hi) continue;
    ++used;
    for (std::size_t f = 0; f < frames; ++f) out[f] += logmel[b * cols + f];
  }
  for (auto& v : out) v /= static_cast<double>(used);
  return out;
}

double mean_of(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); }
double max_of(const std::vector<double>& v) { return *std::max_element(v.begin(), v.end()); }

}  // namespace

TEST_CASE("pink noise has the requested RMS and a falling spectrum") {
  Rng rng(1);
  const auto x = pink_noise(1 << 15, 0.05, rng);
  CHECK(rms(x) == doctest::Approx(0.05).epsilon(1e-6));
  const FeatureConfig cfg = resolve(FeatureConfig{});
  const Tensor lm = FeatureExtractor(cfg)(Waveform{x, 4000});
  const std::size_t frames = frame_count(x.size(), cfg.window_samples(), cfg.hop_samples());
  CHECK(mean_of(band_profile(lm, cfg, 50, 300, frames)) > mean_of(band_profile(lm, cfg, 1200, 1900, frames)) + 1.0);
}

TEST_CASE("synthetic classes carry their markers") {
  const FeatureConfig cfg = resolve(FeatureConfig{});
  auto features = [&](RespiratoryClass c) {
    Rng rng(5);
    return FeatureExtractor(cfg)(Waveform{synth_cycle(c, 8000, 4000, rng), 4000});
  };
  const Tensor normal = features(RespiratoryClass::kNormal);
  const Tensor wheeze = features(RespiratoryClass::kWheeze);
  const Tensor crackle = features(RespiratoryClass::kCrackle);
  const Tensor both = features(RespiratoryClass::kBoth);
  const std::size_t frames = frame_count(8000, cfg.window_samples(), cfg.hop_samples());
  auto tone = [&](const Tensor& t) { return mean_of(band_profile(t, cfg, 380, 420, frames)); };
  auto clicks = [&](const Tensor& t) { return max_of(band_profile(t, cfg, 900, 1500, frames)); };
  // Steady energy near 400 Hz.
  CHECK(tone(wheeze) > tone(normal) + 3.0);
  CHECK(tone(both) > tone(normal) + 3.0);
  CHECK(tone(crackle) < tone(normal) + 1.0);
  // Short broadband bursts away from the tone.
  CHECK(clicks(crackle) > clicks(normal) + 2.0);
  CHECK(clicks(both) > clicks(normal) + 2.0);
  CHECK(clicks(wheeze) < clicks(normal) + 0.5);

  Rng a(9), b(9);
  CHECK(synth_cycle(RespiratoryClass::kBoth, 1000, 10000, a) == synth_cycle(RespiratoryClass::kBoth, 1000, 10000, b));
}

TEST_CASE("synthetic corpus: layout, counts and determinism") {
  const auto dir = fresh_dir("lungvit_test_synth");
  SynthConfig cfg;
  const auto corpus = generate_synthetic_corpus(dir, cfg);
  CHECK(corpus.recordings == 32);
  CHECK(corpus.cycles == 160);

  const auto entries = read_manifest(corpus.manifest);
  REQUIRE(entries.size() == 32);
  const PreparedIndex idx = prepare_index(entries);
  CHECK(idx.skipped.empty());
  CHECK(idx.recordings == 32);
  REQUIRE(idx.records.size() == 160);
  const auto stats = index_statistics(idx.records);
  CHECK(stats.patients == 8);
  CHECK(stats.recordings == 32);
  for (auto n : stats.per_class) CHECK(n == 40);
  CHECK(*stats.min_duration_s >= 1.5 - 1e-3);
  CHECK(*stats.max_duration_s <= 3.5 + 1e-3);
  CHECK(index_patients(idx.records) == std::set<int>{101, 102, 103, 104, 105, 106, 107, 108});

  std::set<int> rates;
  for (const auto& e : entries) rates.insert(read_wav(e.wav).sample_rate_hz);
  CHECK(rates == std::set<int>{4000, 10000, 22050, 44100});

  const auto again = generate_synthetic_corpus(fresh_dir("lungvit_test_synth2"), cfg);
  const auto idx2 = prepare_index(read_manifest(again.manifest));
  REQUIRE(idx2.records.size() == idx.records.size());
  for (std::size_t i = 0; i < idx.records.size(); ++i) {
    CHECK(idx.records[i].start_s == idx2.records[i].start_s);
    CHECK(idx.records[i].label == idx2.records[i].label);
  }
}

TEST_CASE("prepare: count conservation, skipped files and empty manifests") {
  const auto dir = fresh_dir("lungvit_test_prepare");
  Rng rng(3);
  auto make = [&](const std::string& stem, int cycles) {
    Waveform w{pink_noise(static_cast<std::size_t>(4000 * cycles), 0.05, rng), 4000};
    write_wav(dir / (stem + ".wav"), w);
    std::vector<CycleAnnotation> anns;
    for (int c = 0; c < cycles; ++c) anns.push_back({c + 0.1, c + 0.9, c % 2 == 1, c % 3 == 2});
    std::ofstream(dir / (stem + ".txt")) << format_annotation_file(anns);
    return ManifestEntry{dir / (stem + ".wav"), dir / (stem + ".txt"), "train"};
  };
  std::vector<ManifestEntry> entries{make("101_1b1_Al_sc_Meditron", 5), make("102_1b1_Ar_sc_Meditron", 3)};
  PreparedIndex idx = prepare_index(entries);
  CHECK(idx.records.size() == 8);
  CHECK(idx.records[0].patient == 101);
  CHECK(idx.records[5].patient == 102);
  CHECK(idx.records[3].label == RespiratoryClass::kCrackle);
  CHECK(idx.records[2].label == RespiratoryClass::kWheeze);
  CHECK(idx.records[0].partition == "train");

  // A missing WAV, an unparseable name and a corrupt WAV are listed and skipped.
  entries.push_back({dir / "103_1b1_Al_sc_Meditron.wav", dir / "101_1b1_Al_sc_Meditron.txt", ""});
  fs::copy_file(dir / "101_1b1_Al_sc_Meditron.wav", dir / "not_a_name.wav");
  entries.push_back({dir / "not_a_name.wav", dir / "101_1b1_Al_sc_Meditron.txt", ""});
  std::ofstream(dir / "104_1b1_Al_sc_Meditron.wav") << "RIFF garbage";
  entries.push_back({dir / "104_1b1_Al_sc_Meditron.wav", dir / "101_1b1_Al_sc_Meditron.txt", ""});
  idx = prepare_index(entries);
  CHECK(idx.records.size() == 8);
  CHECK(idx.recordings == 2);
  REQUIRE(idx.skipped.size() == 3);
  CHECK(idx.skipped[0].path.find("103_") != std::string::npos);

  const auto index_path = dir / "index.jsonl";
  write_cycle_index(index_path, idx.records);
  CHECK(read_cycle_index(index_path) == idx.records);

  ScopedWarningCapture warnings;
  CHECK(prepare_index({}).records.empty());
  CHECK(warnings.contains("no recordings"));
}

TEST_CASE("load_instances resamples and slices at the feature rate") {
  const auto dir = fresh_dir("lungvit_test_load");
  SynthConfig cfg;
  cfg.patients = 1;
  cfg.cycles_per_class = 1;
  cfg.recordings_per_patient = 2;
  cfg.sample_rates = {44100, 4000};
  const auto corpus = generate_synthetic_corpus(dir, cfg);
  const auto idx = prepare_index(read_manifest(corpus.manifest));
  REQUIRE(idx.records.size() == 4);
  const auto all = load_instances(idx.records, 4000);
  REQUIRE(all.size() == 4);
  for (std::size_t i = 0; i < all.size(); ++i) {
    const auto& r = idx.records[i];
    CHECK(all[i].audio.sample_rate_hz == 4000);
    CHECK(static_cast<double>(all[i].audio.size()) == doctest::Approx((r.end_s - r.start_s) * 4000).epsilon(0.001));
    CHECK(all[i].label == static_cast<int>(r.label));
    CHECK(all[i].patient == 101);
  }
  const auto some = load_instances(idx.records, 4000, [](const CycleRecord& r) { return r.crackle; });
  CHECK(some.size() == 2);
}
