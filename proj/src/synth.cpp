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

#include "lungvit/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "lungvit/audio.hpp"
#include "lungvit/common.hpp"

namespace lungvit {

namespace {

constexpr double kNoiseRms = 0.05;
constexpr double kGapS = 0.25;
constexpr double kWheezeHz = 400.0;
constexpr double kWheezeAmplitude = 0.08;
constexpr double kCrackleRateHz = 12.0;
constexpr double kCrackleAmplitude = 0.9;
constexpr double kCrackleDecayS = 0.0015;

const ChestLocation kLocations[] = {ChestLocation::kTc, ChestLocation::kAl, ChestLocation::kAr, ChestLocation::kPl,
                                    ChestLocation::kPr, ChestLocation::kLl, ChestLocation::kLr};

}  // namespace

std::vector<float> pink_noise(std::size_t n, double rms, Rng& rng) {
  std::vector<double> y(n);
  double b0 = 0, b1 = 0, b2 = 0, b3 = 0, b4 = 0, b5 = 0, b6 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double w = rng.normal();
    b0 = 0.99886 * b0 + w * 0.0555179;
    b1 = 0.99332 * b1 + w * 0.0750759;
    b2 = 0.96900 * b2 + w * 0.1538520;
    b3 = 0.86650 * b3 + w * 0.3104856;
    b4 = 0.55000 * b4 + w * 0.5329522;
    b5 = -0.7616 * b5 - w * 0.0168980;
    y[i] = b0 + b1 + b2 + b3 + b4 + b5 + b6 + w * 0.5362;
    b6 = w * 0.115926;
  }
  double acc = 0;
  for (double v : y) acc += v * v;
  const double scale = n > 0 && acc > 0 ? rms / std::sqrt(acc / static_cast<double>(n)) : 0.0;
  std::vector<float> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<float>(y[i] * scale);
  return out;
}

std::vector<float> synth_cycle(RespiratoryClass label, std::size_t n, int sample_rate_hz, Rng& rng) {
  std::vector<float> x = pink_noise(n, kNoiseRms, rng);
  const double rate = sample_rate_hz;
  const bool crackle = label == RespiratoryClass::kCrackle || label == RespiratoryClass::kBoth;
  const bool wheeze = label == RespiratoryClass::kWheeze || label == RespiratoryClass::kBoth;
  if (wheeze) {
    const double f = kWheezeHz + rng.uniform(-15.0, 15.0);
    const double phase = rng.uniform(0.0, 2 * std::numbers::pi);
    for (std::size_t i = 0; i < n; ++i)
      x[i] += static_cast<float>(kWheezeAmplitude * std::sin(2 * std::numbers::pi * f * i / rate + phase));
  }
  if (crackle) {
    // Clicks at jittered, roughly even spacing so every window of a few
    // hundred milliseconds holds some.
    const double spacing = rate / kCrackleRateHz;
    for (double t = rng.uniform(0.0, spacing); t < static_cast<double>(n); t += spacing * rng.uniform(0.6, 1.4)) {
      const double f = rng.uniform(200.0, 1200.0);
      const double amp = kCrackleAmplitude * rng.uniform(0.7, 1.0) * (rng.uniform() < 0.5 ? -1 : 1);
      const std::size_t start = static_cast<std::size_t>(t);
      const std::size_t len = static_cast<std::size_t>(0.012 * rate);
      for (std::size_t k = 0; k < len && start + k < n; ++k) {
        const double tk = static_cast<double>(k) / rate;
        x[start + k] += static_cast<float>(amp * std::exp(-tk / kCrackleDecayS) * std::sin(2 * std::numbers::pi * f * tk));
      }
    }
  }
  for (auto& v : x) v = std::clamp(v, -1.0f, 1.0f);
  return x;
}

SynthCorpus generate_synthetic_corpus(const std::filesystem::path& dir, const SynthConfig& cfg) {
  if (cfg.patients < 1 || cfg.cycles_per_class < 1 || cfg.recordings_per_patient < 1 || cfg.sample_rates.empty()) {
    throw ConfigError("synthetic corpus: patients, cycles_per_class, recordings_per_patient and rates must be positive");
  }
  if (!(cfg.min_cycle_s > 0) || cfg.max_cycle_s < cfg.min_cycle_s) {
    throw ConfigError("synthetic corpus: need 0 < min_cycle_s <= max_cycle_s");
  }
  std::filesystem::create_directories(dir / "audio");
  SynthCorpus corpus;
  std::vector<ManifestEntry> manifest;
  std::size_t rate_index = 0;
  for (int p = 0; p < cfg.patients; ++p) {
    const int patient = 101 + p;
    Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(patient)));
    std::vector<RespiratoryClass> labels;
    for (int c = 0; c < kNumClasses; ++c)
      for (int k = 0; k < cfg.cycles_per_class; ++k) labels.push_back(static_cast<RespiratoryClass>(c));
    rng.shuffle(std::span(labels));

    const std::size_t per_rec = (labels.size() + static_cast<std::size_t>(cfg.recordings_per_patient) - 1) /
                                static_cast<std::size_t>(cfg.recordings_per_patient);
    for (int r = 0; r < cfg.recordings_per_patient; ++r) {
      const std::size_t first = static_cast<std::size_t>(r) * per_rec;
      if (first >= labels.size()) break;
      const std::size_t last = std::min(labels.size(), first + per_rec);
      const int rate = cfg.sample_rates[rate_index++ % cfg.sample_rates.size()];

      Waveform w;
      w.sample_rate_hz = rate;
      std::vector<CycleAnnotation> cycles;
      auto append_gap = [&] {
        const auto gap = pink_noise(static_cast<std::size_t>(kGapS * rate), kNoiseRms, rng);
        w.samples.insert(w.samples.end(), gap.begin(), gap.end());
      };
      append_gap();
      for (std::size_t i = first; i < last; ++i) {
        const double dur = rng.uniform(cfg.min_cycle_s, cfg.max_cycle_s);
        const std::size_t n = static_cast<std::size_t>(std::llround(dur * rate));
        const double start = static_cast<double>(w.samples.size()) / rate;
        const auto body = synth_cycle(labels[i], n, rate, rng);
        w.samples.insert(w.samples.end(), body.begin(), body.end());
        const double end = static_cast<double>(w.samples.size()) / rate;
        // Round to the millisecond, as real annotations are.
        cycles.push_back({std::round(start * 1000) / 1000, std::round(end * 1000) / 1000,
                          labels[i] == RespiratoryClass::kCrackle || labels[i] == RespiratoryClass::kBoth,
                          labels[i] == RespiratoryClass::kWheeze || labels[i] == RespiratoryClass::kBoth});
        append_gap();
      }

      RecordingMeta meta{patient, "1b" + std::to_string(r + 1), kLocations[r % 7],
                         AcquisitionMode::kSingleChannel, "Synth"};
      const std::string stem = format_filename(meta);
      const auto base = stem.substr(0, stem.size() - 4);
      const auto wav = dir / "audio" / stem;
      const auto txt = dir / "audio" / (base + ".txt");
      write_wav(wav, w);
      std::ofstream(txt) << format_annotation_file(cycles);
      manifest.push_back({std::filesystem::path("audio") / stem, std::filesystem::path("audio") / (base + ".txt"), ""});
      ++corpus.recordings;
      corpus.cycles += cycles.size();
    }
  }
  corpus.manifest = dir / "manifest.jsonl";
  write_manifest(corpus.manifest, manifest);
  return corpus;
}

}  // namespace lungvit
