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

#include <cstdint>
#include <filesystem>
#include <vector>

#include "lungvit/dataset.hpp"
#include "lungvit/rng.hpp"
#include "lungvit/waveform.hpp"

namespace lungvit {

/// Class-separable toy corpus laid out like the real one: WAV recordings
/// with ICBHI-style names, one annotation file each, and a JSONL manifest.
struct SynthConfig {
  int patients = 8;
  /// Cycles of each class per patient.
  int cycles_per_class = 5;
  int recordings_per_patient = 4;
  double min_cycle_s = 1.5;
  double max_cycle_s = 3.5;
  /// Recordings cycle through these rates.
  std::vector<int> sample_rates{4000, 10000, 22050, 44100};
  std::uint64_t seed = 1;
};

/// Pink (1/f) noise via Paul Kellet's filter over white noise, scaled to
/// the given RMS.
std::vector<float> pink_noise(std::size_t n, double rms, Rng& rng);

/// One cycle: pink noise, plus decaying clicks for crackles and a steady
/// tone near 400 Hz for wheezes.
std::vector<float> synth_cycle(RespiratoryClass label, std::size_t n, int sample_rate_hz, Rng& rng);

struct SynthCorpus {
  std::filesystem::path manifest;
  std::size_t recordings = 0;
  std::size_t cycles = 0;
};

SynthCorpus generate_synthetic_corpus(const std::filesystem::path& dir, const SynthConfig& cfg);

}  // namespace lungvit
