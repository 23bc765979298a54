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
#include <span>
#include <vector>

#include "lungvit/dataset.hpp"
#include "lungvit/waveform.hpp"

namespace lungvit {

/// Canonical pipeline rate.
inline constexpr int kDefaultSampleRateHz = 4000;

/// Decodes a RIFF/WAVE byte stream (PCM 16/24/32-bit or IEEE float 32-bit,
/// plain or WAVE_FORMAT_EXTENSIBLE). Integer PCM is divided by 2^(bits-1);
/// channels are mean-downmixed; the result is clamped to [-1, 1].
Waveform decode_wav(std::span<const std::uint8_t> bytes);
Waveform read_wav(const std::filesystem::path& path);

enum class WavEncoding { kPcm16, kFloat32 };

/// Encodes interleaved frames. PCM16 rounds and saturates.
std::vector<std::uint8_t> encode_wav(std::span<const float> interleaved, int channels, int sample_rate_hz,
                                     WavEncoding encoding = WavEncoding::kPcm16);
void write_wav(const std::filesystem::path& path, const Waveform& w, WavEncoding encoding = WavEncoding::kPcm16);

/// Band-limited rational resampling with a Kaiser-windowed sinc evaluated
/// per polyphase branch. Output length is round(len * target / source);
/// equal rates return the input unchanged.
Waveform resample(const Waveform& w, int target_hz);

/// Samples in [round(start * rate), round(end * rate)). An end past the
/// file is clamped (with a warning beyond 50 ms of slack).
Waveform slice_cycle(const Waveform& w, const CycleAnnotation& cycle);

enum class CropMode { kRandomCrop, kFixedStart };

struct FixDurationPolicy {
  double target_s = 10.0;
  CropMode mode = CropMode::kFixedStart;
  double fixed_start_s = 0.0;
  std::uint64_t rng_seed = 0;
};

/// Number of samples an instance has after fix_duration.
std::size_t target_length(const FixDurationPolicy& policy, int sample_rate_hz);

/// Sample offset of the crop window for an input of `length` samples, or 0
/// when the input is not longer than the target.
std::size_t crop_offset(std::size_t length, int sample_rate_hz, const FixDurationPolicy& policy);

/// Shorter inputs are zero-padded at the tail; longer ones are cut to a
/// window starting at a seeded uniform offset (random crop) or at
/// fixed_start_s (fixed start, clamped so the window fits).
Waveform fix_duration(const Waveform& w, const FixDurationPolicy& policy);

}  // namespace lungvit
