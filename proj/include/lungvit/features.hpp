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

#include <complex>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lungvit/tensor.hpp"
#include "lungvit/waveform.hpp"

namespace lungvit {

struct FeatureConfig {
  int sample_rate_hz = 4000;
  double window_ms = 25.0;
  double hop_ms = 10.0;
  /// 0 selects the smallest power of two >= the window for which every mel
  /// filter covers at least one FFT bin.
  int fft_size = 0;
  int mel_bins = 128;
  double fmin_hz = 0.0;
  /// 0 means rate / 2.
  double fmax_hz = 0.0;
  double log_floor = 1e-10;

  std::size_t window_samples() const;
  std::size_t hop_samples() const;
  std::size_t fft_bins() const { return static_cast<std::size_t>(fft_size) / 2 + 1; }
  bool operator==(const FeatureConfig&) const = default;
};

/// Fills fft_size and fmax_hz and validates the rest. Throws ConfigError.
FeatureConfig resolve(FeatureConfig cfg);

/// 1 + floor((length - window) / hop); 0 when shorter than one window.
std::size_t frame_count(std::size_t length, std::size_t window, std::size_t hop);

double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// In-place radix-2 FFT; size must be a power of two.
void fft_inplace(std::span<std::complex<double>> x);

/// Hann-windowed frames, one-sided DFT magnitudes: [fft_bins x frames].
Tensor stft_magnitude(const Waveform& w, const FeatureConfig& cfg);

/// Triangular filters on the mel scale: [mel_bins x fft_bins].
/// Throws ConfigError when some filter covers no FFT bin.
Tensor mel_filterbank(const FeatureConfig& cfg);

/// ln(filterbank * mag^2 + log_floor): [mel_bins x frames].
Tensor log_mel(const Tensor& stft_mag, const Tensor& filterbank, const FeatureConfig& cfg);

/// Right-pads (with `value`) to `frames` columns.
Tensor pad_frames(const Tensor& spec, std::size_t frames, Scalar value);

/// Whole pipeline for one waveform: STFT, log-mel, then padding to
/// length / hop frames so that t seconds give 100 t frames at a 10 ms hop.
class FeatureExtractor {
 public:
  explicit FeatureExtractor(FeatureConfig cfg);

  const FeatureConfig& config() const { return cfg_; }
  const Tensor& filterbank() const { return filterbank_; }
  /// Frame count produced for a waveform of `length` samples.
  std::size_t output_frames(std::size_t length) const;
  Tensor operator()(const Waveform& w) const;

 private:
  FeatureConfig cfg_;
  Tensor filterbank_;
};

enum class SplitRole { kTrain, kEval };

/// Dataset-level standardization statistics, tagged with the split they
/// were computed on.
struct NormStats {
  double mean = 0.0;
  double std = 1.0;
  SplitRole source = SplitRole::kTrain;
};

/// Mean and standard deviation over every cell, in input order.
NormStats compute_norm_stats(std::span<const Tensor> spectrograms, SplitRole source = SplitRole::kTrain);

/// (x - mean) / max(std, 1e-8). Statistics must come from a training split.
Tensor normalize(const Tensor& spec, const NormStats& stats);

struct PatchGrid {
  static constexpr std::size_t kPatch = 16;
  static constexpr std::size_t kStride = 10;
  std::size_t n_freq = 0;
  std::size_t n_time = 0;
  std::size_t count() const { return n_freq * n_time; }
  bool operator==(const PatchGrid&) const = default;
};

/// floor((L - 16) / 10) + 1 windows per axis; throws ContractError when an
/// axis is shorter than a patch.
PatchGrid patch_grid(std::size_t mel_bins, std::size_t frames);

/// Stable 64-bit FNV-1a digest of a string.
std::uint64_t fnv1a(std::string_view bytes);

/// On-disk cache of spectrograms: one file per key holding a small header
/// (magic, dims, config hash) and a row-major float32 payload.
class FeatureCache {
 public:
  FeatureCache(std::filesystem::path dir, std::uint64_t config_hash);

  /// Empty when the entry is missing or was written under another config.
  std::optional<Tensor> load(const std::string& key) const;
  void store(const std::string& key, const Tensor& spec) const;
  std::filesystem::path path_for(const std::string& key) const;

 private:
  std::filesystem::path dir_;
  std::uint64_t hash_;
};

}  // namespace lungvit
