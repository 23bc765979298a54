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

#include "lungvit/features.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numbers>

#include "lungvit/common.hpp"

namespace lungvit {

namespace {

constexpr double kStdFloor = 1e-8;
constexpr int kMaxFftSize = 1 << 16;

Tensor build_filterbank(const FeatureConfig& cfg) {
  const std::size_t bins = cfg.fft_bins();
  const std::size_t m = static_cast<std::size_t>(cfg.mel_bins);
  const double lo = hz_to_mel(cfg.fmin_hz);
  const double hi = hz_to_mel(cfg.fmax_hz);
  std::vector<double> edges(m + 2);
  for (std::size_t i = 0; i < m + 2; ++i) {
    edges[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(m + 1));
  }
  Tensor fb({m, bins});
  const double bin_hz = static_cast<double>(cfg.sample_rate_hz) / cfg.fft_size;
  for (std::size_t r = 0; r < m; ++r) {
    const double left = edges[r], center = edges[r + 1], right = edges[r + 2];
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * bin_hz;
      const double rise = (f - left) / (center - left);
      const double fall = (right - f) / (right - center);
      fb(r, k) = static_cast<Scalar>(std::max(0.0, std::min(rise, fall)));
    }
  }
  return fb;
}

// Index of the first filter row without any positive weight, or -1.
long first_empty_row(const Tensor& fb) {
  for (std::size_t r = 0; r < fb.rows(); ++r) {
    bool any = false;
    for (std::size_t k = 0; k < fb.cols() && !any; ++k) any = fb(r, k) > 0;
    if (!any) return static_cast<long>(r);
  }
  return -1;
}

}  // namespace

std::size_t FeatureConfig::window_samples() const {
  return static_cast<std::size_t>(std::llround(window_ms * sample_rate_hz / 1000.0));
}

std::size_t FeatureConfig::hop_samples() const {
  return static_cast<std::size_t>(std::llround(hop_ms * sample_rate_hz / 1000.0));
}

FeatureConfig resolve(FeatureConfig cfg) {
  if (cfg.sample_rate_hz <= 0) throw ConfigError("features.sample_rate_hz must be positive");
  if (!(cfg.window_ms > 0) || !(cfg.hop_ms > 0)) throw ConfigError("features.window_ms and hop_ms must be positive");
  if (cfg.window_samples() == 0 || cfg.hop_samples() == 0) {
    throw ConfigError("features: window or hop rounds to zero samples");
  }
  if (cfg.hop_samples() > cfg.window_samples()) throw ConfigError("features.hop_ms must not exceed window_ms");
  if (cfg.mel_bins < static_cast<int>(PatchGrid::kPatch)) {
    throw ConfigError("features.mel_bins must be at least " + std::to_string(PatchGrid::kPatch));
  }
  if (!(cfg.log_floor > 0)) throw ConfigError("features.log_floor must be positive");
  const double nyquist = cfg.sample_rate_hz / 2.0;
  if (cfg.fmax_hz == 0.0) cfg.fmax_hz = nyquist;
  if (!(cfg.fmin_hz >= 0) || !(cfg.fmin_hz < cfg.fmax_hz) || cfg.fmax_hz > nyquist) {
    throw ConfigError("features: need 0 <= fmin_hz < fmax_hz <= sample_rate_hz / 2");
  }
  if (cfg.fft_size != 0) {
    if (cfg.fft_size < 0 || !std::has_single_bit(static_cast<unsigned>(cfg.fft_size))) {
      throw ConfigError("features.fft_size must be a power of two");
    }
    if (static_cast<std::size_t>(cfg.fft_size) < cfg.window_samples()) {
      throw ConfigError("features.fft_size is shorter than the analysis window");
    }
    if (const long row = first_empty_row(build_filterbank(cfg)); row >= 0) {
      throw ConfigError("features: mel_bins " + std::to_string(cfg.mel_bins) + " too large for fft_size " +
                        std::to_string(cfg.fft_size) + " (mel filter " + std::to_string(row) +
                        " covers no FFT bin)");
    }
    return cfg;
  }
  cfg.fft_size = static_cast<int>(std::bit_ceil(cfg.window_samples()));
  while (first_empty_row(build_filterbank(cfg)) >= 0) {
    if (cfg.fft_size >= kMaxFftSize) {
      throw ConfigError("features: no FFT size up to " + std::to_string(kMaxFftSize) + " resolves " +
                        std::to_string(cfg.mel_bins) + " mel filters");
    }
    cfg.fft_size *= 2;
  }
  return cfg;
}

std::size_t frame_count(std::size_t length, std::size_t window, std::size_t hop) {
  if (length < window) return 0;
  return 1 + (length - window) / hop;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

void fft_inplace(std::span<std::complex<double>> x) {
  const std::size_t n = x.size();
  if (n == 0 || !std::has_single_bit(n)) throw ContractError("fft size must be a power of two");
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(x[i], x[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double angle = -2.0 * std::numbers::pi / static_cast<double>(len);
    for (std::size_t k = 0; k < len / 2; ++k) {
      const std::complex<double> w(std::cos(angle * static_cast<double>(k)), std::sin(angle * static_cast<double>(k)));
      for (std::size_t i = 0; i < n; i += len) {
        const auto u = x[i + k];
        const auto v = x[i + k + len / 2] * w;
        x[i + k] = u + v;
        x[i + k + len / 2] = u - v;
      }
    }
  }
}

Tensor stft_magnitude(const Waveform& w, const FeatureConfig& raw_cfg) {
  const FeatureConfig cfg = raw_cfg.fft_size == 0 ? resolve(raw_cfg) : raw_cfg;
  if (w.sample_rate_hz != cfg.sample_rate_hz) {
    throw ContractError("stft: waveform at " + std::to_string(w.sample_rate_hz) + " Hz, features expect " +
                        std::to_string(cfg.sample_rate_hz) + " Hz");
  }
  const std::size_t win = cfg.window_samples();
  const std::size_t hop = cfg.hop_samples();
  const std::size_t frames = frame_count(w.samples.size(), win, hop);
  if (frames == 0) {
    throw ContractError("stft: waveform of " + std::to_string(w.samples.size()) +
                        " samples is shorter than one window (" + std::to_string(win) + ")");
  }
  const std::size_t n_fft = static_cast<std::size_t>(cfg.fft_size);
  const std::size_t bins = cfg.fft_bins();
  std::vector<double> hann(win);
  for (std::size_t i = 0; i < win; ++i) {
    hann[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(win));
  }
  Tensor mag({bins, frames});
  std::vector<std::complex<double>> buf(n_fft);
  for (std::size_t t = 0; t < frames; ++t) {
    std::fill(buf.begin(), buf.end(), std::complex<double>{});
    const float* frame = w.samples.data() + t * hop;
    for (std::size_t i = 0; i < win; ++i) buf[i] = hann[i] * static_cast<double>(frame[i]);
    fft_inplace(buf);
    for (std::size_t k = 0; k < bins; ++k) mag(k, t) = static_cast<Scalar>(std::abs(buf[k]));
  }
  return mag;
}

Tensor mel_filterbank(const FeatureConfig& raw_cfg) {
  const FeatureConfig cfg = resolve(raw_cfg);
  return build_filterbank(cfg);
}

Tensor log_mel(const Tensor& stft_mag, const Tensor& filterbank, const FeatureConfig& cfg) {
  if (filterbank.rank() != 2 || stft_mag.rank() != 2 || filterbank.cols() != stft_mag.rows()) {
    throw DimensionError("log_mel: filterbank " + shape_string(filterbank.shape()) + " does not fit STFT " +
                         shape_string(stft_mag.shape()));
  }
  const std::size_t m = filterbank.rows(), bins = filterbank.cols(), frames = stft_mag.cols();
  Tensor out({m, frames});
  std::vector<double> acc(frames);
  for (std::size_t r = 0; r < m; ++r) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t k = 0; k < bins; ++k) {
      const double wgt = filterbank(r, k);
      if (wgt == 0.0) continue;
      const Scalar* row = stft_mag.raw() + k * frames;
      for (std::size_t t = 0; t < frames; ++t) acc[t] += wgt * static_cast<double>(row[t]) * row[t];
    }
    for (std::size_t t = 0; t < frames; ++t) out(r, t) = static_cast<Scalar>(std::log(acc[t] + cfg.log_floor));
  }
  return out;
}

Tensor pad_frames(const Tensor& spec, std::size_t frames, Scalar value) {
  const std::size_t rows = spec.rows(), cols = spec.cols();
  if (frames < cols) {
    throw DimensionError("pad_frames: cannot pad " + std::to_string(cols) + " frames down to " + std::to_string(frames));
  }
  Tensor out({rows, frames}, value);
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(spec.raw() + r * cols, cols, out.raw() + r * frames);
  return out;
}

FeatureExtractor::FeatureExtractor(FeatureConfig cfg) : cfg_(resolve(cfg)), filterbank_(build_filterbank(cfg_)) {}

std::size_t FeatureExtractor::output_frames(std::size_t length) const { return length / cfg_.hop_samples(); }

Tensor FeatureExtractor::operator()(const Waveform& w) const {
  const Tensor mag = stft_magnitude(w, cfg_);
  const Tensor spec = log_mel(mag, filterbank_, cfg_);
  return pad_frames(spec, output_frames(w.samples.size()), static_cast<Scalar>(std::log(cfg_.log_floor)));
}

NormStats compute_norm_stats(std::span<const Tensor> spectrograms, SplitRole source) {
  double total = 0;
  std::size_t count = 0;
  for (const auto& s : spectrograms) {
    for (Scalar v : s.data()) total += v;
    count += s.size();
  }
  if (count == 0) throw ContractError("normalization statistics need at least one spectrogram");
  const double mean = total / static_cast<double>(count);
  double sq = 0;
  for (const auto& s : spectrograms) {
    for (Scalar v : s.data()) sq += (v - mean) * (v - mean);
  }
  return NormStats{mean, std::sqrt(sq / static_cast<double>(count)), source};
}

Tensor normalize(const Tensor& spec, const NormStats& stats) {
  if (stats.source != SplitRole::kTrain) {
    throw ContractError("normalize: statistics must be computed on the training split");
  }
  const double inv = 1.0 / std::max(stats.std, kStdFloor);
  Tensor out = spec;
  for (auto& v : out.data()) v = static_cast<Scalar>((v - stats.mean) * inv);
  return out;
}

PatchGrid patch_grid(std::size_t mel_bins, std::size_t frames) {
  if (mel_bins < PatchGrid::kPatch || frames < PatchGrid::kPatch) {
    throw ContractError("patch_grid: axes " + std::to_string(mel_bins) + "x" + std::to_string(frames) +
                        " smaller than a 16x16 patch");
  }
  return PatchGrid{(mel_bins - PatchGrid::kPatch) / PatchGrid::kStride + 1,
                   (frames - PatchGrid::kPatch) / PatchGrid::kStride + 1};
}

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// ---- cache

namespace {

constexpr char kCacheMagic[4] = {'L', 'V', 'F', 'C'};
constexpr std::uint32_t kCacheVersion = 1;

template <class T>
void write_le(std::ofstream& out, T v) {
  unsigned char b[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) b[i] = static_cast<unsigned char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xFF);
  out.write(reinterpret_cast<const char*>(b), sizeof(T));
}

template <class T>
bool read_le(std::ifstream& in, T& v) {
  unsigned char b[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(b), sizeof(T))) return false;
  std::uint64_t acc = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) acc |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  v = static_cast<T>(acc);
  return true;
}

}  // namespace

FeatureCache::FeatureCache(std::filesystem::path dir, std::uint64_t config_hash)
    : dir_(std::move(dir)), hash_(config_hash) {
  std::filesystem::create_directories(dir_);
}

std::filesystem::path FeatureCache::path_for(const std::string& key) const {
  char name[32];
  std::snprintf(name, sizeof name, "%016llx.lvfc", static_cast<unsigned long long>(fnv1a(key)));
  return dir_ / name;
}

std::optional<Tensor> FeatureCache::load(const std::string& key) const {
  std::ifstream in(path_for(key), std::ios::binary);
  if (!in) return std::nullopt;
  char magic[4];
  std::uint32_t version = 0, rows = 0, cols = 0;
  std::uint64_t hash = 0;
  if (!in.read(magic, 4) || std::memcmp(magic, kCacheMagic, 4) != 0) return std::nullopt;
  if (!read_le(in, version) || version != kCacheVersion) return std::nullopt;
  if (!read_le(in, rows) || !read_le(in, cols) || !read_le(in, hash)) return std::nullopt;
  if (hash != hash_ || rows == 0 || cols == 0) return std::nullopt;
  Tensor t({rows, cols});
  for (auto& v : t.data()) {
    std::uint32_t bits;
    if (!read_le(in, bits)) return std::nullopt;
    float f;
    std::memcpy(&f, &bits, sizeof f);
    v = static_cast<Scalar>(f);
  }
  return t;
}

void FeatureCache::store(const std::string& key, const Tensor& spec) const {
  const auto path = path_for(key);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write feature cache entry " + path.string());
  out.write(kCacheMagic, 4);
  write_le(out, kCacheVersion);
  write_le(out, static_cast<std::uint32_t>(spec.rows()));
  write_le(out, static_cast<std::uint32_t>(spec.cols()));
  write_le(out, hash_);
  for (Scalar v : spec.data()) {
    const float f = static_cast<float>(v);
    std::uint32_t bits;
    std::memcpy(&bits, &f, sizeof bits);
    write_le(out, bits);
  }
}

}  // namespace lungvit
