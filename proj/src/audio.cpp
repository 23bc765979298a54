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

#include "lungvit/audio.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numbers>
#include <numeric>
#include <string>

#include "lungvit/common.hpp"
#include "lungvit/rng.hpp"

namespace lungvit {

namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

std::uint16_t le16(const std::uint8_t* p) { return static_cast<std::uint16_t>(p[0] | (p[1] << 8)); }

std::uint32_t le32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void put16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

void put_tag(std::vector<std::uint8_t>& out, const char* tag) { out.insert(out.end(), tag, tag + 4); }

struct Format {
  std::uint16_t code = 0;
  int channels = 0;
  int sample_rate = 0;
  int bits = 0;
};

float decode_sample(const std::uint8_t* p, const Format& fmt) {
  if (fmt.code == kFormatFloat) {
    float v;
    const std::uint32_t bits = le32(p);
    std::memcpy(&v, &bits, sizeof v);
    return std::isfinite(v) ? v : 0.0f;
  }
  switch (fmt.bits) {
    case 16:
      return static_cast<float>(static_cast<std::int16_t>(le16(p))) / 32768.0f;
    case 24: {
      std::int32_t v = static_cast<std::int32_t>(p[0] | (p[1] << 8) | (p[2] << 16));
      if (v & 0x800000) v -= 0x1000000;
      return static_cast<float>(static_cast<double>(v) / 8388608.0);
    }
    default:
      return static_cast<float>(static_cast<double>(static_cast<std::int32_t>(le32(p))) / 2147483648.0);
  }
}

// Modified Bessel function of the first kind, order zero (power series).
double bessel_i0(double x) {
  double sum = 1.0, term = 1.0;
  const double q = x * x / 4.0;
  for (int k = 1; k < 200; ++k) {
    term *= q / (static_cast<double>(k) * k);
    sum += term;
    if (term < sum * 1e-17) break;
  }
  return sum;
}

}  // namespace

Waveform decode_wav(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 12) throw DecodeError("RIFF header: truncated (" + std::to_string(bytes.size()) + " bytes)");
  if (std::memcmp(bytes.data(), "RIFF", 4) != 0) throw DecodeError("RIFF header: missing 'RIFF' tag");
  if (std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) throw DecodeError("RIFF header: form type is not 'WAVE'");

  Format fmt;
  bool have_fmt = false;
  std::span<const std::uint8_t> data;
  bool have_data = false;

  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::uint8_t* chunk = bytes.data() + pos;
    const std::string id(reinterpret_cast<const char*>(chunk), 4);
    std::size_t size = le32(chunk + 4);
    const std::size_t body = pos + 8;
    if (id == "fmt ") {
      if (size < 16 || body + 16 > bytes.size()) throw DecodeError("fmt chunk: truncated");
      const std::uint8_t* f = bytes.data() + body;
      fmt.code = le16(f);
      fmt.channels = le16(f + 2);
      fmt.sample_rate = static_cast<int>(le32(f + 4));
      fmt.bits = le16(f + 14);
      if (fmt.code == kFormatExtensible) {
        if (size < 40 || body + 26 > bytes.size()) throw DecodeError("fmt chunk: truncated extensible header");
        fmt.code = le16(f + 24);
      }
      have_fmt = true;
    } else if (id == "data") {
      if (body + size > bytes.size()) {
        warn("data chunk: declared " + std::to_string(size) + " bytes, only " +
             std::to_string(bytes.size() - body) + " present; decoding what is there");
        size = bytes.size() - body;
      }
      data = bytes.subspan(body, size);
      have_data = true;
    }
    pos = body + size + (size & 1);
  }

  if (!have_fmt) throw DecodeError("fmt chunk: missing");
  if (!have_data) throw DecodeError("data chunk: missing");
  const bool pcm_ok = fmt.code == kFormatPcm && (fmt.bits == 16 || fmt.bits == 24 || fmt.bits == 32);
  const bool float_ok = fmt.code == kFormatFloat && fmt.bits == 32;
  if (!pcm_ok && !float_ok) {
    throw DecodeError("fmt chunk: unsupported codec (format " + std::to_string(fmt.code) + ", " +
                      std::to_string(fmt.bits) + " bits)");
  }
  if (fmt.channels < 1) throw DecodeError("fmt chunk: zero channels");
  if (fmt.sample_rate <= 0) throw DecodeError("fmt chunk: invalid sample rate");

  const std::size_t sample_bytes = static_cast<std::size_t>(fmt.bits / 8);
  const std::size_t frame_bytes = sample_bytes * static_cast<std::size_t>(fmt.channels);
  const std::size_t frames = data.size() / frame_bytes;
  if (frames == 0) throw DecodeError("data chunk: no complete sample frames");

  Waveform w;
  w.sample_rate_hz = fmt.sample_rate;
  w.samples.resize(frames);
  for (std::size_t i = 0; i < frames; ++i) {
    const std::uint8_t* frame = data.data() + i * frame_bytes;
    double acc = 0;
    for (int c = 0; c < fmt.channels; ++c) acc += decode_sample(frame + c * sample_bytes, fmt);
    const double mono = fmt.channels == 1 ? acc : acc / fmt.channels;
    w.samples[i] = static_cast<float>(std::clamp(mono, -1.0, 1.0));
  }
  return w;
}

Waveform read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_wav(bytes);
  } catch (const DecodeError& e) {
    throw DecodeError(path.string() + ": " + e.what());
  }
}

std::vector<std::uint8_t> encode_wav(std::span<const float> interleaved, int channels, int sample_rate_hz,
                                     WavEncoding encoding) {
  if (channels < 1 || sample_rate_hz <= 0) throw ContractError("encode_wav: invalid channels or rate");
  const int bits = encoding == WavEncoding::kPcm16 ? 16 : 32;
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(interleaved.size() * (bits / 8));
  std::vector<std::uint8_t> out;
  out.reserve(44 + data_bytes);
  put_tag(out, "RIFF");
  put32(out, 36 + data_bytes);
  put_tag(out, "WAVE");
  put_tag(out, "fmt ");
  put32(out, 16);
  put16(out, encoding == WavEncoding::kPcm16 ? kFormatPcm : kFormatFloat);
  put16(out, static_cast<std::uint16_t>(channels));
  put32(out, static_cast<std::uint32_t>(sample_rate_hz));
  put32(out, static_cast<std::uint32_t>(sample_rate_hz * channels * bits / 8));
  put16(out, static_cast<std::uint16_t>(channels * bits / 8));
  put16(out, static_cast<std::uint16_t>(bits));
  put_tag(out, "data");
  put32(out, data_bytes);
  for (float s : interleaved) {
    if (encoding == WavEncoding::kPcm16) {
      const double scaled = std::round(static_cast<double>(s) * 32768.0);
      put16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(std::clamp(scaled, -32768.0, 32767.0))));
    } else {
      std::uint32_t raw;
      std::memcpy(&raw, &s, sizeof raw);
      put32(out, raw);
    }
  }
  return out;
}

void write_wav(const std::filesystem::path& path, const Waveform& w, WavEncoding encoding) {
  const auto bytes = encode_wav(w.samples, 1, w.sample_rate_hz, encoding);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Waveform resample(const Waveform& w, int target_hz) {
  if (target_hz <= 0) throw ContractError("resample: target rate must be positive");
  if (w.sample_rate_hz <= 0) throw ContractError("resample: source rate must be positive");
  if (w.sample_rate_hz == target_hz) return w;

  const std::int64_t g = std::gcd(w.sample_rate_hz, target_hz);
  const std::int64_t up = target_hz / g;
  const std::int64_t down = w.sample_rate_hz / g;
  const std::int64_t in_len = static_cast<std::int64_t>(w.samples.size());
  const std::int64_t out_len = (in_len * up + down / 2) / down;

  // Cutoff in cycles per input sample, slightly below the lower Nyquist.
  constexpr double kRolloff = 0.92;
  constexpr double kZeroCrossings = 16.0;
  constexpr double kBeta = 8.6;
  const double cutoff = 0.5 * kRolloff * std::min(1.0, static_cast<double>(up) / static_cast<double>(down));
  const double half_width = kZeroCrossings / (2.0 * cutoff);
  const std::int64_t reach = static_cast<std::int64_t>(std::ceil(half_width));
  const std::size_t taps = static_cast<std::size_t>(2 * reach);
  const double i0_beta = bessel_i0(kBeta);

  auto branch = [&](std::int64_t phase) {
    // Tap m multiplies input sample i + m, at distance frac - m from the output instant.
    std::vector<double> h(taps);
    const double frac = static_cast<double>(phase) / static_cast<double>(up);
    double total = 0;
    for (std::size_t t = 0; t < taps; ++t) {
      const double m = static_cast<double>(static_cast<std::int64_t>(t) - reach + 1);
      const double tau = frac - m;
      const double x = tau / half_width;
      double v = 0;
      if (std::abs(x) < 1.0) {
        const double arg = 2.0 * cutoff * tau;
        const double sinc = arg == 0.0 ? 1.0 : std::sin(std::numbers::pi * arg) / (std::numbers::pi * arg);
        v = 2.0 * cutoff * sinc * bessel_i0(kBeta * std::sqrt(1.0 - x * x)) / i0_beta;
      }
      h[t] = v;
      total += v;
    }
    for (auto& v : h) v /= total;
    return h;
  };

  constexpr std::int64_t kMaxCachedPhases = 8192;
  std::vector<std::vector<double>> table;
  if (up <= kMaxCachedPhases) {
    table.reserve(static_cast<std::size_t>(up));
    for (std::int64_t p = 0; p < up; ++p) table.push_back(branch(p));
  }

  Waveform out;
  out.sample_rate_hz = target_hz;
  out.samples.resize(static_cast<std::size_t>(out_len));
  std::vector<double> scratch;
  for (std::int64_t n = 0; n < out_len; ++n) {
    const std::int64_t num = n * down;
    const std::int64_t base = num / up;
    const std::int64_t phase = num % up;
    const std::vector<double>* h;
    if (!table.empty()) {
      h = &table[static_cast<std::size_t>(phase)];
    } else {
      scratch = branch(phase);
      h = &scratch;
    }
    double acc = 0;
    for (std::size_t t = 0; t < taps; ++t) {
      const std::int64_t j = base + static_cast<std::int64_t>(t) - reach + 1;
      if (j < 0 || j >= in_len) continue;
      acc += (*h)[t] * static_cast<double>(w.samples[static_cast<std::size_t>(j)]);
    }
    out.samples[static_cast<std::size_t>(n)] = static_cast<float>(std::clamp(acc, -1.0, 1.0));
  }
  return out;
}

Waveform slice_cycle(const Waveform& w, const CycleAnnotation& cycle) {
  constexpr double kSlackS = 0.05;
  const double duration = w.duration_s();
  const auto len = static_cast<std::int64_t>(w.samples.size());
  const auto first = static_cast<std::int64_t>(std::llround(cycle.start_s * w.sample_rate_hz));
  auto last = static_cast<std::int64_t>(std::llround(cycle.end_s * w.sample_rate_hz));
  if (cycle.start_s < 0 || first >= len) {
    throw SliceError("cycle start " + std::to_string(cycle.start_s) + " s is beyond the end of a " +
                     std::to_string(duration) + " s recording");
  }
  if (cycle.end_s > duration + kSlackS) {
    warn("cycle end " + std::to_string(cycle.end_s) + " s exceeds recording length " + std::to_string(duration) +
         " s; clamped");
  }
  last = std::min(last, len);
  if (last <= first) throw SliceError("cycle [" + std::to_string(cycle.start_s) + ", " +
                                      std::to_string(cycle.end_s) + ") is empty at this sample rate");
  Waveform out;
  out.sample_rate_hz = w.sample_rate_hz;
  out.samples.assign(w.samples.begin() + first, w.samples.begin() + last);
  return out;
}

std::size_t target_length(const FixDurationPolicy& policy, int sample_rate_hz) {
  if (!(policy.target_s > 0)) throw ContractError("fix_duration: target duration must be positive");
  return static_cast<std::size_t>(std::llround(policy.target_s * sample_rate_hz));
}

std::size_t crop_offset(std::size_t length, int sample_rate_hz, const FixDurationPolicy& policy) {
  const std::size_t target = target_length(policy, sample_rate_hz);
  if (length <= target) return 0;
  const std::size_t excess = length - target;
  if (policy.mode == CropMode::kRandomCrop) {
    Rng rng(policy.rng_seed);
    return static_cast<std::size_t>(rng.index(excess + 1));
  }
  if (policy.fixed_start_s < 0) throw ContractError("fix_duration: fixed start must be non-negative");
  const auto start = static_cast<std::size_t>(std::llround(policy.fixed_start_s * sample_rate_hz));
  return std::min(start, excess);
}

Waveform fix_duration(const Waveform& w, const FixDurationPolicy& policy) {
  const std::size_t target = target_length(policy, w.sample_rate_hz);
  Waveform out;
  out.sample_rate_hz = w.sample_rate_hz;
  if (w.samples.size() <= target) {
    out.samples = w.samples;
    out.samples.resize(target, 0.0f);
    return out;
  }
  const std::size_t offset = crop_offset(w.samples.size(), w.sample_rate_hz, policy);
  out.samples.assign(w.samples.begin() + static_cast<std::ptrdiff_t>(offset),
                     w.samples.begin() + static_cast<std::ptrdiff_t>(offset + target));
  return out;
}

}  // namespace lungvit
