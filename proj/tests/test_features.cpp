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

#include <cmath>
#include <complex>
#include <filesystem>
#include <numbers>

#include "doctest.h"
#include "lungvit/common.hpp"
#include "lungvit/features.hpp"
#include "lungvit/rng.hpp"

using namespace lungvit;

namespace {

Waveform tone(double freq_hz, double seconds, double amplitude = 0.5, int rate = 4000) {
  Waveform w;
  w.sample_rate_hz = rate;
  w.samples.resize(static_cast<std::size_t>(std::llround(seconds * rate)));
  for (std::size_t i = 0; i < w.samples.size(); ++i)
    w.samples[i] = static_cast<float>(amplitude * std::sin(2.0 * std::numbers::pi * freq_hz * i / rate));
  return w;
}

// O(n^2) DFT of a Hann-windowed, zero-padded frame at one bin.
double naive_bin(std::span<const float> frame, std::size_t n_fft, std::size_t k) {
  const std::size_t win = frame.size();
  std::complex<double> acc{};
  for (std::size_t i = 0; i < win; ++i) {
    const double hann = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / win);
    const double ph = -2.0 * std::numbers::pi * static_cast<double>(k * i) / static_cast<double>(n_fft);
    acc += hann * frame[i] * std::complex<double>(std::cos(ph), std::sin(ph));
  }
  return std::abs(acc);
}

}  // namespace

TEST_CASE("resolve: default configuration") {
  const auto cfg = resolve(FeatureConfig{});
  CHECK(cfg.window_samples() == 100);
  CHECK(cfg.hop_samples() == 40);
  CHECK(cfg.fft_size == 512);
  CHECK(cfg.fmax_hz == 2000.0);

  FeatureConfig bad;
  bad.fft_size = 256;
  try {
    (void)resolve(bad);
    FAIL("expected config error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("too large for fft_size") != std::string::npos);
  }
  bad.fft_size = 300;
  CHECK_THROWS_AS((void)resolve(bad), ConfigError);
  FeatureConfig few;
  few.mel_bins = 8;
  CHECK_THROWS_AS((void)resolve(few), ConfigError);
  FeatureConfig coarse;
  coarse.mel_bins = 32;
  CHECK(resolve(coarse).fft_size == 128);
}

TEST_CASE("fft matches a direct DFT") {
  Rng rng(3);
  std::vector<std::complex<double>> x(64);
  for (auto& v : x) v = {rng.normal(), rng.normal()};
  auto y = x;
  fft_inplace(y);
  for (std::size_t k = 0; k < x.size(); ++k) {
    std::complex<double> acc{};
    for (std::size_t n = 0; n < x.size(); ++n) acc += x[n] * std::polar(1.0, -2.0 * std::numbers::pi * k * n / 64.0);
    REQUIRE(std::abs(acc - y[k]) < 1e-9);
  }
  std::vector<std::complex<double>> odd(12);
  CHECK_THROWS_AS(fft_inplace(odd), ContractError);
}

TEST_CASE("stft: tone peak and naive DFT agreement") {
  const auto cfg = resolve(FeatureConfig{});
  const auto w = tone(200, 1.0);
  const auto mag = stft_magnitude(w, cfg);
  CHECK(mag.rows() == 257);
  CHECK(mag.cols() == frame_count(4000, 100, 40));
  const std::size_t expected = static_cast<std::size_t>(std::lround(200.0 * 512 / 4000));
  for (std::size_t t : {std::size_t{0}, std::size_t{10}, mag.cols() - 1}) {
    std::size_t arg = 0;
    for (std::size_t k = 0; k < mag.rows(); ++k)
      if (mag(k, t) > mag(arg, t)) arg = k;
    CHECK(arg == expected);
    const std::span<const float> frame(w.samples.data() + t * 40, 100);
    for (std::size_t k = 0; k < mag.rows(); ++k) REQUIRE(std::abs(mag(k, t) - naive_bin(frame, 512, k)) < 1e-9);
  }

  Waveform silent;
  silent.sample_rate_hz = 4000;
  silent.samples.assign(4000, 0.0f);
  const auto silent_mag = stft_magnitude(silent, cfg);
  for (Scalar v : silent_mag.data()) REQUIRE(v == 0.0);

  Waveform wrong_rate = w;
  wrong_rate.sample_rate_hz = 8000;
  CHECK_THROWS_AS((void)stft_magnitude(wrong_rate, cfg), ContractError);
  Waveform tiny;
  tiny.sample_rate_hz = 4000;
  tiny.samples.assign(50, 0.0f);
  CHECK_THROWS_AS((void)stft_magnitude(tiny, cfg), ContractError);
}

TEST_CASE("mel scale and filterbank shape") {
  CHECK(hz_to_mel(0.0) == 0.0);
  CHECK(hz_to_mel(700.0) == doctest::Approx(781.17).epsilon(1e-5));
  for (double f : {0.0, 123.0, 700.0, 1999.0}) CHECK(mel_to_hz(hz_to_mel(f)) == doctest::Approx(f).epsilon(1e-12));

  const auto cfg = resolve(FeatureConfig{});
  const auto fb = mel_filterbank(cfg);
  REQUIRE(fb.rows() == 128);
  REQUIRE(fb.cols() == 257);
  for (std::size_t r = 0; r < fb.rows(); ++r) {
    bool falling = false, any = false;
    for (std::size_t k = 0; k < fb.cols(); ++k) {
      REQUIRE(fb(r, k) >= 0.0);
      REQUIRE(fb(r, k) <= 1.0);
      any = any || fb(r, k) > 0;
      if (k > 0 && fb(r, k) < fb(r, k - 1)) falling = true;
      if (falling && k > 0) REQUIRE(fb(r, k) <= fb(r, k - 1));
    }
    REQUIRE(any);
  }
  // Interior bins all receive weight; the exact endpoints sit on triangle feet.
  for (std::size_t k = 1; k + 1 < fb.cols(); ++k) {
    double col = 0;
    for (std::size_t r = 0; r < fb.rows(); ++r) col += fb(r, k);
    REQUIRE(col > 0.0);
  }
}

TEST_CASE("log_mel: floor, scaling and tone localization") {
  FeatureExtractor fx(FeatureConfig{});
  const auto& cfg = fx.config();

  Waveform silent;
  silent.sample_rate_hz = 4000;
  silent.samples.assign(4000, 0.0f);
  const auto silent_spec = fx(silent);
  for (Scalar v : silent_spec.data()) REQUIRE(v == doctest::Approx(std::log(1e-10)).epsilon(1e-12));

  // Doubling amplitude adds ln 4 wherever the floor is negligible.
  const auto a = tone(300, 1.0, 0.2);
  const auto b = tone(300, 1.0, 0.4);
  const auto la = fx(a), lb = fx(b);
  const auto mag_a = stft_magnitude(a, cfg);
  const auto raw = log_mel(mag_a, fx.filterbank(), cfg);
  std::size_t checked = 0;
  for (std::size_t r = 0; r < raw.rows(); ++r)
    for (std::size_t t = 0; t < raw.cols(); ++t) {
      if (la(r, t) < std::log(1e-10) + 25) continue;
      REQUIRE(std::abs(lb(r, t) - la(r, t) - std::log(4.0)) < 1e-9);
      ++checked;
    }
  CHECK(checked > 100);

  // The loudest band is the filter whose centre is nearest to the tone.
  for (double f : {150.0, 300.0, 800.0, 1500.0}) {
    CAPTURE(f);
    const auto spec = fx(tone(f, 1.0));
    const double lo = hz_to_mel(0), hi = hz_to_mel(2000);
    std::size_t nearest = 0;
    double best = 1e300;
    for (std::size_t r = 0; r < 128; ++r) {
      const double center = mel_to_hz(lo + (hi - lo) * (r + 1) / 129.0);
      if (std::abs(center - f) < best) {
        best = std::abs(center - f);
        nearest = r;
      }
    }
    std::size_t arg = 0;
    for (std::size_t r = 0; r < 128; ++r)
      if (spec(r, 20) > spec(arg, 20)) arg = r;
    CHECK(std::abs(static_cast<long>(arg) - static_cast<long>(nearest)) <= 1);
  }

  // Monotone in input energy.
  const auto quiet = fx(tone(500, 1.0, 0.1)), loud = fx(tone(500, 1.0, 0.3));
  for (std::size_t i = 0; i < quiet.size(); ++i) REQUIRE(loud[i] >= quiet[i]);
}

TEST_CASE("extractor: output frame count") {
  FeatureExtractor fx(FeatureConfig{});
  Rng rng(9);
  Waveform ten;
  ten.sample_rate_hz = 4000;
  ten.samples.resize(40000);
  for (auto& s : ten.samples) s = static_cast<float>(rng.uniform(-0.5, 0.5));
  const auto spec = fx(ten);
  CHECK(spec.rows() == 128);
  CHECK(spec.cols() == 1000);
  CHECK(frame_count(40000, 100, 40) == 998);
  const Scalar floor_value = static_cast<Scalar>(std::log(1e-10));
  for (std::size_t r = 0; r < 128; ++r) {
    CHECK(spec(r, 998) == floor_value);
    CHECK(spec(r, 999) == floor_value);
  }
  CHECK(fx(ten) == spec);
}

TEST_CASE("normalize: examples and provenance") {
  const Tensor x = Tensor::matrix({{1, 2}, {3, 4}});
  const Tensor xs[] = {x};
  const auto stats = compute_norm_stats(xs);
  CHECK(stats.mean == doctest::Approx(2.5));
  CHECK(stats.std == doctest::Approx(std::sqrt(1.25)));
  const auto z = normalize(x, stats);
  CHECK(z(0, 0) == doctest::Approx(-1.5 / std::sqrt(1.25)));
  double sum = 0;
  for (Scalar v : z.data()) sum += v;
  CHECK(std::abs(sum) < 1e-12);

  const Tensor flat({2, 2}, 7.0);
  const Tensor fs[] = {flat};
  const auto zero_std = compute_norm_stats(fs);
  CHECK(zero_std.std == 0.0);
  const auto zflat = normalize(flat, zero_std);
  for (Scalar v : zflat.data()) CHECK(v == 0.0);

  const auto eval_stats = compute_norm_stats(xs, SplitRole::kEval);
  CHECK_THROWS_AS((void)normalize(x, eval_stats), ContractError);
  CHECK_THROWS_AS((void)compute_norm_stats(std::span<const Tensor>{}), ContractError);
}

TEST_CASE("patch_grid: counts match brute-force enumeration") {
  CHECK(patch_grid(128, 1000) == PatchGrid{12, 99});
  CHECK(patch_grid(128, 1000).count() == 1188);
  CHECK(patch_grid(16, 16).count() == 1);
  CHECK(patch_grid(128, 200).count() == 12 * 19);
  for (std::size_t len = 16; len <= 600; ++len) {
    std::size_t n = 0;
    for (std::size_t start = 0; start + 16 <= len; start += 10) ++n;
    REQUIRE(patch_grid(len, 16).n_freq == n);
    REQUIRE(patch_grid(16, len).n_time == n);
  }
  CHECK_THROWS_AS((void)patch_grid(15, 100), ContractError);
  CHECK_THROWS_AS((void)patch_grid(128, 15), ContractError);
}

TEST_CASE("feature cache: round trip and invalidation") {
  const auto dir = std::filesystem::temp_directory_path() / "lungvit_test_feature_cache";
  std::filesystem::remove_all(dir);
  Rng rng(2);
  Tensor spec({16, 20});
  for (auto& v : spec.data()) v = static_cast<Scalar>(static_cast<float>(rng.normal()));

  FeatureCache cache(dir, 11);
  CHECK_FALSE(cache.load("a.wav#0").has_value());
  cache.store("a.wav#0", spec);
  const auto back = cache.load("a.wav#0");
  REQUIRE(back.has_value());
  CHECK(*back == spec);
  CHECK(cache.path_for("a.wav#0") != cache.path_for("a.wav#1"));

  FeatureCache other(dir, 12);
  CHECK_FALSE(other.load("a.wav#0").has_value());
  std::filesystem::remove_all(dir);
}
