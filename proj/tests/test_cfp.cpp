// Copyright 2026 The ftanet Authors
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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <complex>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <vector>

#include "audio_io.hpp"
#include "cfp.hpp"
#include "error.hpp"
#include "test_util.hpp"

using namespace ftanet;
using std::numbers::pi;

namespace {

AudioBuffer tone(double hz, double seconds, double amp = 1.0) {
  AudioBuffer b;
  b.samples.resize(static_cast<std::size_t>(seconds * 44100));
  for (std::size_t n = 0; n < b.samples.size(); ++n) b.samples[n] = static_cast<float>(amp * std::sin(2 * pi * hz * n / 44100.0));
  return b;
}

AudioBuffer sawtooth(double hz, double seconds) {
  AudioBuffer b;
  b.samples.resize(static_cast<std::size_t>(seconds * 44100));
  for (std::size_t n = 0; n < b.samples.size(); ++n) {
    const double phase = std::fmod(hz * n / 44100.0, 1.0);
    b.samples[n] = static_cast<float>(0.5 * (2.0 * phase - 1.0));
  }
  return b;
}

// Frames whose whole window lies inside the signal.
std::vector<int> interior_frames(std::size_t len, int window = 2048, int hop = 256) {
  std::vector<int> out;
  for (int t = 0; static_cast<std::size_t>(t) * hop + window / 2 <= len; ++t) {
    if (t * hop >= window / 2) out.push_back(t);
  }
  return out;
}

int argmax_bin(const CfpTensor& c, int frame, int channel) {
  int best = 0;
  for (int f = 1; f < c.n_bins(); ++f) {
    if (c.at(f, frame, channel) > c.at(best, frame, channel)) best = f;
  }
  return best;
}

int mean_profile_argmax(const CfpTensor& c, const std::vector<int>& frames, int channel) {
  std::vector<double> profile(static_cast<std::size_t>(c.n_bins()), 0.0);
  for (int t : frames)
    for (int f = 0; f < c.n_bins(); ++f) profile[static_cast<std::size_t>(f)] += c.at(f, t, channel);
  return static_cast<int>(std::max_element(profile.begin(), profile.end()) - profile.begin());
}

double grid_bin(double hz) { return std::round(60.0 * std::log2(hz / 31.0)); }

}  // namespace

TEST_CASE("grid formulas") {
  const LogFreqGrid g;
  CHECK(hz_to_bin(31.0, g) == 0);
  CHECK(hz_to_bin(62.0, g) == 60);
  CHECK(hz_to_bin(440.0, g) == 230);
  CHECK(hz_to_bin(1240.0, g) == 319);
  CHECK(hz_to_bin(10.0, g) == 0);
  CHECK(hz_to_bin(5000.0, g) == 319);
  CHECK(bin_to_hz(0, g) == 31.0);
  CHECK(bin_to_hz(60, g) == doctest::Approx(62.0).epsilon(1e-15));
  CHECK(bin_to_hz(230, g) == doctest::Approx(31.0 * std::pow(2.0, 230.0 / 60.0)).epsilon(1e-15));
  CHECK(bin_to_hz(319, g) < 1250.0);
  for (int b = 0; b < 320; ++b) {
    CHECK(hz_to_bin(bin_to_hz(b, g), g) == b);
    if (b > 0) CHECK(bin_to_hz(b, g) > bin_to_hz(b - 1, g));
  }
  CHECK_THROWS_AS(bin_to_hz(320, g), Error);
  CHECK_THROWS_AS(bin_to_hz(-1, g), Error);
  CHECK_THROWS_AS(hz_to_bin(0.0, g), Error);
}

TEST_CASE("stft examples") {
  AudioBuffer zero;
  zero.samples.assign(10000, 0.0f);
  const Spectrogram z = stft(zero);
  CHECK(z.n_bins == 1025);
  CHECK(z.n_frames == 10000 / 256 + 1);
  for (float m : z.mags) CHECK(m == 0.0f);

  const AudioBuffer sine = tone(440.0, 1.0);
  const Spectrogram s = stft(sine);
  for (int t : interior_frames(sine.samples.size())) {
    int best = 0;
    for (int k = 1; k < s.n_bins; ++k) {
      if (s.at(k, t) > s.at(best, t)) best = k;
    }
    REQUIRE(best == static_cast<int>(std::lround(440.0 * 2048 / 44100)));
  }

  AudioBuffer dc;
  dc.samples.assign(20000, 1.0f);
  const Spectrogram d = stft(dc);
  for (int t : interior_frames(dc.samples.size())) {
    int best = 0;
    for (int k = 1; k < d.n_bins; ++k) {
      if (d.at(k, t) > d.at(best, t)) best = k;
    }
    CHECK(best == 0);
  }
  CHECK(s.frame_times[10] == doctest::Approx(10 * 256.0 / 44100.0));
  CHECK(s.bin_hz[20] == doctest::Approx(20 * 44100.0 / 2048));
}

TEST_CASE("stft matches a direct DFT of the centered Hann frame") {
  ftanet::testing::Rng rng(3);
  AudioBuffer noise;
  for (int i = 0; i < 6000; ++i) noise.samples.push_back(static_cast<float>(rng.uniform(-1, 1)));
  const Spectrogram s = stft(noise);
  for (int t : {0, 3, 12, s.n_frames - 1}) {
    for (int k : {0, 1, 17, 300, 1024}) {
      std::complex<double> acc = 0.0;
      for (int n = 0; n < 2048; ++n) {
        const long idx = static_cast<long>(t) * 256 - 1024 + n;
        if (idx < 0 || idx >= static_cast<long>(noise.samples.size())) continue;
        const double w = 0.5 - 0.5 * std::cos(2 * pi * n / 2048.0);
        acc += w * noise.samples[static_cast<std::size_t>(idx)] * std::polar(1.0, -2 * pi * k * n / 2048.0);
      }
      CHECK(s.at(k, t) == doctest::Approx(std::abs(acc)).epsilon(1e-5));
    }
  }
}

TEST_CASE("cfp sanity: 440 Hz sine peaks at bin 230 in channel 0 on every interior frame") {
  const AudioBuffer sine = tone(440.0, 1.0);
  const CfpTensor c = compute_cfp(sine);
  CHECK(grid_bin(440.0) == 230);
  const auto frames = interior_frames(sine.samples.size());
  REQUIRE(frames.size() > 100);
  for (int t : frames) REQUIRE(argmax_bin(c, t, 0) == 230);
}

TEST_CASE("cfp sanity: 220 Hz sawtooth peaks at the fundamental in channels 1 and 2") {
  const AudioBuffer saw = sawtooth(220.0, 1.0);
  const CfpTensor c = compute_cfp(saw);
  CHECK(grid_bin(220.0) == 170);
  const auto frames = interior_frames(saw.samples.size());
  for (int ch : {1, 2}) CHECK(mean_profile_argmax(c, frames, ch) == 170);
  int ch1_hits = 0, ch2_hits = 0;
  for (int t : frames) {
    ch1_hits += argmax_bin(c, t, 1) == 170;
    ch2_hits += argmax_bin(c, t, 2) == 170;
  }
  CHECK(ch1_hits == static_cast<int>(frames.size()));
  MESSAGE("channel 2 per-frame argmax at 170 in " << ch2_hits << "/" << frames.size() << " interior frames");
}

TEST_CASE("cfp: silence, range, normalization, gain invariance") {
  AudioBuffer quiet;
  quiet.samples.assign(5000, 0.0f);
  const CfpTensor zero = compute_cfp(quiet);
  CHECK(zero.n_bins() == 320);
  CHECK(zero.n_frames == 5000 / 256 + 1);
  for (float v : zero.data) CHECK(v == 0.0f);

  AudioBuffer mix = tone(300.0, 0.5, 0.3);
  const AudioBuffer saw = sawtooth(150.0, 0.5);
  for (std::size_t i = 0; i < mix.samples.size(); ++i) mix.samples[i] += 0.5f * saw.samples[i];
  const CfpTensor a = compute_cfp(mix);
  float peak[3] = {0, 0, 0};
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    REQUIRE(a.data[i] >= 0.0f);
    peak[i % 3] = std::max(peak[i % 3], a.data[i]);
  }
  for (float p : peak) CHECK(p == 1.0f);

  for (float gain : {0.01f, 0.37f, 2.5f}) {
    AudioBuffer scaled = mix;
    for (float& v : scaled.samples) v *= gain;
    const CfpTensor b = compute_cfp(scaled);
    double worst = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) worst = std::max(worst, static_cast<double>(std::abs(a.data[i] - b.data[i])));
    CHECK(worst < 1e-5);
  }
}

namespace {

// Triangle weights over uniformly spaced samples, zero at `left` / `right`,
// at least one sample per side, normalized to unit sum.
std::vector<double> triangle(double center, double left, double right, std::size_t n) {
  const double lo = std::max(center - left, 1.0), hi = std::max(right - center, 1.0);
  std::vector<double> w(n, 0.0);
  double total = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double x = static_cast<double>(k);
    const double v = x <= center ? 1.0 - (center - x) / lo : 1.0 - (x - center) / hi;
    w[k] = std::max(0.0, v);
    total += w[k];
  }
  for (double& v : w) v /= total;
  return w;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

TEST_CASE("cfp matches a direct-transform transcription on a small configuration") {
  LogFreqGrid grid;
  grid.n_bins = 36;
  grid.bins_per_octave = 12;
  grid.f_min = 100.0;
  grid.f_max = 900.0;
  CfpConfig cfg;
  cfg.window = 512;
  cfg.hop = 256;
  cfg.fft_size = 1024;
  const double fs = 44100.0;
  const int N = cfg.fft_size, W = cfg.window, H = N / 2 + 1;

  ftanet::testing::Rng rng(12);
  AudioBuffer audio = sawtooth(180.0, 0.03);
  for (float& v : audio.samples) v += static_cast<float>(rng.uniform(-0.05, 0.05));
  const CfpTensor got = compute_cfp(audio, grid, cfg);
  const int T = static_cast<int>(audio.samples.size()) / cfg.hop + 1;
  REQUIRE(got.n_frames == T);
  REQUIRE(got.n_bins() == 36);

  const int k_hp = static_cast<int>(std::ceil(cfg.freq_hp_hz * N / fs));
  const int q_hp = static_cast<int>(std::ceil(cfg.quef_hp_s * fs - 1e-9));
  const double step = std::exp2(1.0 / 12);
  std::vector<std::vector<double>> fbank, lbank;
  for (int b = 0; b < 36; ++b) {
    const double c = 100.0 * std::exp2(b / 12.0);
    const double per_bin = fs / N;
    fbank.push_back(triangle(c / per_bin, c / step / per_bin, c * step / per_bin, static_cast<std::size_t>(H)));
    lbank.push_back(triangle(fs / c, fs / (c * step), fs * step / c, static_cast<std::size_t>(H)));
  }

  std::vector<double> want(static_cast<std::size_t>(36 * T * 3));
  for (int t = 0; t < T; ++t) {
    std::vector<double> x(static_cast<std::size_t>(N), 0.0);
    for (int n = 0; n < W; ++n) {
      const long idx = static_cast<long>(t) * cfg.hop - W / 2 + n;
      if (idx >= 0 && idx < static_cast<long>(audio.samples.size())) {
        x[static_cast<std::size_t>(n)] = audio.samples[static_cast<std::size_t>(idx)] * (0.5 - 0.5 * std::cos(2 * pi * n / W));
      }
    }
    std::vector<double> z0(static_cast<std::size_t>(H)), z1(static_cast<std::size_t>(N)), z2(static_cast<std::size_t>(H));
    for (int k = 0; k < H; ++k) {
      std::complex<double> acc = 0.0;
      for (int n = 0; n < N; ++n) acc += x[static_cast<std::size_t>(n)] * std::polar(1.0, -2 * pi * k * n / N);
      z0[static_cast<std::size_t>(k)] = k < k_hp ? 0.0 : std::pow(std::norm(acc), cfg.gammas[0]);
    }
    for (int q = 0; q < N; ++q) {
      double acc = 0.0;  // inverse DFT of the symmetric spectrum
      for (int k = 0; k < N; ++k) acc += z0[static_cast<std::size_t>(k <= N / 2 ? k : N - k)] * std::cos(2 * pi * k * q / N);
      acc /= N;
      const bool low = q < q_hp || N - q < q_hp;
      z1[static_cast<std::size_t>(q)] = low || acc <= 0 ? 0.0 : std::pow(acc, cfg.gammas[1]);
    }
    for (int k = 0; k < H; ++k) {
      double acc = 0.0;
      for (int q = 0; q < N; ++q) acc += z1[static_cast<std::size_t>(q)] * std::cos(2 * pi * k * q / N);
      z2[static_cast<std::size_t>(k)] = k < k_hp || acc <= 0 ? 0.0 : std::pow(acc, cfg.gammas[2]);
    }
    const std::vector<double> z1_half(z1.begin(), z1.begin() + H);
    for (int b = 0; b < 36; ++b) {
      const auto i = static_cast<std::size_t>((b * T + t) * 3);
      want[i] = dot(fbank[static_cast<std::size_t>(b)], z0);
      want[i + 1] = dot(lbank[static_cast<std::size_t>(b)], z1_half);
      want[i + 2] = dot(fbank[static_cast<std::size_t>(b)], z2);
    }
  }
  double peak[3] = {0, 0, 0};
  for (std::size_t i = 0; i < want.size(); ++i) peak[i % 3] = std::max(peak[i % 3], want[i]);
  for (std::size_t i = 0; i < want.size(); ++i) {
    INFO("bin " << i / 3 / T << " frame " << (i / 3) % T << " channel " << i % 3);
    REQUIRE(got.data[i] == doctest::Approx(want[i] / peak[i % 3]).epsilon(1e-5).scale(1e-5));
  }
}

TEST_CASE("cfp files round-trip") {
  const auto dir = std::filesystem::temp_directory_path() / "ftanet_test_cfp";
  std::filesystem::create_directories(dir);
  const CfpTensor c = compute_cfp(tone(330.0, 0.2));
  save_cfp(dir / "x.cfp", c);
  const CfpTensor back = load_cfp(dir / "x.cfp");
  CHECK(back.n_frames == c.n_frames);
  CHECK(back.n_bins() == 320);
  CHECK(back.hop == 256);
  CHECK(back.sample_rate == 44100.0);
  CHECK(back.data == c.data);

  std::ifstream in(dir / "x.cfp", std::ios::binary);
  std::string bytes{std::istreambuf_iterator<char>(in), {}};
  CHECK(bytes.substr(0, 4) == "CFP1");
  std::ofstream(dir / "short.cfp", std::ios::binary) << bytes.substr(0, bytes.size() - 4);
  try {
    load_cfp(dir / "short.cfp");
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kCorruptFile);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("cfp argument checks") {
  const AudioBuffer a = tone(440.0, 0.1);
  CfpConfig bad;
  bad.gammas[1] = 0.0;
  CHECK_THROWS_AS(compute_cfp(a, {}, bad), Error);
  AudioBuffer other = a;
  other.sample_rate = 22050;
  CHECK_THROWS_AS(compute_cfp(other), Error);
  CHECK_THROWS_AS(compute_cfp(AudioBuffer{}), Error);
}
