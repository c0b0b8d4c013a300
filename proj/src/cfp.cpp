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

#include "cfp.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numbers>
#include <string>

#include "error.hpp"
#include "fft.hpp"

namespace ftanet {
namespace {

void check_grid(const LogFreqGrid& grid) {
  require(grid.n_bins > 0 && grid.bins_per_octave > 0 && grid.f_min > 0.0 &&
              grid.f_max > grid.f_min,
          ErrorCode::kInvalidArgument, "invalid log-frequency grid");
}

std::vector<double> hann(int n) {
  std::vector<double> w(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    w[static_cast<std::size_t>(i)] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / n);
  }
  return w;
}

int frame_count(std::size_t len, int hop) { return static_cast<int>(len / hop) + 1; }

// Copies the centered frame i into dst (size window), zero outside the signal.
void extract_frame(const AudioBuffer& buf, int frame, int window, int hop,
                   const std::vector<double>& win, std::span<double> dst) {
  const long start = static_cast<long>(frame) * hop - window / 2;
  const auto len = static_cast<long>(buf.samples.size());
  for (int n = 0; n < window; ++n) {
    const long idx = start + n;
    const double s = (idx >= 0 && idx < len) ? buf.samples[static_cast<std::size_t>(idx)] : 0.0;
    dst[static_cast<std::size_t>(n)] = s * win[static_cast<std::size_t>(n)];
  }
}

double rectify(double x, double gamma) { return x > 0.0 ? std::pow(x, gamma) : 0.0; }

// One row per grid bin: unit-sum triangle weights over uniformly spaced
// samples (linear frequency bins or integer lags).
struct Filterbank {
  struct Row {
    std::size_t first = 0;
    std::vector<double> weights;
  };
  std::vector<Row> rows;

  double apply(std::size_t bin, std::span<const double> samples) const {
    const Row& r = rows[bin];
    double acc = 0.0;
    for (std::size_t i = 0; i < r.weights.size(); ++i) acc += r.weights[i] * samples[r.first + i];
    return acc;
  }

  // Triangle peaking at `center` and reaching zero at `left` / `right`, all in
  // sample-index units. Each side spans at least one sample so every row has
  // support.
  void add_row(double center, double left, double right, std::size_t n_samples) {
    const double lo = std::max(center - left, 1.0);
    const double hi = std::max(right - center, 1.0);
    Row row;
    row.first = static_cast<std::size_t>(std::max(0.0, std::ceil(center - lo)));
    const auto last = std::min(n_samples - 1, static_cast<std::size_t>(std::floor(center + hi)));
    double total = 0.0;
    for (std::size_t k = row.first; k <= last; ++k) {
      const double x = static_cast<double>(k);
      const double w = x <= center ? 1.0 - (center - x) / lo : 1.0 - (x - center) / hi;
      row.weights.push_back(std::max(0.0, w));
      total += row.weights.back();
    }
    require(total > 0.0, ErrorCode::kInternal, "empty filterbank row");
    for (double& w : row.weights) w /= total;
    rows.push_back(std::move(row));
  }
};

// Grid bins over linear-frequency bins spaced bin_hz apart.
Filterbank frequency_filterbank(const LogFreqGrid& grid, double bin_hz, std::size_t n_bins) {
  Filterbank fb;
  const double step = std::exp2(1.0 / grid.bins_per_octave);
  for (int b = 0; b < grid.n_bins; ++b) {
    const double c = grid.center(b);
    fb.add_row(c / bin_hz, c / step / bin_hz, c * step / bin_hz, n_bins);
  }
  return fb;
}

// Grid bins over integer lags: pitch p corresponds to lag fs / p, so the
// triangle of bin b spans the lags of its neighbors' centers.
Filterbank lag_filterbank(const LogFreqGrid& grid, double fs, std::size_t n_lags) {
  Filterbank fb;
  const double step = std::exp2(1.0 / grid.bins_per_octave);
  for (int b = 0; b < grid.n_bins; ++b) {
    const double c = grid.center(b);
    fb.add_row(fs / c, fs / (c * step), fs * step / c, n_lags);
  }
  return fb;
}

void put_u32(std::ostream& out, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(b, 4);
}

template <typename T>
void put_le(std::ostream& out, T v) {
  static_assert(sizeof(T) == 4 || sizeof(T) == 8);
  using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  U raw;
  std::memcpy(&raw, &v, sizeof raw);
  char b[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) b[i] = static_cast<char>((raw >> (8 * i)) & 0xFF);
  out.write(b, sizeof b);
}

template <typename T>
T get_le(const std::uint8_t* p) {
  using U = std::conditional_t<sizeof(T) == 4, std::uint32_t,
                               std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint16_t>>;
  U raw = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) raw |= static_cast<U>(static_cast<U>(p[i]) << (8 * i));
  T v;
  std::memcpy(&v, &raw, sizeof v);
  return v;
}

}  // namespace

double LogFreqGrid::center(int bin) const {
  return f_min * std::exp2(static_cast<double>(bin) / bins_per_octave);
}

int hz_to_bin(double hz, const LogFreqGrid& grid) {
  require(hz > 0.0 && std::isfinite(hz), ErrorCode::kInvalidArgument,
          "frequency must be positive, got " + std::to_string(hz));
  const double b = std::round(grid.bins_per_octave * std::log2(hz / grid.f_min));
  return static_cast<int>(std::clamp(b, 0.0, static_cast<double>(grid.n_bins - 1)));
}

double bin_to_hz(int bin, const LogFreqGrid& grid) {
  require(bin >= 0 && bin < grid.n_bins, ErrorCode::kInvalidArgument,
          "bin index out of range: " + std::to_string(bin));
  return grid.center(bin);
}

Spectrogram stft(const AudioBuffer& buf, int window, int hop) {
  require(buf.sample_rate == kModelSampleRate, ErrorCode::kInvalidArgument,
          "stft expects 44100 Hz audio, got " + std::to_string(buf.sample_rate) +
              " Hz (resample first)");
  require(!buf.samples.empty(), ErrorCode::kEmptyInput, "empty audio");
  require(window > 0 && window % 2 == 0 && hop > 0, ErrorCode::kInvalidArgument,
          "invalid STFT window/hop");

  Spectrogram spec;
  spec.n_bins = window / 2 + 1;
  spec.n_frames = frame_count(buf.samples.size(), hop);
  spec.mags.assign(static_cast<std::size_t>(spec.n_bins) * spec.n_frames, 0.0F);
  for (int k = 0; k < spec.n_bins; ++k) {
    spec.bin_hz.push_back(static_cast<double>(k) * buf.sample_rate / window);
  }
  for (int i = 0; i < spec.n_frames; ++i) {
    spec.frame_times.push_back(static_cast<double>(i) * hop / buf.sample_rate);
  }

  RealFft fft(static_cast<std::size_t>(window));
  const auto win = hann(window);
  std::vector<double> frame(static_cast<std::size_t>(window));
  std::vector<std::complex<double>> bins(fft.n_bins());
  for (int i = 0; i < spec.n_frames; ++i) {
    extract_frame(buf, i, window, hop, win, frame);
    fft.forward(frame, bins);
    for (int k = 0; k < spec.n_bins; ++k) {
      spec.mags[static_cast<std::size_t>(k) * spec.n_frames + i] =
          static_cast<float>(std::abs(bins[static_cast<std::size_t>(k)]));
    }
  }
  return spec;
}

CfpTensor compute_cfp(const AudioBuffer& buf, const LogFreqGrid& grid, const CfpConfig& cfg) {
  check_grid(grid);
  require(!buf.samples.empty(), ErrorCode::kEmptyInput, "empty audio");
  require(buf.sample_rate == kModelSampleRate, ErrorCode::kInvalidArgument,
          "CFP expects 44100 Hz audio, got " + std::to_string(buf.sample_rate) + " Hz");
  for (double g : cfg.gammas) {
    require(g > 0.0, ErrorCode::kInvalidArgument, "CFP gammas must be positive");
  }
  require(cfg.freq_hp_hz >= 0.0 && cfg.quef_hp_s >= 0.0, ErrorCode::kInvalidArgument,
          "CFP high-pass cutoffs must be nonnegative");
  require(cfg.window > 0 && cfg.window % 2 == 0 && cfg.hop > 0 && cfg.fft_size >= cfg.window &&
              cfg.fft_size % 2 == 0,
          ErrorCode::kInvalidArgument, "invalid CFP window/hop/fft_size");

  const double fs = buf.sample_rate;
  const auto n_fft = static_cast<std::size_t>(cfg.fft_size);
  const std::size_t n_half = n_fft / 2 + 1;
  const double bin_hz = fs / static_cast<double>(n_fft);
  const auto first_freq_bin = static_cast<std::size_t>(std::ceil(cfg.freq_hp_hz / bin_hz));
  const auto first_lag = static_cast<std::size_t>(std::ceil(cfg.quef_hp_s * fs - 1e-9));

  const Filterbank freq_fb = frequency_filterbank(grid, bin_hz, n_half);
  const Filterbank lag_fb = lag_filterbank(grid, fs, n_half);

  CfpTensor out;
  out.grid = grid;
  out.hop = cfg.hop;
  out.sample_rate = fs;
  out.n_frames = frame_count(buf.samples.size(), cfg.hop);
  const auto n_bins = static_cast<std::size_t>(grid.n_bins);
  const auto n_frames = static_cast<std::size_t>(out.n_frames);
  std::vector<double> acc(n_bins * n_frames * kCfpChannels, 0.0);

  RealFft fft(n_fft);
  const auto win = hann(cfg.window);
  std::vector<double> frame(n_fft, 0.0);
  std::vector<std::complex<double>> spectrum(n_half);
  std::vector<double> z0(n_half), z1(n_fft), z2(n_half);

  for (std::size_t t = 0; t < n_frames; ++t) {
    std::fill(frame.begin(), frame.end(), 0.0);
    extract_frame(buf, static_cast<int>(t), cfg.window, cfg.hop, win,
                  std::span<double>(frame).first(static_cast<std::size_t>(cfg.window)));
    fft.forward(frame, spectrum);

    for (std::size_t k = 0; k < n_half; ++k) {
      z0[k] = k < first_freq_bin ? 0.0 : rectify(std::norm(spectrum[k]), cfg.gammas[0]);
    }

    for (std::size_t k = 0; k < n_half; ++k) spectrum[k] = {z0[k], 0.0};
    fft.inverse(spectrum, z1);
    for (std::size_t q = 0; q < n_fft; ++q) {
      const bool low = q < first_lag || n_fft - q < first_lag;
      z1[q] = low ? 0.0 : rectify(z1[q] / static_cast<double>(n_fft), cfg.gammas[1]);
    }

    fft.forward(z1, spectrum);
    for (std::size_t k = 0; k < n_half; ++k) {
      z2[k] = k < first_freq_bin ? 0.0 : rectify(spectrum[k].real(), cfg.gammas[2]);
    }

    for (std::size_t b = 0; b < n_bins; ++b) {
      double* cell = &acc[(b * n_frames + t) * kCfpChannels];
      cell[0] = freq_fb.apply(b, z0);
      cell[1] = lag_fb.apply(b, z1);
      cell[2] = freq_fb.apply(b, z2);
    }
  }

  std::array<double, kCfpChannels> peak{};
  for (std::size_t i = 0; i < acc.size(); ++i) {
    auto& p = peak[i % kCfpChannels];
    p = std::max(p, acc[i]);
  }
  out.data.resize(acc.size());
  for (std::size_t i = 0; i < acc.size(); ++i) {
    const double p = peak[i % kCfpChannels];
    out.data[i] = static_cast<float>(p > 0.0 ? acc[i] / p : 0.0);
  }
  return out;
}

void save_cfp(const std::filesystem::path& path, const CfpTensor& cfp) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(f), ErrorCode::kIo, "cannot write " + path.string());
  f.write("CFP1", 4);
  put_u32(f, static_cast<std::uint32_t>(cfp.n_bins()));
  put_u32(f, static_cast<std::uint32_t>(cfp.n_frames));
  put_u32(f, kCfpChannels);
  put_le<double>(f, cfp.sample_rate);
  put_u32(f, static_cast<std::uint32_t>(cfp.hop));
  for (int c = 0; c < kCfpChannels; ++c) {
    for (int b = 0; b < cfp.n_bins(); ++b) {
      for (int t = 0; t < cfp.n_frames; ++t) put_le<float>(f, cfp.at(b, t, c));
    }
  }
  require(static_cast<bool>(f), ErrorCode::kIo, "write failed: " + path.string());
}

CfpTensor load_cfp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::kNotFound, "cannot open " + path.string());
  const std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in),
                                        std::istreambuf_iterator<char>()};
  constexpr std::size_t kHeader = 4 + 4 * 3 + 8 + 4;
  require(bytes.size() >= kHeader && std::memcmp(bytes.data(), "CFP1", 4) == 0,
          ErrorCode::kCorruptFile, "not a CFP1 file: " + path.string());
  const auto f = get_le<std::uint32_t>(bytes.data() + 4);
  const auto t = get_le<std::uint32_t>(bytes.data() + 8);
  const auto c = get_le<std::uint32_t>(bytes.data() + 12);
  require(c == kCfpChannels, ErrorCode::kCorruptFile, "CFP1 channel count must be 3");
  const std::size_t count = static_cast<std::size_t>(f) * t * c;
  require(bytes.size() == kHeader + 4 * count, ErrorCode::kCorruptFile,
          "CFP1 payload length mismatch: " + path.string());
  CfpTensor cfp;
  cfp.grid.n_bins = static_cast<int>(f);
  cfp.n_frames = static_cast<int>(t);
  cfp.sample_rate = get_le<double>(bytes.data() + 16);
  cfp.hop = static_cast<int>(get_le<std::uint32_t>(bytes.data() + 24));
  cfp.data.resize(count);
  const std::uint8_t* p = bytes.data() + kHeader;
  for (std::uint32_t ch = 0; ch < c; ++ch) {
    for (std::uint32_t b = 0; b < f; ++b) {
      for (std::uint32_t i = 0; i < t; ++i, p += 4) {
        cfp.data[(static_cast<std::size_t>(b) * t + i) * c + ch] = get_le<float>(p);
      }
    }
  }
  return cfp;
}

}  // namespace ftanet
