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

#include "audio_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numbers>
#include <string>

#include "error.hpp"

namespace ftanet {
namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

std::uint16_t read_u16(const std::uint8_t* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

std::uint32_t read_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

struct WavFormat {
  std::uint16_t tag = 0;
  std::uint16_t channels = 0;
  std::uint32_t rate = 0;
  std::uint16_t bits = 0;
};

double kaiser(double x, double beta) {
  // x in [-1, 1]
  const double arg = 1.0 - x * x;
  if (arg <= 0.0) return 0.0;
  return std::cyl_bessel_i(0.0, beta * std::sqrt(arg)) / std::cyl_bessel_i(0.0, beta);
}

double sinc(double x) {
  if (x == 0.0) return 1.0;
  const double px = std::numbers::pi * x;
  return std::sin(px) / px;
}

constexpr int kZeroCrossings = 16;
constexpr double kKaiserBeta = 8.6;

// sinc(u) * kaiser(u / kZeroCrossings) tabulated on [0, kZeroCrossings] and
// linearly interpolated.
class WindowedSincTable {
 public:
  static constexpr int kStepsPerCrossing = 1024;

  WindowedSincTable() : values_(kZeroCrossings * kStepsPerCrossing + 2, 0.0) {
    for (std::size_t i = 0; i + 1 < values_.size(); ++i) {
      const double u = static_cast<double>(i) / kStepsPerCrossing;
      values_[i] = sinc(u) * kaiser(u / kZeroCrossings, kKaiserBeta);
    }
  }

  double operator()(double u) const {
    const double pos = u * kStepsPerCrossing;
    const auto i = static_cast<std::size_t>(pos);
    if (i + 1 >= values_.size()) return 0.0;
    const double frac = pos - static_cast<double>(i);
    return values_[i] + frac * (values_[i + 1] - values_[i]);
  }

 private:
  std::vector<double> values_;
};

const WindowedSincTable& sinc_table() {
  static const WindowedSincTable table;
  return table;
}

}  // namespace

AudioBuffer load_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    fail(std::filesystem::exists(path) ? ErrorCode::kIo : ErrorCode::kNotFound,
         "cannot open audio file: " + path.string());
  }
  const std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in),
                                        std::istreambuf_iterator<char>()};
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    fail(ErrorCode::kUnsupportedFormat, "not a RIFF/WAVE file: " + path.string());
  }

  WavFormat fmt;
  bool have_fmt = false;
  const std::uint8_t* data = nullptr;
  std::size_t data_len = 0;

  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::uint8_t* chunk = bytes.data() + pos;
    const std::uint32_t len = read_u32(chunk + 4);
    const std::size_t body = pos + 8;
    const std::size_t avail = bytes.size() - body;
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      require(len >= 16 && avail >= 16, ErrorCode::kCorruptFile,
              "truncated fmt chunk: " + path.string());
      const std::uint8_t* f = bytes.data() + body;
      fmt.tag = read_u16(f);
      fmt.channels = read_u16(f + 2);
      fmt.rate = read_u32(f + 4);
      fmt.bits = read_u16(f + 14);
      if (fmt.tag == kFormatExtensible && len >= 40 && avail >= 40) {
        // First two bytes of the SubFormat GUID carry the real format tag.
        fmt.tag = read_u16(f + 24);
      }
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = bytes.data() + body;
      // Streams written by some tools leave the data length unset.
      data_len = std::min<std::size_t>(len, avail);
    }
    pos = body + len + (len & 1u);
  }

  require(have_fmt, ErrorCode::kCorruptFile, "missing fmt chunk: " + path.string());
  require(data != nullptr, ErrorCode::kCorruptFile, "missing data chunk: " + path.string());
  const bool pcm16 = fmt.tag == kFormatPcm && fmt.bits == 16;
  const bool float32 = fmt.tag == kFormatFloat && fmt.bits == 32;
  if (!pcm16 && !float32) {
    fail(ErrorCode::kUnsupportedFormat,
         "unsupported WAV encoding (format " + std::to_string(fmt.tag) + ", " +
             std::to_string(fmt.bits) + "-bit) in " + path.string());
  }
  if (fmt.channels != 1 && fmt.channels != 2) {
    fail(ErrorCode::kUnsupportedFormat,
         "unsupported channel count " + std::to_string(fmt.channels) + " in " + path.string());
  }
  require(fmt.rate > 0, ErrorCode::kCorruptFile, "zero sample rate in " + path.string());

  const std::size_t frame_bytes = static_cast<std::size_t>(fmt.bits / 8) * fmt.channels;
  const std::size_t n_frames = data_len / frame_bytes;
  require(n_frames > 0, ErrorCode::kEmptyInput, "zero-length audio: " + path.string());

  AudioBuffer buf;
  buf.sample_rate = static_cast<int>(fmt.rate);
  buf.samples.resize(n_frames);
  for (std::size_t i = 0; i < n_frames; ++i) {
    double acc = 0.0;
    for (std::size_t c = 0; c < fmt.channels; ++c) {
      const std::uint8_t* p = data + i * frame_bytes + c * (fmt.bits / 8);
      if (pcm16) {
        acc += static_cast<std::int16_t>(read_u16(p)) / 32768.0;
      } else {
        float v;
        const std::uint32_t raw = read_u32(p);
        std::memcpy(&v, &raw, sizeof v);
        require(std::isfinite(v), ErrorCode::kCorruptFile,
                "non-finite float sample in " + path.string());
        acc += std::clamp(static_cast<double>(v), -1.0, 1.0);
      }
    }
    buf.samples[i] = static_cast<float>(acc / fmt.channels);
  }
  return buf;
}

void write_wav(const std::filesystem::path& path, const AudioBuffer& buf) {
  require(buf.sample_rate > 0, ErrorCode::kInvalidArgument, "sample rate must be positive");
  const auto n = static_cast<std::uint32_t>(buf.samples.size());
  std::vector<std::uint8_t> out;
  out.reserve(44 + 2 * static_cast<std::size_t>(n));
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  put_u32(out, 36 + 2 * n);
  out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  put_u32(out, 16);
  put_u16(out, kFormatPcm);
  put_u16(out, 1);
  put_u32(out, static_cast<std::uint32_t>(buf.sample_rate));
  put_u32(out, static_cast<std::uint32_t>(buf.sample_rate) * 2);
  put_u16(out, 2);
  put_u16(out, 16);
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  put_u32(out, 2 * n);
  for (float s : buf.samples) {
    const double q = std::round(std::clamp(static_cast<double>(s), -1.0, 1.0) * 32768.0);
    put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(std::clamp(q, -32768.0, 32767.0))));
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(f), ErrorCode::kIo, "cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  require(static_cast<bool>(f), ErrorCode::kIo, "write failed: " + path.string());
}

AudioBuffer resample(const AudioBuffer& buf, int target_rate) {
  require(target_rate > 0, ErrorCode::kInvalidArgument, "target sample rate must be positive");
  require(buf.sample_rate > 0, ErrorCode::kInvalidArgument, "source sample rate must be positive");
  if (target_rate == buf.sample_rate) return buf;

  const WindowedSincTable& kernel = sinc_table();
  const double ratio = static_cast<double>(target_rate) / buf.sample_rate;
  const double cutoff = std::min(1.0, ratio);  // relative to the input Nyquist
  const double half_width = kZeroCrossings / cutoff;  // in input samples
  const auto n_in = static_cast<long>(buf.samples.size());
  const auto n_out = static_cast<long>(std::llround(static_cast<double>(n_in) * ratio));

  AudioBuffer out;
  out.sample_rate = target_rate;
  out.samples.resize(static_cast<std::size_t>(n_out));
  for (long n = 0; n < n_out; ++n) {
    const double t = static_cast<double>(n) / ratio;
    const long lo = std::max(0L, static_cast<long>(std::ceil(t - half_width)));
    const long hi = std::min(n_in - 1, static_cast<long>(std::floor(t + half_width)));
    double acc = 0.0;
    for (long k = lo; k <= hi; ++k) {
      const double u = cutoff * std::abs(t - static_cast<double>(k));
      acc += buf.samples[static_cast<std::size_t>(k)] * kernel(u);
    }
    out.samples[static_cast<std::size_t>(n)] = static_cast<float>(acc * cutoff);
  }
  return out;
}

}  // namespace ftanet
