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

#pragma once

#include <filesystem>
#include <span>
#include <vector>

namespace ftanet {

inline constexpr int kModelSampleRate = 44100;

/// Mono audio at a fixed sample rate with amplitudes in [-1, 1].
struct AudioBuffer {
  std::vector<float> samples;
  int sample_rate = kModelSampleRate;

  double duration_seconds() const {
    return static_cast<double>(samples.size()) / sample_rate;
  }
};

/// Reads a RIFF/WAVE file holding 16-bit PCM or 32-bit IEEE float data with
/// one or two channels. Stereo input is averaged to mono.
AudioBuffer load_wav(const std::filesystem::path& path);

/// Writes 16-bit little-endian PCM mono. Samples are clipped to [-1, 1].
void write_wav(const std::filesystem::path& path, const AudioBuffer& buf);

/// Kaiser-windowed sinc interpolation, 16 zero crossings per side. The output
/// length is round(len * target_rate / sample_rate).
AudioBuffer resample(const AudioBuffer& buf, int target_rate);

}  // namespace ftanet
