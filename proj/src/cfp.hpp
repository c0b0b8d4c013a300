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

#include <array>
#include <filesystem>
#include <vector>

#include "audio_io.hpp"

namespace ftanet {

/// Log-frequency pitch grid: center(b) = f_min * 2^(b / bins_per_octave).
struct LogFreqGrid {
  int n_bins = 320;
  int bins_per_octave = 60;
  double f_min = 31.0;
  double f_max = 1250.0;

  double center(int bin) const;
};

/// round(bins_per_octave * log2(f / f_min)), clipped to the grid.
int hz_to_bin(double hz, const LogFreqGrid& grid);
double bin_to_hz(int bin, const LogFreqGrid& grid);

/// Linear-frequency STFT magnitudes, stored bin-major: mags[bin * n_frames + frame].
struct Spectrogram {
  int n_bins = 0;
  int n_frames = 0;
  std::vector<float> mags;
  std::vector<double> bin_hz;
  std::vector<double> frame_times;

  float at(int bin, int frame) const {
    return mags[static_cast<std::size_t>(bin) * n_frames + frame];
  }
};

struct CfpConfig {
  int window = 2048;
  int hop = 256;
  // Frames are zero-padded to this length before the transforms. 22050 points
  // give 2 Hz bins, finer than the log-grid spacing above ~170 Hz.
  int fft_size = 22050;
  std::array<double, 3> gammas{0.24, 0.6, 1.0};
  double freq_hp_hz = 31.0;
  double quef_hp_s = 1.0 / 1250.0;
};

inline constexpr int kCfpChannels = 3;

/// F x T x 3 tensor, frequency-major then time then channel:
/// data[(f * n_frames + t) * 3 + c]. Channel 0 is the power-scaled spectrum,
/// channel 1 the generalized cepstrum and channel 2 the generalized cepstrum
/// of spectrum.
struct CfpTensor {
  LogFreqGrid grid;
  int n_frames = 0;
  int hop = 256;
  double sample_rate = kModelSampleRate;
  std::vector<float> data;

  int n_bins() const { return grid.n_bins; }
  float at(int bin, int frame, int channel) const {
    return data[(static_cast<std::size_t>(bin) * n_frames + frame) * kCfpChannels + channel];
  }
  double frame_time(int frame) const { return frame * static_cast<double>(hop) / sample_rate; }
};

/// Hann-windowed, centered STFT (signal padded by window/2 on both sides);
/// n_frames = floor(len / hop) + 1. Requires 44.1 kHz input.
Spectrogram stft(const AudioBuffer& buf, int window = 2048, int hop = 256);

CfpTensor compute_cfp(const AudioBuffer& buf, const LogFreqGrid& grid = {},
                      const CfpConfig& cfg = {});

/// "CFP1" dump in (channel, frequency, time) order.
void save_cfp(const std::filesystem::path& path, const CfpTensor& cfp);
CfpTensor load_cfp(const std::filesystem::path& path);

}  // namespace ftanet
