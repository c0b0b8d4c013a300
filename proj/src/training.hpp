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

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cfp.hpp"
#include "melody_eval.hpp"
#include "model.hpp"
#include "tensor.hpp"

namespace ftanet {

inline constexpr int kSegmentFrames = kWindowFrames;

struct TrainSegment {
  Tensor<float> input;   // 320 x 128 x 3
  Tensor<float> target;  // 321 x 128, one-hot columns
  int source_clip = 0;
  int offset = 0;        // first frame in the clip
  int n_real = 0;        // frames before padding
};

/// 321 x T one-hot targets; row 320 marks frames without melody.
Tensor<float> encode_labels(const MelodyContour& contour, const std::vector<double>& frame_times,
                            const LogFreqGrid& grid = {});

/// Non-overlapping 128-frame windows; the last one is zero-padded (input) and
/// filled with non-melody columns (target).
std::vector<TrainSegment> segment_clip(const CfpTensor& cfp, const Tensor<float>& target, int clip_id = 0);

struct TrainConfig {
  LayerConfig layer;
  int epochs = 1;
  long steps = 0;  // > 0 overrides epochs: stop after this many updates
  double lr = 1e-4;
  int batch = 8;
  std::uint64_t seed = 0;
};

struct TrainResult {
  ModelParams params;
  std::vector<double> step_loss;   // mean batch BCE per update
  std::vector<int> step_epoch;
  std::vector<double> epoch_loss;  // mean of step_loss within each epoch
};

using TrainProgress = std::function<void(long step, int epoch, double loss)>;

TrainResult train(const std::vector<TrainSegment>& segments, const TrainConfig& cfg,
                  const TrainProgress& progress = {});

void write_loss_csv(const std::filesystem::path& path, const TrainResult& result);

// Dataset manifest: "wav<TAB>annotation<TAB>repeat" per line; relative paths
// are resolved against the manifest's directory.
struct ManifestEntry {
  std::filesystem::path wav;
  std::filesystem::path annotation;
  int repeat = 1;
};

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);

/// Loads every clip, computes CFP features and targets, and segments them.
/// A clip with repeat count k contributes its segments k times.
std::vector<TrainSegment> load_training_set(const std::vector<ManifestEntry>& entries,
                                            const LogFreqGrid& grid = {}, const CfpConfig& cfp = {},
                                            int sample_rate = kModelSampleRate);

struct SynthSpec {
  std::uint64_t seed = 7;
  int n_clips = 8;
  double duration_s = 5.0;
  double f0_min_hz = 150.0;
  double f0_max_hz = 700.0;
  std::optional<double> fixed_f0_hz;  // every note at this pitch instead of a random walk
  double note_min_s = 0.15;
  double note_max_s = 0.5;
  double vibrato_cents = 30.0;
  double vibrato_hz = 5.5;
  int n_harmonics = 3;
  double rolloff = 0.5;                   // amplitude ratio between successive harmonics
  std::optional<double> noise_db = -40.0;  // white noise RMS in dBFS; nullopt = silent
  double gap_fraction = 0.2;              // share of the clip without melody

  void validate() const;
};

struct SynthClip {
  AudioBuffer audio;
  MelodyContour annotation;
};

/// One clip, deterministic in (spec, index).
SynthClip synth_clip(const SynthSpec& spec, int index);

/// Writes clip_NNN.wav / clip_NNN.txt and manifest.tsv into out_dir; returns the manifest path.
std::filesystem::path synth_dataset(const SynthSpec& spec, const std::filesystem::path& out_dir);

}  // namespace ftanet
