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

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "cfp.hpp"
#include "tensor.hpp"

namespace ftanet {

/// Architecture hyper-parameters. Everything here is recorded in the model
/// sidecar so a saved model can be rebuilt without outside knowledge.
struct LayerConfig {
  std::vector<int> widths{32, 64, 128};      // one FTA+SFM stage per entry
  int reduction = 4;                         // SFM shared-FC ratio r
  int attention_depth = 2;                   // 1-D conv layers per attention path
  int attention_kernel = 5;
  std::vector<int> mdb_widths{32, 64, 128};  // final 1-channel layer is implicit

  int n_stages() const { return static_cast<int>(widths.size()); }
  int sfm_hidden(int channels) const { return std::max(1, channels / reduction); }
  void validate() const;
  bool operator==(const LayerConfig&) const = default;
};

inline constexpr int kMelodyBins = 320;
inline constexpr int kNonMelodyRow = kMelodyBins;
inline constexpr int kSalienceRows = kMelodyBins + 1;

using ModelParams = std::map<std::string, Tensor<float>>;

struct ParamSpec {
  std::string name;
  Shape shape;
  std::size_t fan_in = 0;
  std::size_t fan_out = 0;  // 0 marks a bias (zero-initialised)
};

/// Every learnable tensor of the network in a fixed declaration order.
std::vector<ParamSpec> param_specs(const LayerConfig& cfg, int in_channels = kCfpChannels);

/// Glorot-uniform weights (limit sqrt(6 / (fan_in + fan_out))), zero biases.
ModelParams init_params(const LayerConfig& cfg, std::uint64_t seed);

/// Throws kShapeMismatch when params is missing a tensor of cfg or has the wrong shape/extra names.
void check_params(const ModelParams& params, const LayerConfig& cfg);

template <typename T>
ParamSet<T> to_param_set(const ModelParams& params, bool trainable);
template <typename T>
ModelParams from_param_set(const ParamSet<T>& params);

template <typename T>
struct FtaOutput {
  Var<T> e_f;  // F x T x C
  Var<T> e_t;  // F x T x C
  Var<T> a_f;  // F x C, sums to 1 over F
  Var<T> a_t;  // T x C, sums to 1 over T
};

/// Frequency-temporal attention on S (F x T x C). `prefix` selects the
/// parameter names (e.g. "stage0.fta.").
template <typename T>
FtaOutput<T> fta_module(const Var<T>& s, const ParamSet<T>& params, const std::string& prefix,
                        const LayerConfig& cfg);

template <typename T>
struct SfmOutput {
  Var<T> out;      // F x T x C
  Var<T> weights;  // 3 x C: rows are (S', E_f, E_t)
};

template <typename T>
SfmOutput<T> selective_fusion(const Var<T>& s_prime, const Var<T>& e_f, const Var<T>& e_t,
                              const ParamSet<T>& params, const std::string& prefix,
                              const LayerConfig& cfg);

/// Raw non-melody scores (1 x T) from the 320 x T x 3 input.
template <typename T>
Var<T> melody_detection_branch(const Var<T>& s, const ParamSet<T>& params, const LayerConfig& cfg);

/// F x T pitch logits of the bottom branch.
template <typename T>
Var<T> bottom_branch(const Var<T>& s, const ParamSet<T>& params, const LayerConfig& cfg);

/// Full network: (F+1) x T column-softmaxed salience, row F is non-melody.
template <typename T>
Var<T> salience_graph(const Var<T>& input, const ParamSet<T>& params, const LayerConfig& cfg);

struct SalienceMap {
  int n_rows = 0;
  int n_frames = 0;
  std::vector<float> values;  // row-major n_rows x n_frames
  std::vector<double> frame_times;

  float at(int row, int frame) const {
    return values[static_cast<std::size_t>(row) * n_frames + frame];
  }
};

Var<float> cfp_input(const CfpTensor& cfp);

// The network sees the clip in windows of this many frames, the same length it
// is trained on; time attention is normalized within a window, so running it on
// a whole clip at once would shift the attention scale.
inline constexpr int kWindowFrames = 128;

/// Salience for every frame of the clip. window = 0 runs the whole clip as one
/// graph; otherwise the last window is zero-padded like a training segment.
SalienceMap forward(const CfpTensor& cfp, const ModelParams& params, const LayerConfig& cfg,
                    int window = kWindowFrames);

inline constexpr std::uint32_t kModelFormatVersion = 1;

void save_params(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_params(const std::filesystem::path& path);

}  // namespace ftanet
