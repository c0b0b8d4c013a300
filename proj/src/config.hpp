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
#include <string>

#include <json.hpp>

#include "cfp.hpp"
#include "model.hpp"
#include "training.hpp"

namespace ftanet {

/// Everything a run needs besides its file arguments. Loaded from JSON;
/// unknown keys and out-of-range values are rejected.
struct RunConfig {
  int sample_rate = kModelSampleRate;  // audio is resampled to this rate first
  LogFreqGrid grid;
  CfpConfig cfp;
  LayerConfig layer;
  double lr = 1e-4;
  int epochs = 1;
  long steps = 0;
  int batch = 8;
  std::uint64_t seed = 0;

  void validate() const;
  TrainConfig train_config() const;
};

nlohmann::ordered_json to_json(const RunConfig& cfg);
/// Keys missing from `j` keep their defaults.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

/// "key=value" with a dotted key ("layer_cfg.widths=[8,8,8]"); the value is
/// parsed as JSON, falling back to a plain string.
void apply_override(nlohmann::json& j, const std::string& assignment);

nlohmann::ordered_json to_json(const SynthSpec& spec);
SynthSpec synth_spec_from_json(const nlohmann::json& j);

nlohmann::json read_json_file(const std::filesystem::path& path);

/// A saved model is the parameter file plus "<path>.json" holding the run
/// config it was trained with, so extraction rebuilds the same features.
struct SavedModel {
  ModelParams params;
  RunConfig config;
};

std::filesystem::path sidecar_path(const std::filesystem::path& model_path);
void save_model(const std::filesystem::path& path, const SavedModel& model);
SavedModel load_model(const std::filesystem::path& path);

}  // namespace ftanet
