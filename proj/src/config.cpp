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

#include "config.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "error.hpp"

namespace ftanet {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

void check_keys(const json& j, const std::string& where, const std::set<std::string>& allowed) {
  require(j.is_object(), ErrorCode::kParse, where + " must be a JSON object");
  for (const auto& [k, v] : j.items()) {
    if (!allowed.count(k)) {
      std::string list;
      for (const auto& a : allowed) list += (list.empty() ? "" : ", ") + a;
      fail(ErrorCode::kParse, "unknown key \"" + where + k + "\" (allowed: " + list + ")");
    }
  }
}

// Typed read of an optional key; a present key of the wrong type is an error.
template <typename V>
void read(const json& j, const std::string& key, V& out, const std::string& where = "") {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    if constexpr (std::is_integral_v<V>) {
      require(it->is_number_integer(), ErrorCode::kParse, "");
      if constexpr (std::is_unsigned_v<V>) require(it->is_number_unsigned(), ErrorCode::kParse, "");
    } else if constexpr (std::is_floating_point_v<V>) {
      require(it->is_number(), ErrorCode::kParse, "");
    }
    out = it->get<V>();
  } catch (const std::exception&) {
    fail(ErrorCode::kParse, "config key \"" + where + key + "\" has the wrong type: " + it->dump());
  }
}

void bad(const std::string& msg) { fail(ErrorCode::kInvalidArgument, "config: " + msg); }

}  // namespace

void RunConfig::validate() const {
  if (sample_rate != kModelSampleRate) bad("sample_rate must be " + std::to_string(kModelSampleRate) + " (the feature front end is tuned to it)");
  if (grid.n_bins != kMelodyBins) bad("n_bins must be 320 (the melody detection branch downsamples 320 -> 1)");
  if (grid.bins_per_octave < 1) bad("bins_per_octave must be >= 1");
  if (!(grid.f_min > 0.0)) bad("f_min must be > 0");
  if (!(grid.f_max > grid.f_min)) bad("f_max must exceed f_min");
  if (grid.center(grid.n_bins - 1) >= sample_rate / 2.0) bad("top grid bin lies above the Nyquist frequency");
  if (cfp.window < 16) bad("window must be >= 16 samples");
  if (cfp.hop < 1) bad("hop must be >= 1");
  if (cfp.fft_size < cfp.window) bad("fft_size must be >= window");
  for (double g : cfp.gammas) {
    if (!(g > 0.0 && g <= 2.0)) bad("gammas must be in (0, 2]");
  }
  if (!(cfp.freq_hp_hz >= 0.0)) bad("freq_hp_hz must be >= 0");
  if (!(cfp.quef_hp_s >= 0.0)) bad("quef_hp_s must be >= 0");
  try {
    layer.validate();
  } catch (const Error& e) {
    bad(std::string("layer_cfg: ") + e.what());
  }
  if (!(lr >= 0.0 && std::isfinite(lr))) bad("lr must be finite and >= 0");
  if (epochs < 1) bad("epochs must be >= 1");
  if (steps < 0) bad("steps must be >= 0 (0 = run whole epochs)");
  if (batch < 1) bad("batch must be >= 1");
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t;
  t.layer = layer;
  t.epochs = epochs;
  t.steps = steps;
  t.lr = lr;
  t.batch = batch;
  t.seed = seed;
  return t;
}

ordered_json to_json(const RunConfig& c) {
  ordered_json layer;
  layer["widths"] = c.layer.widths;
  layer["reduction"] = c.layer.reduction;
  layer["attention_depth"] = c.layer.attention_depth;
  layer["attention_kernel"] = c.layer.attention_kernel;
  layer["mdb_widths"] = c.layer.mdb_widths;
  ordered_json j;
  j["sample_rate"] = c.sample_rate;
  j["window"] = c.cfp.window;
  j["hop"] = c.cfp.hop;
  j["fft_size"] = c.cfp.fft_size;
  j["gammas"] = c.cfp.gammas;
  j["freq_hp_hz"] = c.cfp.freq_hp_hz;
  j["quef_hp_s"] = c.cfp.quef_hp_s;
  j["f_min"] = c.grid.f_min;
  j["f_max"] = c.grid.f_max;
  j["bins_per_octave"] = c.grid.bins_per_octave;
  j["n_bins"] = c.grid.n_bins;
  j["layer_cfg"] = layer;
  j["lr"] = c.lr;
  j["epochs"] = c.epochs;
  j["steps"] = c.steps;
  j["batch"] = c.batch;
  j["seed"] = c.seed;
  return j;
}

RunConfig run_config_from_json(const json& j) {
  check_keys(j, "", {"sample_rate", "window", "hop", "fft_size", "gammas", "freq_hp_hz", "quef_hp_s", "f_min",
                     "f_max", "bins_per_octave", "n_bins", "layer_cfg", "lr", "epochs", "steps", "batch", "seed"});
  RunConfig c;
  read(j, "sample_rate", c.sample_rate);
  read(j, "window", c.cfp.window);
  read(j, "hop", c.cfp.hop);
  read(j, "fft_size", c.cfp.fft_size);
  if (j.contains("gammas")) {
    const json& g = j["gammas"];
    require(g.is_array() && g.size() == 3 && g[0].is_number() && g[1].is_number() && g[2].is_number(),
            ErrorCode::kParse, "config key \"gammas\" must be an array of 3 numbers");
    for (std::size_t i = 0; i < 3; ++i) c.cfp.gammas[i] = g[i].get<double>();
  }
  read(j, "freq_hp_hz", c.cfp.freq_hp_hz);
  read(j, "quef_hp_s", c.cfp.quef_hp_s);
  read(j, "f_min", c.grid.f_min);
  read(j, "f_max", c.grid.f_max);
  read(j, "bins_per_octave", c.grid.bins_per_octave);
  read(j, "n_bins", c.grid.n_bins);
  if (j.contains("layer_cfg")) {
    const json& l = j["layer_cfg"];
    check_keys(l, "layer_cfg.", {"widths", "reduction", "attention_depth", "attention_kernel", "mdb_widths"});
    read(l, "widths", c.layer.widths, "layer_cfg.");
    read(l, "reduction", c.layer.reduction, "layer_cfg.");
    read(l, "attention_depth", c.layer.attention_depth, "layer_cfg.");
    read(l, "attention_kernel", c.layer.attention_kernel, "layer_cfg.");
    read(l, "mdb_widths", c.layer.mdb_widths, "layer_cfg.");
  }
  read(j, "lr", c.lr);
  read(j, "epochs", c.epochs);
  read(j, "steps", c.steps);
  read(j, "batch", c.batch);
  read(j, "seed", c.seed);
  c.validate();
  return c;
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), std::filesystem::exists(path) ? ErrorCode::kIo : ErrorCode::kNotFound,
          "cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::kParse, path.string() + ": " + e.what());
  }
}

RunConfig load_run_config(const std::filesystem::path& path) {
  try {
    return run_config_from_json(read_json_file(path));
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kNotFound) throw;
    fail(e.code(), path.string() + ": " + e.what());
  }
}

void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  require(eq != std::string::npos && eq > 0, ErrorCode::kInvalidArgument,
          "override \"" + assignment + "\" must look like key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::parse_error&) {
    value = text;
  }
  json* node = &j;
  std::stringstream ss(key);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    require(!parts[i].empty(), ErrorCode::kInvalidArgument, "empty component in override key \"" + key + "\"");
    if (!node->contains(parts[i])) (*node)[parts[i]] = json::object();
    node = &(*node)[parts[i]];
    require(node->is_object(), ErrorCode::kInvalidArgument, "override key \"" + key + "\" goes through a non-object");
  }
  (*node)[parts.back()] = value;
}

ordered_json to_json(const SynthSpec& s) {
  ordered_json j;
  j["seed"] = s.seed;
  j["n_clips"] = s.n_clips;
  j["duration_s"] = s.duration_s;
  j["f0_min_hz"] = s.f0_min_hz;
  j["f0_max_hz"] = s.f0_max_hz;
  j["fixed_f0_hz"] = s.fixed_f0_hz ? ordered_json(*s.fixed_f0_hz) : ordered_json(nullptr);
  j["note_min_s"] = s.note_min_s;
  j["note_max_s"] = s.note_max_s;
  j["vibrato_cents"] = s.vibrato_cents;
  j["vibrato_hz"] = s.vibrato_hz;
  j["n_harmonics"] = s.n_harmonics;
  j["rolloff"] = s.rolloff;
  j["noise_db"] = s.noise_db ? ordered_json(*s.noise_db) : ordered_json(nullptr);
  j["gap_fraction"] = s.gap_fraction;
  return j;
}

SynthSpec synth_spec_from_json(const json& j) {
  check_keys(j, "", {"seed", "n_clips", "duration_s", "f0_min_hz", "f0_max_hz", "fixed_f0_hz", "note_min_s",
                     "note_max_s", "vibrato_cents", "vibrato_hz", "n_harmonics", "rolloff", "noise_db",
                     "gap_fraction"});
  SynthSpec s;
  read(j, "seed", s.seed);
  read(j, "n_clips", s.n_clips);
  read(j, "duration_s", s.duration_s);
  read(j, "f0_min_hz", s.f0_min_hz);
  read(j, "f0_max_hz", s.f0_max_hz);
  read(j, "note_min_s", s.note_min_s);
  read(j, "note_max_s", s.note_max_s);
  read(j, "vibrato_cents", s.vibrato_cents);
  read(j, "vibrato_hz", s.vibrato_hz);
  read(j, "n_harmonics", s.n_harmonics);
  read(j, "rolloff", s.rolloff);
  read(j, "gap_fraction", s.gap_fraction);
  if (j.contains("fixed_f0_hz") && !j["fixed_f0_hz"].is_null()) {
    double f = 0.0;
    read(j, "fixed_f0_hz", f);
    s.fixed_f0_hz = f;
  }
  // null or "-inf" means no noise at all
  if (j.contains("noise_db")) {
    const json& n = j["noise_db"];
    if (n.is_null() || (n.is_string() && n.get<std::string>() == "-inf")) {
      s.noise_db.reset();
    } else {
      double db = 0.0;
      read(j, "noise_db", db);
      s.noise_db = db;
    }
  }
  s.validate();
  return s;
}

std::filesystem::path sidecar_path(const std::filesystem::path& model_path) {
  return std::filesystem::path(model_path.string() + ".json");
}

void save_model(const std::filesystem::path& path, const SavedModel& model) {
  model.config.validate();
  check_params(model.params, model.config.layer);
  save_params(model.params, path);
  const auto side = sidecar_path(path);
  std::ofstream out(side, std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::kIo, "cannot open " + side.string() + " for writing");
  ordered_json j;
  j["format"] = "ftanet-model";
  j["version"] = kModelFormatVersion;
  j["config"] = to_json(model.config);
  out << j.dump(2) << '\n';
  require(static_cast<bool>(out.flush()), ErrorCode::kIo, "failed writing " + side.string());
}

SavedModel load_model(const std::filesystem::path& path) {
  SavedModel m;
  m.params = load_params(path);
  const auto side = sidecar_path(path);
  require(std::filesystem::exists(side), ErrorCode::kCorruptFile,
          "model sidecar " + side.string() + " is missing (it is written next to the model by training)");
  const json j = read_json_file(side);
  try {
    check_keys(j, "", {"format", "version", "config"});
    require(j.value("format", "") == "ftanet-model", ErrorCode::kCorruptFile, "not an ftanet model sidecar");
    require(j.contains("version") && j["version"].is_number_unsigned(), ErrorCode::kCorruptFile, "sidecar has no version");
    require(j["version"].get<std::uint32_t>() == kModelFormatVersion, ErrorCode::kUnsupportedVersion,
            "sidecar version " + j["version"].dump() + " is not supported");
    require(j.contains("config"), ErrorCode::kCorruptFile, "sidecar has no config");
    m.config = run_config_from_json(j["config"]);
  } catch (const Error& e) {
    fail(e.code() == ErrorCode::kUnsupportedVersion ? e.code() : ErrorCode::kCorruptFile,
         side.string() + ": " + e.what());
  }
  try {
    check_params(m.params, m.config.layer);
  } catch (const Error& e) {
    fail(ErrorCode::kCorruptFile, path.string() + ": parameters do not match the sidecar layer_cfg: " + e.what());
  }
  return m;
}

}  // namespace ftanet
