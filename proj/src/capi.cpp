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

#include <cstdlib>
#include <cstring>
#include <new>
#include <optional>
#include <string>
#include <vector>

#include "config.hpp"
#include "error.hpp"
#include "ftanet/ftanet.h"
#include "heatmap.hpp"
#include "melody_eval.hpp"
#include "training.hpp"

struct ftanet_config {
  ftanet::RunConfig cfg;
};

struct ftanet_model {
  ftanet::SavedModel saved;
  std::optional<ftanet::TrainResult> history;  // only for freshly trained models
};

struct ftanet_contour {
  ftanet::MelodyContour contour;
};

struct ftanet_salience {
  ftanet::SalienceMap map;
};

namespace {

thread_local std::string g_last_error;

template <typename F>
ftanet_status guard(F&& body) {
  try {
    body();
    g_last_error.clear();
    return FTANET_OK;
  } catch (const ftanet::Error& e) {
    g_last_error = e.what();
    return static_cast<ftanet_status>(e.code());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
  } catch (const std::exception& e) {
    g_last_error = std::string("internal error: ") + e.what();
  } catch (...) {
    g_last_error = "internal error: unknown exception";
  }
  return FTANET_INTERNAL;
}

void need(const void* p, const char* what) {
  ftanet::require(p != nullptr, ftanet::ErrorCode::kInvalidArgument, std::string(what) + " must not be NULL");
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

nlohmann::json with_overrides(const char* json_path, const char* const* overrides, size_t n) {
  nlohmann::json j = json_path ? ftanet::read_json_file(json_path) : nlohmann::json::object();
  if (n > 0) need(overrides, "overrides");
  for (size_t i = 0; i < n; ++i) {
    need(overrides[i], "override");
    ftanet::apply_override(j, overrides[i]);
  }
  return j;
}

ftanet::CfpTensor features_of(const ftanet::RunConfig& cfg, const char* wav_path) {
  const ftanet::AudioBuffer audio = ftanet::resample(ftanet::load_wav(wav_path), cfg.sample_rate);
  return ftanet::compute_cfp(audio, cfg.grid, cfg.cfp);
}

}  // namespace

extern "C" {

const char* ftanet_last_error(void) { return g_last_error.c_str(); }

const char* ftanet_status_name(ftanet_status status) {
  switch (status) {
    case FTANET_OK: return "ok";
    case FTANET_INVALID_ARGUMENT: return "invalid argument";
    case FTANET_IO: return "i/o error";
    case FTANET_NOT_FOUND: return "not found";
    case FTANET_UNSUPPORTED_FORMAT: return "unsupported format";
    case FTANET_EMPTY_INPUT: return "empty input";
    case FTANET_CORRUPT_FILE: return "corrupt file";
    case FTANET_UNSUPPORTED_VERSION: return "unsupported version";
    case FTANET_SHAPE_MISMATCH: return "shape mismatch";
    case FTANET_PARSE: return "parse error";
    case FTANET_NUMERIC: return "numeric error";
    case FTANET_INTERNAL: return "internal error";
  }
  return "unknown status";
}

const char* ftanet_version(void) { return "1.0.0"; }

void ftanet_string_free(char* s) { std::free(s); }

ftanet_status ftanet_config_load(const char* json_path, const char* const* overrides, size_t n_overrides,
                                 ftanet_config** out) {
  return guard([&] {
    need(out, "out");
    *out = nullptr;
    ftanet::RunConfig cfg;
    try {
      cfg = ftanet::run_config_from_json(with_overrides(json_path, overrides, n_overrides));
    } catch (const ftanet::Error& e) {
      if (!json_path || e.code() == ftanet::ErrorCode::kNotFound) throw;
      ftanet::fail(e.code(), std::string(json_path) + ": " + e.what());
    }
    *out = new ftanet_config{cfg};
  });
}

ftanet_status ftanet_config_set_seed(ftanet_config* cfg, uint64_t seed) {
  return guard([&] {
    need(cfg, "cfg");
    cfg->cfg.seed = seed;
  });
}

ftanet_status ftanet_config_to_json(const ftanet_config* cfg, char** out) {
  return guard([&] {
    need(cfg, "cfg");
    need(out, "out");
    *out = dup_string(ftanet::to_json(cfg->cfg).dump(2));
  });
}

void ftanet_config_free(ftanet_config* cfg) { delete cfg; }

ftanet_status ftanet_features(const ftanet_config* cfg, const char* wav_path, const char* out_path) {
  return guard([&] {
    need(cfg, "cfg");
    need(wav_path, "wav_path");
    need(out_path, "out_path");
    ftanet::save_cfp(out_path, features_of(cfg->cfg, wav_path));
  });
}

ftanet_status ftanet_train(const ftanet_config* cfg, const char* manifest_path, ftanet_progress_fn progress,
                           void* user, ftanet_model** out) {
  return guard([&] {
    need(cfg, "cfg");
    need(manifest_path, "manifest_path");
    need(out, "out");
    *out = nullptr;
    const auto& c = cfg->cfg;
    const auto segments =
        ftanet::load_training_set(ftanet::read_manifest(manifest_path), c.grid, c.cfp, c.sample_rate);
    ftanet::TrainProgress cb;
    if (progress) cb = [&](long step, int epoch, double loss) { progress(step, epoch, loss, user); };
    ftanet::TrainResult result = ftanet::train(segments, c.train_config(), cb);
    ftanet::ModelParams params = std::move(result.params);
    *out = new ftanet_model{{std::move(params), c}, std::move(result)};
  });
}

ftanet_status ftanet_model_save(const ftanet_model* model, const char* path) {
  return guard([&] {
    need(model, "model");
    need(path, "path");
    ftanet::save_model(path, model->saved);
  });
}

ftanet_status ftanet_model_write_loss_csv(const ftanet_model* model, const char* path) {
  return guard([&] {
    need(model, "model");
    need(path, "path");
    ftanet::require(model->history.has_value(), ftanet::ErrorCode::kInvalidArgument,
                    "model has no training history (it was loaded from a file)");
    ftanet::write_loss_csv(path, *model->history);
  });
}

ftanet_status ftanet_model_load(const char* path, ftanet_model** out) {
  return guard([&] {
    need(path, "path");
    need(out, "out");
    *out = nullptr;
    *out = new ftanet_model{ftanet::load_model(path), std::nullopt};
  });
}

void ftanet_model_free(ftanet_model* model) { delete model; }

ftanet_status ftanet_extract(const ftanet_model* model, const char* wav_path, ftanet_salience** salience,
                             ftanet_contour** contour) {
  return guard([&] {
    need(model, "model");
    need(wav_path, "wav_path");
    if (salience) *salience = nullptr;
    if (contour) *contour = nullptr;
    const auto& cfg = model->saved.config;
    ftanet::SalienceMap map = ftanet::forward(features_of(cfg, wav_path), model->saved.params, cfg.layer);
    if (contour) *contour = new ftanet_contour{ftanet::decode_salience(map, cfg.grid)};
    if (salience) *salience = new ftanet_salience{std::move(map)};
  });
}

ftanet_status ftanet_salience_write_png(const ftanet_salience* salience, const char* path) {
  return guard([&] {
    need(salience, "salience");
    need(path, "path");
    ftanet::write_png(path, ftanet::render_salience(salience->map));
  });
}

ftanet_status ftanet_salience_shape(const ftanet_salience* salience, size_t* rows, size_t* frames) {
  return guard([&] {
    need(salience, "salience");
    if (rows) *rows = static_cast<size_t>(salience->map.n_rows);
    if (frames) *frames = static_cast<size_t>(salience->map.n_frames);
  });
}

ftanet_status ftanet_salience_value(const ftanet_salience* salience, size_t row, size_t frame, float* out) {
  return guard([&] {
    need(salience, "salience");
    need(out, "out");
    const auto& m = salience->map;
    ftanet::require(row < static_cast<size_t>(m.n_rows) && frame < static_cast<size_t>(m.n_frames),
                    ftanet::ErrorCode::kInvalidArgument, "salience index out of range");
    *out = m.at(static_cast<int>(row), static_cast<int>(frame));
  });
}

void ftanet_salience_free(ftanet_salience* salience) { delete salience; }

ftanet_status ftanet_contour_load(const char* path, ftanet_contour** out) {
  return guard([&] {
    need(path, "path");
    need(out, "out");
    *out = nullptr;
    *out = new ftanet_contour{ftanet::load_contour(path)};
  });
}

ftanet_status ftanet_contour_save(const ftanet_contour* contour, const char* path) {
  return guard([&] {
    need(contour, "contour");
    need(path, "path");
    ftanet::save_contour(path, contour->contour);
  });
}

ftanet_status ftanet_contour_length(const ftanet_contour* contour, size_t* out) {
  return guard([&] {
    need(contour, "contour");
    need(out, "out");
    *out = contour->contour.size();
  });
}

ftanet_status ftanet_contour_point(const ftanet_contour* contour, size_t index, double* time_s, double* freq_hz) {
  return guard([&] {
    need(contour, "contour");
    ftanet::require(index < contour->contour.size(), ftanet::ErrorCode::kInvalidArgument,
                    "contour index out of range");
    if (time_s) *time_s = contour->contour.times[index];
    if (freq_hz) *freq_hz = contour->contour.freqs[index];
  });
}

void ftanet_contour_free(ftanet_contour* contour) { delete contour; }

ftanet_status ftanet_evaluate(const ftanet_contour* ref, const ftanet_contour* est, double tolerance_cents,
                              ftanet_report* out) {
  return guard([&] {
    need(ref, "ref");
    need(est, "est");
    need(out, "out");
    ftanet::require(tolerance_cents > 0.0 && tolerance_cents <= 600.0, ftanet::ErrorCode::kInvalidArgument,
                    "tolerance must be in (0, 600] cents");
    const ftanet::EvalReport r = ftanet::evaluate_aligned(ref->contour, est->contour, tolerance_cents);
    *out = ftanet_report{r.oa, r.rpa, r.rca, r.vr, r.vfa, r.n_frames, r.n_ref_voiced, r.n_ref_unvoiced};
  });
}

namespace {
ftanet::EvalReport from_c(const ftanet_report& r) {
  ftanet::EvalReport e;
  e.oa = r.oa;
  e.rpa = r.rpa;
  e.rca = r.rca;
  e.vr = r.vr;
  e.vfa = r.vfa;
  e.n_frames = r.n_frames;
  e.n_ref_voiced = r.n_ref_voiced;
  e.n_ref_unvoiced = r.n_ref_unvoiced;
  return e;
}
}  // namespace

ftanet_status ftanet_report_line(const ftanet_report* report, char** out) {
  return guard([&] {
    need(report, "report");
    need(out, "out");
    *out = dup_string(ftanet::report_line(from_c(*report)));
  });
}

ftanet_status ftanet_report_json(const ftanet_report* report, char** out) {
  return guard([&] {
    need(report, "report");
    need(out, "out");
    *out = dup_string(ftanet::report_json(from_c(*report)));
  });
}

ftanet_status ftanet_synth(const char* spec_json_path, const char* const* overrides, size_t n_overrides,
                           const char* out_dir, char** manifest_out) {
  return guard([&] {
    need(out_dir, "out_dir");
    if (manifest_out) *manifest_out = nullptr;
    ftanet::SynthSpec spec;
    try {
      spec = ftanet::synth_spec_from_json(with_overrides(spec_json_path, overrides, n_overrides));
    } catch (const ftanet::Error& e) {
      if (!spec_json_path || e.code() == ftanet::ErrorCode::kNotFound) throw;
      ftanet::fail(e.code(), std::string(spec_json_path) + ": " + e.what());
    }
    const auto manifest = ftanet::synth_dataset(spec, out_dir);
    if (manifest_out) *manifest_out = dup_string(manifest.string());
  });
}

}  // extern "C"
