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

/* C interface to the ftanet melody-extraction library.
 *
 * Every function returns an ftanet_status. On failure a human-readable message
 * is available from ftanet_last_error() on the same thread until the next call.
 * Objects are opaque handles released with their matching *_free function;
 * passing NULL to a *_free function is a no-op. */

#ifndef FTANET_FTANET_H_
#define FTANET_FTANET_H_

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define FTANET_API __declspec(dllexport)
#else
#define FTANET_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum ftanet_status {
  FTANET_OK = 0,
  FTANET_INVALID_ARGUMENT = 1,
  FTANET_IO = 2,
  FTANET_NOT_FOUND = 3,
  FTANET_UNSUPPORTED_FORMAT = 4,
  FTANET_EMPTY_INPUT = 5,
  FTANET_CORRUPT_FILE = 6,
  FTANET_UNSUPPORTED_VERSION = 7,
  FTANET_SHAPE_MISMATCH = 8,
  FTANET_PARSE = 9,
  FTANET_NUMERIC = 10,
  FTANET_INTERNAL = 11
} ftanet_status;

typedef struct ftanet_config ftanet_config;
typedef struct ftanet_model ftanet_model;
typedef struct ftanet_contour ftanet_contour;
typedef struct ftanet_salience ftanet_salience;

typedef struct ftanet_report {
  double oa, rpa, rca, vr, vfa; /* fractions in [0, 1] */
  size_t n_frames;
  size_t n_ref_voiced;
  size_t n_ref_unvoiced;
} ftanet_report;

/* Called after every optimizer update. */
typedef void (*ftanet_progress_fn)(long step, int epoch, double loss, void* user);

FTANET_API const char* ftanet_last_error(void);
FTANET_API const char* ftanet_status_name(ftanet_status status);
FTANET_API const char* ftanet_version(void);
/* Strings returned through char** out-parameters are freed with this. */
FTANET_API void ftanet_string_free(char* s);

/* Run configuration. json_path may be NULL for the defaults. Overrides are
 * "key=value" strings with dotted keys, e.g. "layer_cfg.widths=[8,8,8]". */
FTANET_API ftanet_status ftanet_config_load(const char* json_path, const char* const* overrides,
                                            size_t n_overrides, ftanet_config** out);
FTANET_API ftanet_status ftanet_config_set_seed(ftanet_config* cfg, uint64_t seed);
FTANET_API ftanet_status ftanet_config_to_json(const ftanet_config* cfg, char** out);
FTANET_API void ftanet_config_free(ftanet_config* cfg);

/* Writes the CFP representation of a WAV file in the CFP1 binary format. */
FTANET_API ftanet_status ftanet_features(const ftanet_config* cfg, const char* wav_path, const char* out_path);

/* Trains on a manifest (wav<TAB>annotation<TAB>repeat per line). progress may be NULL. */
FTANET_API ftanet_status ftanet_train(const ftanet_config* cfg, const char* manifest_path,
                                      ftanet_progress_fn progress, void* user, ftanet_model** out);
/* Writes the parameter file and its "<path>.json" sidecar. */
FTANET_API ftanet_status ftanet_model_save(const ftanet_model* model, const char* path);
/* CSV "step,epoch,loss", one row per update; only for models fresh from training. */
FTANET_API ftanet_status ftanet_model_write_loss_csv(const ftanet_model* model, const char* path);
FTANET_API ftanet_status ftanet_model_load(const char* path, ftanet_model** out);
FTANET_API void ftanet_model_free(ftanet_model* model);

/* Salience map and decoded contour for one WAV file; either out-parameter may be NULL. */
FTANET_API ftanet_status ftanet_extract(const ftanet_model* model, const char* wav_path,
                                        ftanet_salience** salience, ftanet_contour** contour);
FTANET_API ftanet_status ftanet_salience_write_png(const ftanet_salience* salience, const char* path);
FTANET_API ftanet_status ftanet_salience_shape(const ftanet_salience* salience, size_t* rows, size_t* frames);
FTANET_API ftanet_status ftanet_salience_value(const ftanet_salience* salience, size_t row, size_t frame,
                                               float* out);
FTANET_API void ftanet_salience_free(ftanet_salience* salience);

FTANET_API ftanet_status ftanet_contour_load(const char* path, ftanet_contour** out);
FTANET_API ftanet_status ftanet_contour_save(const ftanet_contour* contour, const char* path);
FTANET_API ftanet_status ftanet_contour_length(const ftanet_contour* contour, size_t* out);
FTANET_API ftanet_status ftanet_contour_point(const ftanet_contour* contour, size_t index, double* time_s,
                                              double* freq_hz);
FTANET_API void ftanet_contour_free(ftanet_contour* contour);

/* Five-metric melody evaluation. If the two contours are not on the same time
 * grid the reference is resampled onto the (uniform) estimate grid. */
FTANET_API ftanet_status ftanet_evaluate(const ftanet_contour* ref, const ftanet_contour* est,
                                         double tolerance_cents, ftanet_report* out);
/* "OA 85.9 RPA ... VFA ..." in percent with one decimal. */
FTANET_API ftanet_status ftanet_report_line(const ftanet_report* report, char** out);
FTANET_API ftanet_status ftanet_report_json(const ftanet_report* report, char** out);

/* Synthetic dataset. spec_json_path may be NULL for the defaults; overrides as
 * for the run config. The manifest path is returned if manifest_out is non-NULL. */
FTANET_API ftanet_status ftanet_synth(const char* spec_json_path, const char* const* overrides, size_t n_overrides,
                                      const char* out_dir, char** manifest_out);

#ifdef __cplusplus
}
#endif

#endif /* FTANET_FTANET_H_ */
