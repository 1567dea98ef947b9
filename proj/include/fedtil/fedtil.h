/*
 * Copyright 2026 The fedtil Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef FEDTIL_FEDTIL_H_
#define FEDTIL_FEDTIL_H_

#include <stddef.h>
#include <stdint.h>

#if defined(FEDTIL_BUILDING)
#define FEDTIL_API __attribute__((visibility("default")))
#else
#define FEDTIL_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum fedtil_status {
  FEDTIL_OK = 0,
  FEDTIL_ERR_INVALID_ARGUMENT = 1,
  FEDTIL_ERR_SHAPE_MISMATCH = 2,
  FEDTIL_ERR_PARSE = 3,
  FEDTIL_ERR_VERSION = 4,
  FEDTIL_ERR_IO = 5,
  FEDTIL_ERR_PROTOCOL = 6,
  FEDTIL_ERR_COLLABORATOR = 7,
  FEDTIL_ERR_INTERNAL = 99
} fedtil_status;

typedef struct fedtil_config fedtil_config;
typedef struct fedtil_weights fedtil_weights;
typedef struct fedtil_shard fedtil_shard;

/* Receives one line of progress output; `line` is valid during the call. */
typedef void (*fedtil_log_fn)(const char* line, void* user);

FEDTIL_API const char* fedtil_version(void);
FEDTIL_API const char* fedtil_status_name(fedtil_status status);
/* Message of the last failing call on this thread, or "". */
FEDTIL_API const char* fedtil_last_error(void);

/* ---- configuration ---- */

FEDTIL_API fedtil_status fedtil_config_default(fedtil_config** out);
FEDTIL_API fedtil_status fedtil_config_load(const char* path, fedtil_config** out);
/* key is "section.name", e.g. "federation.rounds". */
FEDTIL_API fedtil_status fedtil_config_set(fedtil_config* config, const char* key,
                                           const char* value);
/* Writes the effective configuration as INI text. *needed receives the size
   including the terminating NUL; buf may be NULL to query it. */
FEDTIL_API fedtil_status fedtil_config_to_ini(const fedtil_config* config, char* buf,
                                              size_t capacity, size_t* needed);
FEDTIL_API void fedtil_config_free(fedtil_config* config);

/* ---- pipeline commands (outputs under output.dir) ---- */

FEDTIL_API fedtil_status fedtil_gen_data(const fedtil_config* config, fedtil_log_fn log,
                                         void* user);
/* mode: "centralized", "federated" or "site-specific". */
FEDTIL_API fedtil_status fedtil_train(const fedtil_config* config, const char* mode,
                                      fedtil_log_fn log, void* user);
FEDTIL_API fedtil_status fedtil_evaluate(const fedtil_config* config, fedtil_log_fn log,
                                         void* user);
/* models: checkpoint names or .fshd paths; n_models = 0 selects all present.
   slide_dir may be NULL for the generated demo slide. */
FEDTIL_API fedtil_status fedtil_heatmap(const fedtil_config* config, const char* const* models,
                                        size_t n_models, const char* slide_dir,
                                        fedtil_log_fn log, void* user);

/* ---- weights ---- */

FEDTIL_API fedtil_status fedtil_weights_init(const fedtil_config* config, fedtil_weights** out);
FEDTIL_API fedtil_status fedtil_weights_zeros(const fedtil_config* config, fedtil_weights** out);
FEDTIL_API fedtil_status fedtil_weights_load(const char* path, fedtil_weights** out);
FEDTIL_API fedtil_status fedtil_weights_save(const fedtil_weights* weights, const char* path);
FEDTIL_API size_t fedtil_weights_param_count(const fedtil_weights* weights);
/* 1 if both have the same layout and bit-identical values. */
FEDTIL_API int fedtil_weights_equal(const fedtil_weights* a, const fedtil_weights* b);
FEDTIL_API void fedtil_weights_free(fedtil_weights* weights);

/* ---- site shards ---- */

FEDTIL_API fedtil_status fedtil_shard_load(const char* dir, fedtil_shard** out);
FEDTIL_API fedtil_status fedtil_shard_info(const fedtil_shard* shard, int* site_id,
                                           size_t* n_train, size_t* n_validation);
FEDTIL_API void fedtil_shard_free(fedtil_shard* shard);

/* ---- model use ---- */

/* pixels: count patches of side x side x channels (HWC, row-major) in [0,1]. */
FEDTIL_API fedtil_status fedtil_predict(const fedtil_config* config, const fedtil_weights* weights,
                                        const float* pixels, size_t count, double* probs_out);
FEDTIL_API fedtil_status fedtil_evaluate_shard(const fedtil_config* config,
                                               const fedtil_weights* weights,
                                               const fedtil_shard* shard,
                                               double* balanced_accuracy);

/* ---- metrics and geometry ---- */

FEDTIL_API fedtil_status fedtil_balanced_accuracy(uint64_t tp, uint64_t fp, uint64_t tn,
                                                  uint64_t fn, double* out);
FEDTIL_API fedtil_status fedtil_patch_grid(int width_px, int height_px, double microns_per_pixel,
                                           double patch_microns, int* patch_px, int* cols,
                                           int* rows);

#ifdef __cplusplus
}
#endif

#endif  // FEDTIL_FEDTIL_H_
