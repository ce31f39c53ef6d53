/* Copyright 2026 The ssladd Authors
 * SPDX-License-Identifier: Apache-2.0
 *
 * C interface to the ssladd library. Every function returns an
 * ssladd_status; on failure the message is available from
 * ssladd_last_error() (per thread, valid until the next call). Strings
 * returned through `char**` are owned by the caller and released with
 * ssladd_string_free().
 */

#ifndef SSLADD_H_
#define SSLADD_H_

#include <stddef.h>
#include <stdint.h>

#if defined(SSLADD_BUILDING_LIBRARY)
#define SSLADD_API __attribute__((visibility("default")))
#else
#define SSLADD_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum {
  SSLADD_OK = 0,
  SSLADD_INVALID_ARGUMENT = 1,
  SSLADD_IO = 2,
  SSLADD_FORMAT = 3,
  SSLADD_STATE = 4,
  SSLADD_NUMERIC = 5,
  SSLADD_INTERNAL = 6
} ssladd_status;

typedef struct ssladd_config ssladd_config;
typedef struct ssladd_model ssladd_model;

/* Progress lines (one per epoch) from the training commands. */
typedef void (*ssladd_log_fn)(const char* line, void* user);

SSLADD_API const char* ssladd_version(void);
SSLADD_API const char* ssladd_last_error(void);
/* Short name of a status: "ok", "invalid_argument", "io", ... */
SSLADD_API const char* ssladd_status_name(ssladd_status s);
SSLADD_API void ssladd_string_free(char* s);

/* ---- configuration ---------------------------------------------------- */

/* path NULL or "": built-in defaults. The output-directory environment
 * variable SSLADD_OUT_DIR, when set, replaces run.out_dir. */
SSLADD_API ssladd_status ssladd_config_load(const char* path, ssladd_config** out);
SSLADD_API void ssladd_config_free(ssladd_config* cfg);
/* key is "section.key", e.g. "run.seed" or "finetune.freeze_mode". */
SSLADD_API ssladd_status ssladd_config_set(ssladd_config* cfg, const char* key, const char* value);
SSLADD_API ssladd_status ssladd_config_get(const ssladd_config* cfg, const char* key, char** value);
/* Fully resolved config document. */
SSLADD_API ssladd_status ssladd_config_format(const ssladd_config* cfg, char** text);

/* ---- commands --------------------------------------------------------- */
/* Each writes its outputs below run.out_dir and returns a key=value report.
 * ckpt/split may be NULL for the defaults. */

SSLADD_API ssladd_status ssladd_gen_corpus(const ssladd_config* cfg, int materialize, char** report);
SSLADD_API ssladd_status ssladd_pretrain(const ssladd_config* cfg, ssladd_log_fn log, void* user, char** report);
SSLADD_API ssladd_status ssladd_finetune(const ssladd_config* cfg, const char* ckpt, ssladd_log_fn log, void* user,
                                         char** report);
SSLADD_API ssladd_status ssladd_evaluate(const ssladd_config* cfg, const char* ckpt, const char* split, char** report);
SSLADD_API ssladd_status ssladd_score(const ssladd_config* cfg, const char* score_file, char** report);
/* mode NULL: stored freeze flags; split NULL: no gate-usage table. */
SSLADD_API ssladd_status ssladd_inspect(const ssladd_config* cfg, const char* ckpt, const char* mode, const char* split,
                                        char** report);
SSLADD_API ssladd_status ssladd_export_embeddings(const ssladd_config* cfg, const char* ckpt, const char* split,
                                                  char** report);

/* ---- models ----------------------------------------------------------- */

SSLADD_API ssladd_status ssladd_model_load(const char* ckpt, ssladd_model** out);
SSLADD_API void ssladd_model_free(ssladd_model* model);
/* Detection score (higher = more bona fide) of one waveform. */
SSLADD_API ssladd_status ssladd_model_score(const ssladd_model* model, const float* samples, size_t n, double* score);
SSLADD_API ssladd_status ssladd_model_count(const ssladd_model* model, size_t* total, size_t* trainable);

/* ---- metrics ---------------------------------------------------------- */

/* labels: 1 bona fide, 0 spoof. */
SSLADD_API ssladd_status ssladd_compute_eer(const double* scores, const int* labels, size_t n, double* eer,
                                            double* threshold);

#ifdef __cplusplus
}
#endif

#endif /* SSLADD_H_ */
