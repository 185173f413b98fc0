#ifndef AUTOFIELD_H
#define AUTOFIELD_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes.
typedef enum af_status {
  AF_STATUS_OK = 0,
  AF_STATUS_NULL_POINTER = 1,
  AF_STATUS_CONFIG = 2,
  AF_STATUS_CONTRACT = 3,
  AF_STATUS_FORMAT = 4,
  AF_STATUS_IO = 5,
  AF_STATUS_PARSE = 6,
  AF_STATUS_NUMERIC = 7,
  AF_STATUS_INVALID_UTF8 = 8,
  AF_STATUS_PANIC = 9,
} af_status;

// Field-selection controller.
typedef struct af_controller af_controller;

// Encoded dataset loaded from an `.afds` file.
typedef struct af_dataset af_dataset;

// Trained model loaded from a checkpoint.
typedef struct af_model af_model;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or null. Valid until the
// next call on the same thread.
const char *af_last_error(void);

// Library version as a static NUL-terminated string.
const char *af_version(void);

// Opens an encoded dataset file.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum af_status af_dataset_open(const char *path, struct af_dataset **out);

// # Safety
// `ds` must come from [`af_dataset_open`]; `out` must be writable.
enum af_status af_dataset_num_rows(const struct af_dataset *ds, size_t *out);

// # Safety
// `ds` must come from [`af_dataset_open`]; `out` must be writable.
enum af_status af_dataset_num_fields(const struct af_dataset *ds, size_t *out);

// Copies row `row`'s field indices into `indices` (capacity `len`) and its
// label into `label`.
//
// # Safety
// `ds` must come from [`af_dataset_open`]; `indices` must hold `len` values.
enum af_status af_dataset_row(const struct af_dataset *ds,
                              size_t row,
                              uint32_t *indices,
                              size_t len,
                              uint8_t *label);

// # Safety
// `ds` must come from [`af_dataset_open`] or be null; it is invalid afterwards.
void af_dataset_free(struct af_dataset *ds);

// Loads a model checkpoint.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum af_status af_model_load(const char *path, struct af_model **out);

// Number of fields an input row must carry (active or not).
//
// # Safety
// `model` must come from [`af_model_load`]; `out` must be writable.
enum af_status af_model_num_fields(const struct af_model *model, size_t *out);

// Number of fields the model actually reads.
//
// # Safety
// `model` must come from [`af_model_load`]; `out` must be writable.
enum af_status af_model_num_active(const struct af_model *model, size_t *out);

// Active field ids, ascending, written to `fields` (capacity `len`).
//
// # Safety
// `model` must come from [`af_model_load`]; `fields` must hold `len` values.
enum af_status af_model_active_fields(const struct af_model *model, size_t *fields, size_t len);

// Seed stored in the checkpoint.
//
// # Safety
// `model` must come from [`af_model_load`]; `out` must be writable.
enum af_status af_model_seed(const struct af_model *model, uint64_t *out);

// Click probabilities for `rows` rows of `num_fields` indices each
// (row-major) into `scores`.
//
// # Safety
// `indices` must hold `rows * num_fields` values and `scores` `rows` values.
enum af_status af_model_predict(const struct af_model *model,
                                const uint32_t *indices,
                                size_t rows,
                                size_t num_fields,
                                double *scores);

// # Safety
// `model` must come from [`af_model_load`] or be null; it is invalid afterwards.
void af_model_free(struct af_model *model);

// Area under the ROC curve with ties counted as one half.
//
// # Safety
// `scores` and `labels` must hold `n` values; `out` must be writable.
enum af_status af_auc(const double *scores, const double *labels, size_t n, double *out);

// Mean binary cross-entropy, probabilities clamped away from 0 and 1.
//
// # Safety
// `scores` and `labels` must hold `n` values; `out` must be writable.
enum af_status af_logloss(const double *scores, const double *labels, size_t n, double *out);

// Default annealed temperature after `step` controller updates.
double af_temperature(uint64_t step);

// New controller over `num_fields` fields with α¹ = 0.5 everywhere.
//
// # Safety
// `out` must be writable.
enum af_status af_controller_new(size_t num_fields, struct af_controller **out);

// Overwrites the logit pairs, laid out `[select_0, drop_0, select_1, ...]`.
//
// # Safety
// `logits` must hold `len` values.
enum af_status af_controller_set_logits(struct af_controller *c, const double *logits, size_t len);

// α¹ per field into `alpha` (capacity `len`).
//
// # Safety
// `c` must come from [`af_controller_new`]; `alpha` must hold `len` values.
enum af_status af_controller_alpha(const struct af_controller *c, double *alpha, size_t len);

// The `k` fields with the largest α¹, ascending, into `fields`.
//
// # Safety
// `c` must come from [`af_controller_new`]; `fields` must hold `len` values.
enum af_status af_controller_top_k(const struct af_controller *c,
                                   size_t k,
                                   size_t *fields,
                                   size_t len);

// # Safety
// `c` must come from [`af_controller_new`] or be null; it is invalid afterwards.
void af_controller_free(struct af_controller *c);

// Runs search, retraining and evaluation, writing artifacts to `out_dir`.
// `config_path` may be null for the defaults.
//
// # Safety
// Non-null arguments must be NUL-terminated strings.
enum af_status af_pipeline_run(const char *config_path, const char *out_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AUTOFIELD_H */
