#ifndef FEDCBDR_H
#define FEDCBDR_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum FcbdrStatus {
  FCBDR_STATUS_OK = 0,
  FCBDR_STATUS_NULL_POINTER = 1,
  FCBDR_STATUS_INVALID_ARGUMENT = 2,
  FCBDR_STATUS_INVALID_DIMENSION = 3,
  FCBDR_STATUS_MISSING_FILE = 4,
  FCBDR_STATUS_CONFIG = 5,
  FCBDR_STATUS_IO = 6,
  // Malformed checkpoint, IDX or metrics input.
  FCBDR_STATUS_FORMAT = 7,
  // Numerical failure such as degenerate features.
  FCBDR_STATUS_NUMERICAL = 8,
  // A Rust panic was caught at the boundary.
  FCBDR_STATUS_PANIC = 9,
  // Caller buffer too small; the required size was written back.
  FCBDR_STATUS_BUFFER_TOO_SMALL = 10,
} FcbdrStatus;

// Parsed experiment configuration.
typedef struct FcbdrConfig FcbdrConfig;

// Trained or loaded model.
typedef struct FcbdrModel FcbdrModel;

// Message of the last failed call on this thread, or null after a success.
// The pointer stays valid until the next call on the same thread.
const char *fcbdr_last_error(void);

// Parse and validate a JSON config.
//
// # Safety
// `json` must be a NUL-terminated string and `out` a writable pointer.
enum FcbdrStatus fcbdr_config_from_json(const char *json, struct FcbdrConfig **out);

// Serialize a config back to JSON into `buf` (including the NUL). On
// `BufferTooSmall`, `*needed` holds the required capacity.
//
// # Safety
// `config` must come from `fcbdr_config_from_json`; `buf` must hold `cap`
// bytes; `needed` must be writable.
enum FcbdrStatus fcbdr_config_to_json(const struct FcbdrConfig *config,
                                      char *buf,
                                      size_t cap,
                                      size_t *needed);

// # Safety
// `config` must come from `fcbdr_config_from_json` or be null.
void fcbdr_config_free(struct FcbdrConfig *config);

// Run every method and seed in `config`, writing metrics.jsonl,
// selection.jsonl and summary.json to `out_dir`.
//
// # Safety
// `config` must be a live handle and `out_dir` a NUL-terminated path.
enum FcbdrStatus fcbdr_run_experiment(const struct FcbdrConfig *config, const char *out_dir);

// Fresh model with an empty head; `hidden` lists the hidden layer widths.
// `classes` (may be empty) are added to the head as one block.
//
// # Safety
// `hidden` must hold `n_hidden` values, `classes` `n_classes` values, and
// `out` must be writable.
enum FcbdrStatus fcbdr_model_new(size_t d_in,
                                 const size_t *hidden,
                                 size_t n_hidden,
                                 const size_t *classes,
                                 size_t n_classes,
                                 uint64_t seed,
                                 struct FcbdrModel **out);

// # Safety
// `path` must be NUL-terminated and `out` writable.
enum FcbdrStatus fcbdr_model_load(const char *path, struct FcbdrModel **out);

// # Safety
// `model` must be a live handle and `path` NUL-terminated.
enum FcbdrStatus fcbdr_model_save(const struct FcbdrModel *model, const char *path);

// # Safety
// `model` must come from `fcbdr_model_new`/`fcbdr_model_load` or be null.
void fcbdr_model_free(struct FcbdrModel *model);

// Input width of `model`, or 0 for a null handle.
//
// # Safety
// `model` must be a live handle or null.
size_t fcbdr_model_input_dim(const struct FcbdrModel *model);

// Number of head classes of `model`, or 0 for a null handle.
//
// # Safety
// `model` must be a live handle or null.
size_t fcbdr_model_num_classes(const struct FcbdrModel *model);

// Predicted class id for each of `n` row-major inputs of width
// `input_dim`.
//
// # Safety
// `x` must hold `n * input_dim` values and `out_classes` `n` values.
enum FcbdrStatus fcbdr_model_predict(const struct FcbdrModel *model,
                                     const double *x,
                                     size_t n,
                                     size_t input_dim,
                                     size_t *out_classes);

// Singular values of a row-major `rows × cols` matrix, descending. `out`
// must hold `min(rows, cols)` values.
//
// # Safety
// `data` must hold `rows * cols` values and `out` `out_len` values.
enum FcbdrStatus fcbdr_singular_values(const double *data,
                                       size_t rows,
                                       size_t cols,
                                       double *out,
                                       size_t out_len);

// Row leverage scores of a row-major `rows × cols` matrix. With
// `full_rank` false only numerically nonzero directions count. Writes
// `rows` scores and the rank used.
//
// # Safety
// `data` must hold `rows * cols` values, `out_scores` `rows` values, and
// `out_rank` must be writable.
enum FcbdrStatus fcbdr_leverage_scores(const double *data,
                                       size_t rows,
                                       size_t cols,
                                       bool full_rank,
                                       double *out_scores,
                                       size_t *out_rank);

#endif  /* FEDCBDR_H */
