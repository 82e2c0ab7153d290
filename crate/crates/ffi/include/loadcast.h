#ifndef LOADCAST_H
#define LOADCAST_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum LcPruneMethod {
  LC_PRUNE_METHOD_L1 = 0,
  LC_PRUNE_METHOD_RANDOM = 1,
} LcPruneMethod;

/**
 * Status codes. Values 2 to 5 match the CLI exit codes.
 */
typedef enum LcStatus {
  LC_STATUS_OK = 0,
  /**
   * Invalid configuration or shape.
   */
  LC_STATUS_CONFIG = 2,
  /**
   * Unreadable, malformed or insufficient data.
   */
  LC_STATUS_DATA = 3,
  /**
   * Non-finite values.
   */
  LC_STATUS_NUMERIC = 4,
  /**
   * Internal invariant violated.
   */
  LC_STATUS_INTERNAL = 5,
  /**
   * Null pointer or invalid argument.
   */
  LC_STATUS_INVALID_ARGUMENT = 6,
  /**
   * A Rust panic was caught.
   */
  LC_STATUS_PANIC = 7,
} LcStatus;

/**
 * Opaque model handle.
 */
typedef struct LcModel LcModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The pointer stays
 * valid until the next loadcast call on the same thread.
 */
const char *lc_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *lc_version(void);

/**
 * Loads a model file into a new handle stored at `*out`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum LcStatus lc_model_load(const char *path, struct LcModel **out);

/**
 * Decodes a model from `len` bytes at `data`.
 *
 * # Safety
 * `data` must point to `len` readable bytes and `out` must be writable.
 */
enum LcStatus lc_model_from_bytes(const uint8_t *data, size_t len, struct LcModel **out);

/**
 * Writes the model to `path` atomically.
 *
 * # Safety
 * `model` must be a live handle and `path` a NUL-terminated string.
 */
enum LcStatus lc_model_save(const struct LcModel *model, const char *path);

/**
 * Releases a handle. NULL is ignored.
 *
 * # Safety
 * `model` must be NULL or a handle not yet freed.
 */
void lc_model_free(struct LcModel *model);

/**
 * Input features per time step, or 0 for a NULL handle.
 *
 * # Safety
 * `model` must be NULL or a live handle.
 */
size_t lc_model_feature_count(const struct LcModel *model);

/**
 * Window length k, or 0 for a NULL handle.
 *
 * # Safety
 * `model` must be NULL or a live handle.
 */
size_t lc_model_lookback(const struct LcModel *model);

/**
 * Index of the target feature, or 0 for a NULL handle.
 *
 * # Safety
 * `model` must be NULL or a live handle.
 */
size_t lc_model_target_feature(const struct LcModel *model);

/**
 * Trainable parameter count, or 0 for a NULL handle.
 *
 * # Safety
 * `model` must be NULL or a live handle.
 */
size_t lc_model_param_count(const struct LcModel *model);

/**
 * Multiply-accumulates of one single-step forecast, or 0 for a NULL handle.
 *
 * # Safety
 * `model` must be NULL or a live handle.
 */
uint64_t lc_model_flop_count(const struct LcModel *model);

/**
 * Recursive `steps`-ahead forecast in original units.
 *
 * `window` holds `rows × cols` values, row-major, oldest row first, with
 * `rows` equal to the lookback and `cols` to the feature count. `out` receives
 * `steps × cols` values and `out_len` must be at least that.
 *
 * # Safety
 * `model` must be a live handle; `window` must point to `rows × cols`
 * readable doubles and `out` to `out_len` writable doubles.
 */
enum LcStatus lc_model_forecast(const struct LcModel *model,
                                const double *window,
                                size_t rows,
                                size_t cols,
                                size_t steps,
                                double *out,
                                size_t out_len);

/**
 * Structured pruning into a new handle; the input handle is unchanged.
 *
 * # Safety
 * `model` must be a live handle and `out` a writable pointer.
 */
enum LcStatus lc_model_prune(const struct LcModel *model,
                             enum LcPruneMethod method,
                             double amount,
                             uint64_t seed,
                             struct LcModel **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LOADCAST_H */
