#ifndef SCHED_PERF_H
#define SCHED_PERF_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes of the C API.
 */
typedef enum SpStatus {
  SP_STATUS_OK = 0,
  SP_STATUS_NULL_POINTER = 1,
  SP_STATUS_INVALID_ARGUMENT = 2,
  SP_STATUS_IO = 3,
  SP_STATUS_FORMAT = 4,
  SP_STATUS_INCOMPATIBLE = 5,
  SP_STATUS_BUFFER_TOO_SMALL = 6,
  SP_STATUS_INTERNAL = 7,
} SpStatus;

/**
 * A dataset held in memory.
 */
typedef struct SpDataset SpDataset;

/**
 * A loaded checkpoint.
 */
typedef struct SpModel SpModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread (empty after a success).
 * The pointer stays valid until the next API call on the same thread.
 */
const char *sp_last_error(void);

/**
 * Library version as a static nul-terminated string.
 */
const char *sp_version(void);

/**
 * Loads a checkpoint file.
 *
 * # Safety
 * `path` must be a nul-terminated string and `out` a valid pointer.
 */
enum SpStatus sp_model_load(const char *path, struct SpModel **out);

/**
 * Releases a model. Null is ignored.
 *
 * # Safety
 * `model` must come from [`sp_model_load`] and not be used afterwards.
 */
void sp_model_free(struct SpModel *model);

/**
 * Reads a dataset or single-record file.
 *
 * # Safety
 * `path` must be a nul-terminated string and `out` a valid pointer.
 */
enum SpStatus sp_dataset_load(const char *path, struct SpDataset **out);

/**
 * Generates a synthetic dataset with default settings.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum SpStatus sp_dataset_generate(uint32_t pipelines,
                                  uint32_t schedules_per_pipeline,
                                  uint64_t seed,
                                  struct SpDataset **out);

/**
 * Releases a dataset. Null is ignored.
 *
 * # Safety
 * `dataset` must come from this library and not be used afterwards.
 */
void sp_dataset_free(struct SpDataset *dataset);

/**
 * Number of records; 0 for null.
 *
 * # Safety
 * `dataset` must be null or a live handle.
 */
uintptr_t sp_dataset_len(const struct SpDataset *dataset);

/**
 * Mean measured run time (ms) of record `index`.
 *
 * # Safety
 * `dataset` must be a live handle and `out` a valid pointer.
 */
enum SpStatus sp_dataset_mean_runtime(const struct SpDataset *dataset,
                                      uintptr_t index,
                                      double *out);

/**
 * Predicts every record of `dataset` into `out[0..len)`, where `len` must
 * be at least `sp_dataset_len(dataset)`.
 *
 * # Safety
 * Handles must be live; `out` must point to `len` writable doubles.
 */
enum SpStatus sp_model_predict(const struct SpModel *model,
                               const struct SpDataset *dataset,
                               double *out,
                               uintptr_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SCHED_PERF_H */
