#ifndef BRIGHTEYE_H
#define BRIGHTEYE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Number of entries written by `be_predict`: glaucoma then features 1-10.
#define BE_NUM_TASKS 11

typedef enum BeStatus {
  BE_STATUS_OK = 0,
  BE_STATUS_NULL_POINTER = 1,
  BE_STATUS_INVALID_ARGUMENT = 2,
  BE_STATUS_NOT_FOUND = 3,
  BE_STATUS_INCOMPATIBLE = 4,
  BE_STATUS_FAILED = 5,
  BE_STATUS_PANIC = 6,
} BeStatus;

// Loaded classifier bank (or a single classifier).
typedef struct BeClassifiers BeClassifiers;

// One detector box in pixel coordinates of the input image.
typedef struct BeDetection {
  double cx;
  double cy;
  double w;
  double h;
  double confidence;
} BeDetection;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread; empty after success.
// The pointer stays valid until the next call on the same thread.
const char *be_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *be_version(void);

// Loads a checkpoint file or a bank directory into `*out`.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum BeStatus be_classifiers_load(const char *path, struct BeClassifiers **out);

// Releases a handle. Null is ignored.
//
// # Safety
// `handle` must come from `be_classifiers_load` and not be used afterwards.
void be_classifiers_free(struct BeClassifiers *handle);

// Model input size.
//
// # Safety
// All pointers must be valid.
enum BeStatus be_classifiers_input_size(const struct BeClassifiers *handle,
                                        uint32_t *width,
                                        uint32_t *height);

// Whether the handle holds a classifier for task `index` (0 glaucoma,
// 1-10 features).
//
// # Safety
// All pointers must be valid.
enum BeStatus be_classifiers_has_task(const struct BeClassifiers *handle,
                                      uint32_t index,
                                      bool *present);

// Runs every loaded classifier on one interleaved RGB8 image.
//
// `detections` may be null when `n_detections` is 0. `probs` receives
// `BE_NUM_TASKS` values (glaucoma, then features 1-10); tasks without a
// classifier get NaN. `used_crop`, if not null, is set to whether the disc
// crop was applied.
//
// # Safety
// `rgb` must hold `3 * width * height` bytes, `detections` must hold
// `n_detections` entries and `probs` room for `BE_NUM_TASKS` floats.
enum BeStatus be_predict(const struct BeClassifiers *handle,
                         const uint8_t *rgb,
                         uint32_t width,
                         uint32_t height,
                         const struct BeDetection *detections,
                         size_t n_detections,
                         float *probs,
                         bool *used_crop);

// Sensitivity at the given specificity (0.95 for the screening metric).
//
// # Safety
// `scores` and `labels` must hold `n` entries; `out` must be valid.
enum BeStatus be_tpr_at_specificity(const double *scores,
                                    const uint8_t *labels,
                                    size_t n,
                                    double specificity,
                                    double *out);

// Area under the ROC curve.
//
// # Safety
// `scores` and `labels` must hold `n` entries; `out` must be valid.
enum BeStatus be_auc(const double *scores, const uint8_t *labels, size_t n, double *out);

// Fraction of differing flags between two vectors of length `n`.
//
// # Safety
// `pred` and `truth` must hold `n` entries; `out` must be valid.
enum BeStatus be_normalized_hamming(const uint8_t *pred,
                                    const uint8_t *truth,
                                    size_t n,
                                    double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BRIGHTEYE_H */
