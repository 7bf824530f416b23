#ifndef MITODET_H
#define MITODET_H

/* Generated by cbindgen from crates/ffi; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MitodetStatus {
  MITODET_STATUS_OK = 0,
  MITODET_STATUS_NULL_POINTER = 1,
  MITODET_STATUS_INVALID_ARGUMENT = 2,
  MITODET_STATUS_IO = 3,
  MITODET_STATUS_BAD_CHECKPOINT = 4,
  MITODET_STATUS_SHAPE = 5,
  MITODET_STATUS_PANIC = 6,
} MitodetStatus;

/**
 * Detections produced by [`mitodet_detect_rgb`].
 */
typedef struct MitodetDetections MitodetDetections;

/**
 * Trained detector plus the patch size it was trained on.
 */
typedef struct MitodetDetector MitodetDetector;

/**
 * Trained style-transfer generator.
 */
typedef struct MitodetTransfer MitodetTransfer;

typedef struct MitodetEvalConfig {
  double score_threshold;
  double nms_iou;
  double match_radius;
  size_t tile_overlap;
} MitodetEvalConfig;

typedef struct MitodetDetection {
  double x;
  double y;
  double score;
} MitodetDetection;

typedef struct MitodetPoint {
  double x;
  double y;
} MitodetPoint;

typedef struct MitodetCounts {
  size_t tp;
  size_t fp;
  size_t fn_;
  double precision;
  double recall;
  double f1;
} MitodetCounts;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. Valid until the
 * next call into this library from the same thread.
 */
const char *mitodet_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *mitodet_version(void);

struct MitodetEvalConfig mitodet_eval_config_default(void);

/**
 * Loads a detector checkpoint.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum MitodetStatus mitodet_detector_load(const char *path, struct MitodetDetector **out);

/**
 * # Safety
 * `det` must come from [`mitodet_detector_load`] and not be used afterwards.
 * NULL is ignored.
 */
void mitodet_detector_free(struct MitodetDetector *det);

/**
 * Patch size the detector was trained with, or 0 for NULL.
 *
 * # Safety
 * `det` must be NULL or a live detector handle.
 */
size_t mitodet_detector_patch_size(const struct MitodetDetector *det);

/**
 * Detects figures on an interleaved 8-bit RGB image of `width × height`
 * pixels (row stride `3 * width`). No style transfer is applied.
 *
 * # Safety
 * `rgb` must point to `3 * width * height` readable bytes; `det`, `cfg` and
 * `out` must be valid. `cfg` may be NULL for the defaults.
 */
enum MitodetStatus mitodet_detect_rgb(const struct MitodetDetector *det,
                                      const uint8_t *rgb,
                                      size_t width,
                                      size_t height,
                                      const struct MitodetEvalConfig *cfg,
                                      struct MitodetDetections **out);

/**
 * Number of detections, or 0 for NULL.
 *
 * # Safety
 * `dets` must be NULL or a live detections handle.
 */
size_t mitodet_detections_len(const struct MitodetDetections *dets);

/**
 * Copies detection `index` (highest score first) into `out`.
 *
 * # Safety
 * `dets` must be a live detections handle and `out` writable.
 */
enum MitodetStatus mitodet_detections_get(const struct MitodetDetections *dets,
                                          size_t index,
                                          struct MitodetDetection *out);

/**
 * # Safety
 * `dets` must come from [`mitodet_detect_rgb`] and not be used afterwards.
 * NULL is ignored.
 */
void mitodet_detections_free(struct MitodetDetections *dets);

/**
 * Loads the generator of a transfer checkpoint.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum MitodetStatus mitodet_transfer_load(const char *path, struct MitodetTransfer **out);

/**
 * # Safety
 * `t` must come from [`mitodet_transfer_load`] and not be used afterwards.
 * NULL is ignored.
 */
void mitodet_transfer_free(struct MitodetTransfer *t);

/**
 * Patch size the generator was trained with, or 0 for NULL.
 *
 * # Safety
 * `t` must be NULL or a live transfer handle.
 */
size_t mitodet_transfer_patch_size(const struct MitodetTransfer *t);

/**
 * Restyles a square interleaved RGB patch towards the style code
 * `weights[0..4]` (non-negative, summing to 1) and writes the result to
 * `rgb_out`. The side must be a positive multiple of 4.
 *
 * # Safety
 * `rgb_in` and `rgb_out` must each cover `3 * size * size` bytes, `weights`
 * four doubles, and `t` must be a live transfer handle.
 */
enum MitodetStatus mitodet_transfer_rgb(const struct MitodetTransfer *t,
                                        const uint8_t *rgb_in,
                                        size_t size,
                                        const double *weights,
                                        uint8_t *rgb_out);

/**
 * Scores detections on one slide against ground-truth centres.
 *
 * # Safety
 * `dets` must cover `n_dets` items and `truth` `n_truth` items (either may
 * be NULL when its count is 0); `cfg` may be NULL; `out` must be writable.
 */
enum MitodetStatus mitodet_evaluate(const struct MitodetDetection *dets,
                                    size_t n_dets,
                                    const struct MitodetPoint *truth,
                                    size_t n_truth,
                                    const struct MitodetEvalConfig *cfg,
                                    struct MitodetCounts *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MITODET_H */
