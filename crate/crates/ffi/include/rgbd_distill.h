/* Copyright 2026 The rgbd-distill Authors
 * SPDX-License-Identifier: Apache-2.0
 *
 * Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#ifndef RGBD_DISTILL_H
#define RGBD_DISTILL_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum RdStatus {
  RD_STATUS_OK = 0,
  RD_STATUS_NULL_ARGUMENT = 1,
  RD_STATUS_CONFIG = 2,
  RD_STATUS_SHAPE = 3,
  RD_STATUS_INVALID_ARGUMENT = 4,
  RD_STATUS_DATA = 5,
  RD_STATUS_CHECKPOINT = 6,
  RD_STATUS_NON_FINITE = 7,
  RD_STATUS_IO = 8,
  RD_STATUS_PANIC = 9,
} RdStatus;

/**
 * Modality selector.
 */
typedef enum RdModality {
  RD_MODALITY_RGB = 0,
  RD_MODALITY_DEPTH = 1,
} RdModality;

/**
 * Training configuration.
 */
typedef struct RdConfig RdConfig;

/**
 * Confusion matrix accumulator.
 */
typedef struct RdConfusion RdConfusion;

/**
 * Deployed modality networks loaded from a checkpoint.
 */
typedef struct RdModel RdModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer is
 * valid until the next failing call on the same thread.
 */
const char *rd_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *rd_version(void);

/**
 * New configuration holding the defaults.
 */
struct RdConfig *rd_config_new(void);

void rd_config_free(struct RdConfig *cfg);

/**
 * Sets one key from its textual value.
 */
enum RdStatus rd_config_set(struct RdConfig *cfg, const char *key, const char *value);

/**
 * Copies the textual value of `key` into `buf` (NUL-terminated, truncated
 * to `len`); `needed` receives the full length including the NUL.
 */
enum RdStatus rd_config_get(const struct RdConfig *cfg,
                            const char *key,
                            char *buf,
                            size_t len,
                            size_t *needed);

/**
 * Checks every configuration bound.
 */
enum RdStatus rd_config_validate(const struct RdConfig *cfg);

/**
 * Learning rate at `epoch` under the configured warmup and decay.
 */
enum RdStatus rd_lr_at(const struct RdConfig *cfg, double epoch, double *out);

/**
 * Mean of the cross entropies of two `b×h×w×c` logit arrays against one
 * `b×h×w` label array; `grad`/`grad_mix` may be null.
 */
enum RdStatus rd_seg_loss(const double *logits,
                          const double *logits_mix,
                          const uint8_t *labels,
                          size_t b,
                          size_t h,
                          size_t w,
                          size_t c,
                          uint8_t ignore,
                          double *out,
                          double *grad,
                          double *grad_mix);

/**
 * Batch-averaged sum of signed cosines between two `b×h×w×d` arrays.
 */
enum RdStatus rd_orthogonality_loss(const double *inv,
                                    const double *spc,
                                    size_t b,
                                    size_t h,
                                    size_t w,
                                    size_t d,
                                    double *out);

/**
 * Contrastive loss of `batch×dim` unit-norm anchor rows against the other
 * modality's rows.
 */
enum RdStatus rd_contrastive_loss(const double *anchor,
                                  const double *other,
                                  size_t batch,
                                  size_t dim,
                                  double tau,
                                  bool include_positive,
                                  double *out);

/**
 * Empty confusion matrix over `classes` classes, or null for `classes == 0`.
 */
struct RdConfusion *rd_confusion_new(size_t classes);

void rd_confusion_free(struct RdConfusion *cm);

/**
 * Adds `n` aligned prediction/ground-truth pixels; pixels whose ground
 * truth equals `ignore` are skipped.
 */
enum RdStatus rd_confusion_accumulate(struct RdConfusion *cm,
                                      const uint8_t *pred,
                                      const uint8_t *gt,
                                      size_t n,
                                      uint8_t ignore);

/**
 * Mean IoU; `per_class` (may be null) receives `classes` values with NaN
 * for classes whose union is empty.
 */
enum RdStatus rd_confusion_miou(const struct RdConfusion *cm, double *mean, double *per_class);

/**
 * Loads every modality network stored in a checkpoint.
 */
enum RdStatus rd_model_load(const char *path, struct RdModel **out);

void rd_model_free(struct RdModel *model);

/**
 * Whether the model holds a network for `modality`.
 */
bool rd_model_has(const struct RdModel *model, enum RdModality modality);

/**
 * Number of classes predicted by the model, or 0 for a null handle.
 */
size_t rd_model_num_classes(const struct RdModel *model);

/**
 * Per-pixel class predictions for a `b×h×w×channels` input of the given
 * modality (3 channels for RGB, 1 for depth); writes `b·h·w` labels.
 */
enum RdStatus rd_model_predict(struct RdModel *model,
                               enum RdModality modality,
                               const float *input,
                               size_t b,
                               size_t h,
                               size_t w,
                               uint8_t *labels);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RGBD_DISTILL_H */
