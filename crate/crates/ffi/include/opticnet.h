#ifndef OPTICNET_H
#define OPTICNET_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum OptnStatus {
  OPTN_STATUS_OK = 0,
  /**
   * A required pointer was null or a buffer was too small.
   */
  OPTN_STATUS_NULL_ARGUMENT = 1,
  /**
   * Bad configuration value, unknown variant or unreadable path.
   */
  OPTN_STATUS_CONFIG = 2,
  /**
   * Malformed checkpoint or a checkpoint that does not fit the model.
   */
  OPTN_STATUS_CHECKPOINT = 3,
  /**
   * Tensor shapes or sizes disagree.
   */
  OPTN_STATUS_SHAPE = 4,
  /**
   * A metric is undefined for the given confusion matrix.
   */
  OPTN_STATUS_UNDEFINED = 5,
  /**
   * Any other argument violation.
   */
  OPTN_STATUS_CONTRACT = 6,
  OPTN_STATUS_IO = 7,
  /**
   * A Rust panic was caught at the boundary.
   */
  OPTN_STATUS_INTERNAL = 8,
} OptnStatus;

/**
 * Middle-convolution kinds of a residual unit.
 */
typedef enum OptnMiddleKind {
  OPTN_MIDDLE_KIND_REGULAR = 0,
  OPTN_MIDDLE_KIND_ATROUS = 1,
  OPTN_MIDDLE_KIND_SEPARABLE = 2,
  OPTN_MIDDLE_KIND_ATROUS_SEPARABLE = 3,
  OPTN_MIDDLE_KIND_BRANCHED = 4,
} OptnMiddleKind;

/**
 * Opaque model handle.
 */
typedef struct OptnModel OptnModel;

/**
 * Summary metrics of a confusion matrix, fractions in `[0, 1]`.
 */
typedef struct OptnMetrics {
  double accuracy;
  double sensitivity;
  double specificity;
} OptnMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failing call on this thread, or an empty string.
 * Valid until the next call into this library on the same thread.
 */
const char *optn_last_error(void);

/**
 * Builds a freshly initialized model.
 *
 * `variant` is `opticnet47`, `opticnet63` or `opticnet71`. `mid_kernel` is
 * the side of the middle kernel in residual convolution units (2 or 3).
 *
 * # Safety
 * `variant` must be a NUL-terminated string and `out` a valid pointer.
 */
enum OptnStatus optn_model_new(const char *variant,
                               uint32_t input_size,
                               uint32_t classes,
                               uint32_t mid_kernel,
                               uint64_t seed,
                               struct OptnModel **out);

/**
 * Releases a model. Null is ignored.
 *
 * # Safety
 * `model` must come from [`optn_model_new`] and not be used afterwards.
 */
void optn_model_free(struct OptnModel *model);

/**
 * Input side length and class count.
 *
 * # Safety
 * Pointers must be valid.
 */
enum OptnStatus optn_model_dims(const struct OptnModel *model,
                                uint32_t *input_size,
                                uint32_t *classes);

/**
 * Bias-free convolution and dense weights, and all trainable parameters.
 *
 * # Safety
 * Pointers must be valid.
 */
enum OptnStatus optn_model_param_counts(const struct OptnModel *model,
                                        uint64_t *weights,
                                        uint64_t *trainable);

/**
 * Inference-mode logits for `n` images.
 *
 * `pixels` holds `n * size * size * 3` values; `logits` has room for
 * `logits_len >= n * classes` values.
 *
 * # Safety
 * Buffers must be valid for the stated lengths.
 */
enum OptnStatus optn_model_predict(struct OptnModel *model,
                                   const float *pixels,
                                   uint32_t n,
                                   float *logits,
                                   size_t logits_len);

/**
 * Loads weights from a checkpoint file. The model is unchanged on error.
 *
 * # Safety
 * `path` must be a NUL-terminated string.
 */
enum OptnStatus optn_model_load(struct OptnModel *model, const char *path);

/**
 * Writes the model's parameters to a checkpoint file.
 *
 * # Safety
 * `path` must be a NUL-terminated string.
 */
enum OptnStatus optn_model_save(const struct OptnModel *model, const char *path);

/**
 * Accuracy and macro-averaged sensitivity and specificity of a `k × k`
 * confusion matrix given row-major with rows as true classes.
 *
 * # Safety
 * `counts` must hold `k * k` values.
 */
enum OptnStatus optn_metrics(const uint64_t *counts, uint32_t k, struct OptnMetrics *out);

/**
 * Penalty-weighted error in percent. `penalties` is a `k × k` row-major
 * matrix with a zero diagonal.
 *
 * # Safety
 * `counts` and `penalties` must hold `k * k` values.
 */
enum OptnStatus optn_weighted_error(const uint64_t *counts,
                                    const double *penalties,
                                    uint32_t k,
                                    double *out);

/**
 * The 4×4 penalty matrix for NORMAL, DRUSEN, CNV, DME, row-major.
 *
 * # Safety
 * `out` must have room for 16 values.
 */
enum OptnStatus optn_oct2017_penalties(double *out);

/**
 * Bias-free parameters of a residual unit's middle section.
 *
 * # Safety
 * `out` must be valid.
 */
enum OptnStatus optn_middle_params(enum OptnMiddleKind kind,
                                   uint64_t f,
                                   uint64_t d,
                                   uint64_t d_prev,
                                   uint64_t *out);

/**
 * Parameter depletion factor of `kind` against a regular `f × f`
 * convolution, percent.
 *
 * # Safety
 * `out` must be valid.
 */
enum OptnStatus optn_depletion_factor(enum OptnMiddleKind kind,
                                      uint64_t f,
                                      uint64_t d,
                                      double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OPTICNET_H */
