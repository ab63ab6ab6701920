#ifndef RETINA_FUSION_H
#define RETINA_FUSION_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum RfStatus {
  RF_STATUS_OK = 0,
  RF_STATUS_NULL_POINTER = 1,
  RF_STATUS_INVALID_ARGUMENT = 2,
  RF_STATUS_SHAPE = 3,
  RF_STATUS_CONFIG = 4,
  RF_STATUS_CORRUPT = 5,
  RF_STATUS_IO = 6,
  RF_STATUS_NON_FINITE = 7,
  RF_STATUS_PANIC = 8,
  RF_STATUS_INTERNAL = 9,
} RfStatus;

/**
 * Backbone family codes accepted by `rf_model_new`.
 */
typedef enum RfFamily {
  RF_FAMILY_RESIDUAL = 0,
  RF_FAMILY_MBCONV = 1,
  RF_FAMILY_DENSE = 2,
} RfFamily;

/**
 * Architecture scale codes accepted by `rf_model_new`.
 */
typedef enum RfScale {
  RF_SCALE_DESK = 0,
  RF_SCALE_PAPER = 1,
} RfScale;

/**
 * Opaque model handle.
 */
typedef struct RfModel RfModel;

/**
 * Confusion counts and per-class metrics, diabetic being the positive class.
 */
typedef struct RfMetrics {
  size_t tp;
  size_t tn;
  size_t fp;
  size_t fn_;
  double accuracy;
  double normal_precision;
  double normal_recall;
  double normal_f1;
  double diabetic_precision;
  double diabetic_recall;
  double diabetic_f1;
} RfMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *rf_version(void);

/**
 * Message of the calling thread's last failure, or NULL if none. The
 * pointer stays valid until the next failing call on this thread.
 */
const char *rf_last_error(void);

/**
 * Builds a freshly initialized feature-fusion model over `n` families
 * (`RfFamily` codes) at the given `RfScale`.
 *
 * # Safety
 * `families` must point to `n` readable `u32` values and `out` must be a
 * valid pointer to write the handle to.
 */
enum RfStatus rf_model_new(const uint32_t *families,
                           size_t n,
                           uint32_t scale,
                           uint64_t seed,
                           struct RfModel **out);

/**
 * Builds a model from a TOML fusion spec (the `[model]` table of a run
 * config, without the header).
 *
 * # Safety
 * `spec_toml` must be a NUL-terminated string and `out` a valid pointer.
 */
enum RfStatus rf_model_from_spec_toml(const char *spec_toml, uint64_t seed, struct RfModel **out);

/**
 * Loads a checkpoint file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum RfStatus rf_model_load(const char *path, struct RfModel **out);

/**
 * Writes a checkpoint file recording `seed`.
 *
 * # Safety
 * `model` must be a live handle and `path` a NUL-terminated string.
 */
enum RfStatus rf_model_save(const struct RfModel *model, const char *path, uint64_t seed);

/**
 * Releases a handle. NULL is ignored.
 *
 * # Safety
 * `model` must be NULL or a handle not yet freed.
 */
void rf_model_free(struct RfModel *model);

/**
 * Side length S of the `[N, 3, S, S]` input the model expects.
 *
 * # Safety
 * `model` must be a live handle and `out` a valid pointer.
 */
enum RfStatus rf_model_input_size(const struct RfModel *model, size_t *out);

/**
 * Number of trainable parameters.
 *
 * # Safety
 * `model` must be a live handle and `out` a valid pointer.
 */
enum RfStatus rf_model_param_count(const struct RfModel *model, size_t *out);

/**
 * Diabetic-class probabilities of `n` normalized images laid out as
 * `[n, 3, S, S]` floats, written to `out[0..n]`.
 *
 * # Safety
 * `images` must hold `n * 3 * S * S` floats and `out` room for `n`.
 */
enum RfStatus rf_model_predict_proba(const struct RfModel *model,
                                     const float *images,
                                     size_t n,
                                     float *out);

/**
 * Confusion counts and metrics of `n` true and predicted labels (0 normal,
 * 1 diabetic).
 *
 * # Safety
 * `truth` and `predicted` must hold `n` bytes and `out` must be valid.
 */
enum RfStatus rf_metrics_compute(const uint8_t *truth,
                                 const uint8_t *predicted,
                                 size_t n,
                                 struct RfMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RETINA_FUSION_H */
