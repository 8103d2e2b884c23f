#ifndef FFUSION_H
#define FFUSION_H

#pragma once

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

#define FFUSION_MASK_CAMERA 1

#define FFUSION_MASK_DEPTH 2

#define FFUSION_MASK_TEXT 4

#define FFUSION_MASK_ALL 7

#define FFUSION_COMMANDS 4

#define FFUSION_MODALITIES 3

typedef enum FfusionStatus {
  FFUSION_STATUS_OK = 0,
  FFUSION_STATUS_NULL_ARGUMENT = 1,
  FFUSION_STATUS_INVALID_ARGUMENT = 2,
  FFUSION_STATUS_MALFORMED = 3,
  FFUSION_STATUS_MISSING_FILE = 4,
  FFUSION_STATUS_IO = 5,
  FFUSION_STATUS_CHECKPOINT_MISMATCH = 6,
  /**
   * No modality was available to fuse; the defined fail-silent outcome.
   */
  FFUSION_STATUS_NO_MODALITY = 7,
  FFUSION_STATUS_DOMAIN = 8,
  FFUSION_STATUS_PANIC = 9,
} FfusionStatus;

/**
 * A parsed architecture description with its decomposition verdicts.
 */
typedef struct FfusionArchGraph FfusionArchGraph;

/**
 * A loaded checkpoint with the model and sensor-rig configuration.
 */
typedef struct FfusionModel FfusionModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version, a static string.
 */
const char *ffusion_version(void);

/**
 * Message of the last failed call on this thread, or NULL after a success.
 * Valid until the next call on this thread.
 */
const char *ffusion_last_error(void);

/**
 * # Safety
 * `s` must come from this library or be NULL.
 */
void ffusion_string_free(char *s);

/**
 * Whether levels with ranks `a` and `b` (QM=0 .. D=4) may decompose a
 * parent of rank `parent`, assuming the parts are independent.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum FfusionStatus ffusion_asil_decomposition_allowed(uint8_t parent,
                                                      uint8_t a,
                                                      uint8_t b,
                                                      bool *out);

/**
 * Parses and checks an architecture description.
 *
 * # Safety
 * `text` must be a NUL-terminated string and `out` a valid pointer.
 */
enum FfusionStatus ffusion_arch_parse(const char *text, struct FfusionArchGraph **out);

/**
 * # Safety
 * `graph` must come from [`ffusion_arch_parse`] or be NULL.
 */
void ffusion_arch_free(struct FfusionArchGraph *graph);

/**
 * # Safety
 * `graph` must be a live handle and `out` a valid pointer.
 */
enum FfusionStatus ffusion_arch_claim_count(const struct FfusionArchGraph *graph, size_t *out);

/**
 * # Safety
 * `graph` must be a live handle and `out` a valid pointer.
 */
enum FfusionStatus ffusion_arch_claim_valid(const struct FfusionArchGraph *graph,
                                            size_t index,
                                            bool *out);

/**
 * All verdicts as a JSON array; free with [`ffusion_string_free`].
 *
 * # Safety
 * `graph` must be a live handle and `out` a valid pointer.
 */
enum FfusionStatus ffusion_arch_verdicts_json(const struct FfusionArchGraph *graph, char **out);

/**
 * Loads a checkpoint. `run_config_json` is a run config as accepted by the
 * command line, or NULL for the defaults; it fixes the model shape and the
 * camera/LiDAR rig.
 *
 * # Safety
 * String arguments must be NUL-terminated; `out` must be a valid pointer.
 */
enum FfusionStatus ffusion_model_load(const char *checkpoint_path,
                                      const char *run_config_json,
                                      struct FfusionModel **out);

/**
 * # Safety
 * `model` must come from [`ffusion_model_load`] or be NULL.
 */
void ffusion_model_free(struct FfusionModel *model);

/**
 * Side length in pixels of the square RGB frame the model expects.
 *
 * # Safety
 * `model` must be a live handle and `out` a valid pointer.
 */
enum FfusionStatus ffusion_model_image_size(const struct FfusionModel *model, size_t *out);

/**
 * Runs one frame. `rgb` holds `size*size*3` row-major values in [0, 1];
 * `points` holds `n_points` LiDAR-frame xyz triples (may be NULL when
 * `n_points` is 0); `text` may be NULL for no command text. `mask` selects
 * modalities with the `FFUSION_MASK_*` bits. Writes the command
 * distribution (`FFUSION_COMMANDS` values: stop, go, turn_left, turn_right)
 * and the arbitration weights (`FFUSION_MODALITIES` values: camera, depth,
 * text). Returns `NoModality` when nothing could be fused.
 *
 * # Safety
 * Every non-NULL pointer must reference at least the stated number of
 * elements.
 */
enum FfusionStatus ffusion_model_predict(const struct FfusionModel *model,
                                         const double *rgb,
                                         size_t rgb_len,
                                         const double *points,
                                         size_t n_points,
                                         const char *text,
                                         uint32_t mask,
                                         double *out_command,
                                         double *out_arbitration);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FFUSION_H */
