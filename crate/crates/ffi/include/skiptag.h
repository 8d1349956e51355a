#ifndef SKIPTAG_H
#define SKIPTAG_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes. Values 2 to 4 match the command-line exit codes.
typedef enum SkipTagStatus {
  SKIP_TAG_STATUS_OK = 0,
  SKIP_TAG_STATUS_INTERNAL = 1,
  SKIP_TAG_STATUS_CONFIG = 2,
  SKIP_TAG_STATUS_DATA = 3,
  SKIP_TAG_STATUS_MODEL_INCOMPATIBLE = 4,
  SKIP_TAG_STATUS_NULL_POINTER = 5,
  SKIP_TAG_STATUS_INVALID_UTF8 = 6,
  SKIP_TAG_STATUS_OUT_OF_RANGE = 7,
} SkipTagStatus;

// A loaded model.
typedef struct SkipTagModel SkipTagModel;

// Tags, spans and gate bits for one instance.
typedef struct SkipTagPrediction SkipTagPrediction;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Load a checkpoint written by `skiptag train`.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum SkipTagStatus skiptag_model_load(const char *path, struct SkipTagModel **out);

// # Safety
// `model` must be null or a handle from [`skiptag_model_load`] not yet freed.
void skiptag_model_free(struct SkipTagModel *model);

// 1 for a skip-mode model, 0 for plain mode or a null handle.
//
// # Safety
// `model` must be null or a live handle.
int32_t skiptag_model_is_skip(const struct SkipTagModel *model);

// Number of tags in the model's tag set, 0 for a null handle.
//
// # Safety
// `model` must be null or a live handle.
size_t skiptag_model_num_tags(const struct SkipTagModel *model);

// Tag one sentence from the point of view of the percentage at
// `mask_index` (negative for none). Percentage tokens are found with the
// built-in recognizer. `pos` may be null, in which case every token gets the
// unknown POS tag.
//
// # Safety
// `tokens` (and `pos` when non-null) must hold `len` NUL-terminated strings;
// `out` must be a valid pointer.
enum SkipTagStatus skiptag_predict(const struct SkipTagModel *model,
                                   const char *const *tokens,
                                   const char *const *pos,
                                   size_t len,
                                   int64_t mask_index,
                                   struct SkipTagPrediction **out);

// # Safety
// `pred` must be null or a handle from [`skiptag_predict`] not yet freed.
void skiptag_prediction_free(struct SkipTagPrediction *pred);

// Number of tokens, 0 for a null handle.
//
// # Safety
// `pred` must be null or a live handle.
size_t skiptag_prediction_len(const struct SkipTagPrediction *pred);

// Tag string of token `index`, e.g. `B-part`; null when out of range. The
// string lives as long as the prediction.
//
// # Safety
// `pred` must be null or a live handle.
const char *skiptag_prediction_tag(const struct SkipTagPrediction *pred, size_t index);

// # Safety
// `pred` must be null or a live handle.
size_t skiptag_prediction_num_spans(const struct SkipTagPrediction *pred);

// Role and half-open token range of span `index`. The role string lives as
// long as the prediction.
//
// # Safety
// `pred` must be a live handle; `role`, `start` and `end` valid pointers.
enum SkipTagStatus skiptag_prediction_span(const struct SkipTagPrediction *pred,
                                           size_t index,
                                           const char **role,
                                           size_t *start,
                                           size_t *end);

// Copy the forward and backward update-gate bits (one byte per token) into
// caller buffers of at least `skiptag_prediction_len` bytes. Plain-mode
// predictions have no gates.
//
// # Safety
// `pred` must be a live handle; `u_fwd` and `u_bwd` must be writable for
// `len` bytes.
enum SkipTagStatus skiptag_prediction_gates(const struct SkipTagPrediction *pred,
                                            uint8_t *u_fwd,
                                            uint8_t *u_bwd,
                                            size_t len);

// Run the percentage recognizer. Writes up to `capacity` token indices and
// values and stores the total number of mentions in `count`.
//
// # Safety
// `tokens` must hold `len` NUL-terminated strings; `indices` and `values`
// must be writable for `capacity` elements (or null when `capacity` is 0);
// `count` must be valid.
enum SkipTagStatus skiptag_recognize_percentages(const char *const *tokens,
                                                 size_t len,
                                                 size_t *indices,
                                                 double *values,
                                                 size_t capacity,
                                                 size_t *count);

// Message of the last failure on this thread; empty when none. Valid until
// the next failing call on the same thread.
const char *skiptag_last_error_message(void);

// Library version string.
const char *skiptag_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SKIPTAG_H */
