#ifndef STYLEX_H
#define STYLEX_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum StxStatus {
  STX_STATUS_OK = 0,
  STX_STATUS_NULL_POINTER = 1,
  STX_STATUS_INVALID_UTF8 = 2,
  STX_STATUS_IO = 3,
  STX_STATUS_INVALID_ARGUMENT = 4,
  STX_STATUS_FORMAT = 5,
  STX_STATUS_BUFFER_TOO_SMALL = 6,
  STX_STATUS_PANIC = 7,
} StxStatus;

/**
 * Opaque model handle.
 */
typedef struct StxModel StxModel;

/**
 * Opaque tokenizer handle.
 */
typedef struct StxTokenizer StxTokenizer;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread. Valid until the next
 * failing call on the same thread. Never null.
 */
const char *stx_last_error(void);

/**
 * Library version as a static string.
 */
const char *stx_version(void);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum StxStatus stx_tokenizer_load(const char *path, struct StxTokenizer **out);

/**
 * # Safety
 * `tok` must come from [`stx_tokenizer_load`] and not be freed twice.
 */
void stx_tokenizer_free(struct StxTokenizer *tok);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum StxStatus stx_model_load(const char *path, struct StxModel **out);

/**
 * # Safety
 * `model` must come from [`stx_model_load`] and not be freed twice.
 */
void stx_model_free(struct StxModel *model);

/**
 * Length of the bag-of-embeddings vector `w`.
 *
 * # Safety
 * `model` must be a live handle or null (which yields 0).
 */
size_t stx_model_w_dim(const struct StxModel *model);

/**
 * Length of the encoder-state vector `e`.
 *
 * # Safety
 * `model` must be a live handle or null (which yields 0).
 */
size_t stx_model_e_dim(const struct StxModel *model);

/**
 * Rewrites `sentence` into the style `target` (a tag id such as `neg`).
 * On success `*out` holds a new string for [`stx_string_free`].
 *
 * # Safety
 * Handles must be live, strings NUL-terminated, `out` valid.
 */
enum StxStatus stx_transfer(const struct StxModel *model,
                            const struct StxTokenizer *tok,
                            const char *sentence,
                            const char *target,
                            char **out);

/**
 * Writes the two sentence embeddings of `sentence` into `w` and `e`, of
 * capacity `w_cap` and `e_cap` (see [`stx_model_w_dim`], [`stx_model_e_dim`]).
 *
 * # Safety
 * Handles must be live, `sentence` NUL-terminated, and `w`, `e` valid for
 * their capacities.
 */
enum StxStatus stx_embed(const struct StxModel *model,
                         const struct StxTokenizer *tok,
                         const char *sentence,
                         double *w,
                         size_t w_cap,
                         double *e,
                         size_t e_cap);

/**
 * # Safety
 * `s` must come from this library, or be null.
 */
void stx_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STYLEX_H */
