#ifndef INKWELL_H
#define INKWELL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every exported function.
 */
typedef enum InkwellStatus {
  INKWELL_STATUS_OK = 0,
  INKWELL_STATUS_NULL_POINTER = 1,
  INKWELL_STATUS_INVALID_UTF8 = 2,
  INKWELL_STATUS_IO = 3,
  INKWELL_STATUS_INVALID_CHECKPOINT = 4,
  INKWELL_STATUS_INVALID_ARGUMENT = 5,
  INKWELL_STATUS_BUFFER_TOO_SMALL = 6,
  INKWELL_STATUS_PANIC = 7,
} InkwellStatus;

/**
 * Opaque handle to a loaded checkpoint.
 */
typedef struct InkwellCheckpoint InkwellCheckpoint;

/**
 * Message of the last failed call on this thread, or null when none.
 * Valid until the next failing call on the same thread.
 */
const char *inkwell_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *inkwell_version(void);

/**
 * Loads a checkpoint file. On success `*out` owns a handle that must be
 * released with [`inkwell_checkpoint_free`].
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum InkwellStatus inkwell_checkpoint_load(const char *path, struct InkwellCheckpoint **out);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `handle` must come from [`inkwell_checkpoint_load`] and not be freed twice.
 */
void inkwell_checkpoint_free(struct InkwellCheckpoint *handle);

/**
 * Length level the checkpoint was trained at.
 *
 * # Safety
 * `handle` must be live and `out` valid.
 */
enum InkwellStatus inkwell_checkpoint_length_level(const struct InkwellCheckpoint *handle,
                                                   double *out);

/**
 * Number of labels the checkpoint predicts.
 *
 * # Safety
 * `handle` must be live and `out` valid.
 */
enum InkwellStatus inkwell_checkpoint_label_count(const struct InkwellCheckpoint *handle,
                                                  size_t *out);

/**
 * Words kept out of `n` at `level`.
 *
 * # Safety
 * `out` must be valid.
 */
enum InkwellStatus inkwell_target_k(double level, size_t n, size_t *out);

/**
 * Extracts the rationale of a document given as `n_words` words at
 * `level` (the checkpoint's own level when `level <= 0`). Writes one
 * 0/1 byte per word into `mask` (capacity `mask_len`) and, when
 * `label` is not null, the predicted label index.
 *
 * # Safety
 * `words` must point to `n_words` NUL-terminated strings and `mask` to
 * `mask_len` writable bytes.
 */
enum InkwellStatus inkwell_extract(const struct InkwellCheckpoint *handle,
                                   const char *const *words,
                                   size_t n_words,
                                   double level,
                                   uint8_t *mask,
                                   size_t mask_len,
                                   size_t *label);

#endif  /* INKWELL_H */
