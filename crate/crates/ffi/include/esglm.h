#ifndef ESGLM_H
#define ESGLM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum EsglmStatus {
  ESGLM_STATUS_OK = 0,
  ESGLM_STATUS_NULL_POINTER = 1,
  ESGLM_STATUS_INVALID_UTF8 = 2,
  ESGLM_STATUS_IO = 3,
  ESGLM_STATUS_INVALID_INPUT = 4,
  ESGLM_STATUS_INVALID_CONFIG = 5,
  ESGLM_STATUS_CHECKPOINT = 6,
  ESGLM_STATUS_NUMERIC = 7,
  ESGLM_STATUS_BUFFER_TOO_SMALL = 8,
  ESGLM_STATUS_PANIC = 9,
  ESGLM_STATUS_OTHER = 10,
} EsglmStatus;

/**
 * Opaque model loaded from a checkpoint.
 */
typedef struct EsglmModel EsglmModel;

/**
 * Opaque WordPiece vocabulary.
 */
typedef struct EsglmVocab EsglmVocab;

/**
 * Shape and provenance of a loaded model.
 */
typedef struct EsglmModelInfo {
  size_t vocab_size;
  size_t max_seq_len;
  size_t hidden_dim;
  size_t num_layers;
  size_t num_heads;
  size_t ffn_dim;
  /**
   * 0 initial, 1 pretrained, 2 fine-tuned task a, 3 fine-tuned task b
   */
  uint32_t stage;
  uint64_t seed;
} EsglmModelInfo;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or an empty string.
 * The pointer stays valid until the next esglm call on the same thread.
 */
const char *esglm_last_error(void);

/**
 * Loads a one-token-per-line vocabulary file.
 *
 * # Safety
 * `path` must be a nul-terminated string and `out` a valid pointer.
 */
enum EsglmStatus esglm_vocab_load(const char *path, struct EsglmVocab **out);

/**
 * # Safety
 * `vocab` must come from [`esglm_vocab_load`] and not be used afterwards.
 */
void esglm_vocab_free(struct EsglmVocab *vocab);

/**
 * Number of tokens, or 0 for a null handle.
 *
 * # Safety
 * `vocab` must be null or a live handle.
 */
size_t esglm_vocab_len(const struct EsglmVocab *vocab);

/**
 * WordPiece-encodes `text`. `*out_len` always receives the number of ids;
 * if it exceeds `capacity` nothing is written and `BufferTooSmall` is
 * returned, so a first call with `capacity = 0` sizes the buffer.
 *
 * # Safety
 * `out_ids` must hold `capacity` elements (may be null when 0).
 */
enum EsglmStatus esglm_encode(const struct EsglmVocab *vocab,
                              const char *text,
                              uint32_t *out_ids,
                              size_t capacity,
                              size_t *out_len);

/**
 * Wraps token ids as `[CLS] ids [SEP]`, truncated or padded to
 * `max_seq_len`. Both output buffers must hold `max_seq_len` elements.
 *
 * # Safety
 * Pointers must be valid for the stated lengths.
 */
enum EsglmStatus esglm_prepare_input(const uint32_t *ids,
                                     size_t len,
                                     size_t max_seq_len,
                                     uint32_t *out_ids,
                                     uint8_t *out_mask,
                                     size_t *out_real_len);

/**
 * Loads a checkpoint file.
 *
 * # Safety
 * `path` must be a nul-terminated string and `out` a valid pointer.
 */
enum EsglmStatus esglm_model_load(const char *path, struct EsglmModel **out);

/**
 * # Safety
 * `model` must come from [`esglm_model_load`] and not be used afterwards.
 */
void esglm_model_free(struct EsglmModel *model);

/**
 * # Safety
 * `model` must be a live handle and `out` a valid pointer.
 */
enum EsglmStatus esglm_model_info(const struct EsglmModel *model, struct EsglmModelInfo *out);

/**
 * Classifies raw token ids (they are wrapped and padded to the model's
 * input length). Writes the two logits and the argmax class.
 *
 * # Safety
 * `ids` must hold `len` elements, `out_logits` two, `out_label` one.
 */
enum EsglmStatus esglm_classify(const struct EsglmModel *model,
                                const uint32_t *ids,
                                size_t len,
                                double *out_logits,
                                uint32_t *out_label);

/**
 * Picks the `top_k` sentences of `text` most similar to the benchmark
 * sentences (`|`-separated; null selects the built-in benchmark) and
 * returns `{"selected":[{"index","score","text"}],"token_ids":[...]}`.
 *
 * # Safety
 * Handles must be live; `out_json` must be a valid pointer.
 */
enum EsglmStatus esglm_extract(const struct EsglmVocab *vocab,
                               const struct EsglmModel *model,
                               const char *text,
                               const char *benchmark,
                               size_t top_k,
                               uint64_t seed,
                               char **out_json);

/**
 * # Safety
 * `s` must come from this library and not be used afterwards.
 */
void esglm_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ESGLM_H */
