#ifndef BIKE_H
#define BIKE_H

/* Generated by cbindgen from crates/ffi/src. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define BIKE_OK 0

#define BIKE_ERR_ZERO_VECTOR 1

#define BIKE_ERR_DIM_MISMATCH 2

#define BIKE_ERR_NON_POSITIVE_TEMPERATURE 3

#define BIKE_ERR_NON_FINITE 4

#define BIKE_ERR_BAD_SHAPE 5

#define BIKE_ERR_LENGTH_MISMATCH 6

#define BIKE_ERR_BAD_MAGIC 10

#define BIKE_ERR_BAD_VERSION 11

#define BIKE_ERR_TRUNCATED_FILE 12

#define BIKE_ERR_TRAILING_BYTES 13

#define BIKE_ERR_DIM_OVERFLOW 14

#define BIKE_ERR_MISSING_FILE 15

#define BIKE_ERR_UNKNOWN_LABEL 16

#define BIKE_ERR_MANIFEST 17

#define BIKE_ERR_EMPTY_TEXT 18

#define BIKE_ERR_BAD_K 20

#define BIKE_ERR_EMPTY_ATTRIBUTES 21

#define BIKE_ERR_MISSING_PLACEHOLDER 22

#define BIKE_ERR_INDIVISIBLE_BATCH 30

#define BIKE_ERR_INCONSISTENT_SHARD_PLAN 31

#define BIKE_ERR_GATHER_NOT_RUN 32

#define BIKE_ERR_LAMBDA_OUT_OF_RANGE 40

#define BIKE_ERR_EMPTY_DATASET 41

#define BIKE_ERR_TOO_FEW_CLASSES 42

#define BIKE_ERR_DIM_TOO_SMALL 43

#define BIKE_ERR_INVALID_ARGUMENT 44

#define BIKE_ERR_IO 50

#define BIKE_ERR_JSON 51

#define BIKE_ERR_NULL_POINTER 100

#define BIKE_ERR_INVALID_STRING 101

#define BIKE_ERR_PANIC 102

typedef enum {
  BIKE_AGGREGATION_MEAN_POOL = 0,
  BIKE_AGGREGATION_CONCEPT_SPOTTING = 1,
} BikeAggregation;

typedef enum {
  /**
   * Every row sharing the anchor's label is a positive.
   */
  BIKE_POSITIVE_MODE_MULTI_POSITIVE = 0,
  /**
   * Only the aligned row is a positive.
   */
  BIKE_POSITIVE_MODE_DIAGONAL = 1,
} BikePositiveMode;

/**
 * Loaded dataset manifest: categories plus labeled videos.
 */
typedef struct BikeDataset BikeDataset;

/**
 * Loaded attribute lexicon.
 */
typedef struct BikeLexicon BikeLexicon;

/**
 * Dense row-major matrix of doubles.
 */
typedef struct BikeMatrix BikeMatrix;

typedef struct {
  double lambda;
  double tau_vcs;
  size_t k_attributes;
  /**
   * When false, attribute sentences are the bare phrase list.
   */
  bool use_prompt;
  BikeAggregation aggregation;
  /**
   * Seed of the surrogate sentence encoder used by the attribute branch.
   */
  uint64_t encoder_seed;
} BikeEvalConfig;

typedef struct {
  double x2y;
  double y2x;
  double sym;
} BikeInfoNce;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the last failure on this thread, or NULL if none.
 * The pointer stays valid until the next failing call on the same thread.
 */
const char *bike_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *bike_version(void);

/**
 * Defaults: lambda 0.6, tau_vcs 0.01, five attributes, prompt on,
 * concept spotting, encoder seed 0.
 */
BikeEvalConfig bike_eval_config_default(void);

/**
 * Copies `rows * cols` doubles into a new matrix.
 *
 * # Safety
 * `data` must point to `rows * cols` readable doubles; `out` must be writable.
 */
int32_t bike_matrix_new(size_t rows, size_t cols, const double *data, BikeMatrix **out);

/**
 * # Safety
 * `m` must be NULL or a handle from this library that has not been freed.
 */
void bike_matrix_free(BikeMatrix *m);

/**
 * # Safety
 * `m` must be a live matrix handle.
 */
size_t bike_matrix_rows(const BikeMatrix *m);

/**
 * # Safety
 * `m` must be a live matrix handle.
 */
size_t bike_matrix_cols(const BikeMatrix *m);

/**
 * Copies the row-major contents into `out`, which must hold exactly
 * `rows * cols` doubles.
 *
 * # Safety
 * `m` must be a live handle; `out` must point to `len` writable doubles.
 */
int32_t bike_matrix_copy(const BikeMatrix *m, double *out, size_t len);

/**
 * # Safety
 * `path` must be a NUL-terminated UTF-8 string; `out` must be writable.
 */
int32_t bike_bemb_read(const char *path, BikeMatrix **out);

/**
 * # Safety
 * `path` must be a NUL-terminated UTF-8 string; `m` a live handle.
 */
int32_t bike_bemb_write(const char *path, const BikeMatrix *m);

/**
 * # Safety
 * `path` must be a NUL-terminated UTF-8 string; `out` must be writable.
 */
int32_t bike_dataset_load(const char *path, BikeDataset **out);

/**
 * # Safety
 * `ds` must be NULL or a dataset handle that has not been freed.
 */
void bike_dataset_free(BikeDataset *ds);

/**
 * # Safety
 * `ds` must be a live dataset handle.
 */
size_t bike_dataset_num_videos(const BikeDataset *ds);

/**
 * # Safety
 * `ds` must be a live dataset handle.
 */
size_t bike_dataset_num_classes(const BikeDataset *ds);

/**
 * # Safety
 * `path` must be a NUL-terminated UTF-8 string; `out` must be writable.
 */
int32_t bike_lexicon_load(const char *path, BikeLexicon **out);

/**
 * # Safety
 * `lex` must be NULL or a lexicon handle that has not been freed.
 */
void bike_lexicon_free(BikeLexicon *lex);

/**
 * Top-1 and top-5 accuracy over the dataset. `lexicon` may be NULL, which
 * disables the attribute branch.
 *
 * # Safety
 * `ds` and `config` must be valid; `lexicon` NULL or valid; `top1` and
 * `top5` writable.
 */
int32_t bike_evaluate(const BikeDataset *ds,
                      const BikeEvalConfig *config,
                      const BikeLexicon *lexicon,
                      double *top1,
                      double *top5);

/**
 * Half-class protocol: mean and population std of top-1 over `repeats`
 * random halves of the class set.
 *
 * # Safety
 * As for [`bike_evaluate`]; `mean` and `std_dev` writable.
 */
int32_t bike_half_class_eval(const BikeDataset *ds,
                             const BikeEvalConfig *config,
                             const BikeLexicon *lexicon,
                             size_t repeats,
                             uint64_t seed,
                             double *mean,
                             double *std_dev);

/**
 * Per-frame saliency of `frames` (T x d) with respect to `words` (N x d).
 * Frame rows are normalized first. `out` must hold exactly T doubles.
 *
 * # Safety
 * Handles must be live; `out` must point to `out_len` writable doubles.
 */
int32_t bike_temporal_saliency(const BikeMatrix *frames,
                               const BikeMatrix *words,
                               double tau_vcs,
                               double *out,
                               size_t out_len);

/**
 * Symmetric multi-positive InfoNCE between row-aligned `x` and `y`.
 *
 * # Safety
 * Handles must be live; `labels` must point to `n_labels` values; `out`
 * must be writable.
 */
int32_t bike_symmetric_infonce(const BikeMatrix *x,
                               const BikeMatrix *y,
                               const size_t *labels,
                               size_t n_labels,
                               double tau,
                               BikeInfoNce *out);

/**
 * Video-category loss computed by `workers` simulated workers with batch
 * gathering. Rows of `video` and `category` must be unit-norm.
 *
 * # Safety
 * Handles must be live; `labels` must point to `n_labels` values; `out`
 * must be writable.
 */
int32_t bike_distributed_loss(const BikeMatrix *video,
                              const BikeMatrix *category,
                              const size_t *labels,
                              size_t n_labels,
                              double tau,
                              size_t workers,
                              BikePositiveMode mode,
                              bool threaded,
                              double *out);

/**
 * `out[c] = lambda * video[c] + (1 - lambda) * attributes[c]`.
 *
 * # Safety
 * All three pointers must reference `n` doubles; `out` writable.
 */
int32_t bike_fuse(const double *video,
                  const double *attributes,
                  size_t n,
                  double lambda,
                  double *out);

/**
 * Writes the `k` best labels into `out`, highest score first, ties to the
 * lower label.
 *
 * # Safety
 * `scores` must reference `n` doubles and `out` `k` writable slots.
 */
int32_t bike_predict_topk(const double *scores, size_t n, size_t k, size_t *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BIKE_H */
