#ifndef UNIVERSAL_NEURONS_H
#define UNIVERSAL_NEURONS_H

/* Generated by cbindgen from crates/ffi/src. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every `un_*` call.
 */
typedef enum UnStatus {
  UN_STATUS_OK = 0,
  UN_STATUS_NULL_POINTER = 1,
  UN_STATUS_INVALID_ARGUMENT = 2,
  UN_STATUS_IO = 3,
  UN_STATUS_FORMAT = 4,
  UN_STATUS_SHAPE = 5,
  UN_STATUS_OUT_OF_BOUNDS = 6,
  UN_STATUS_NUMERIC = 7,
  UN_STATUS_BUFFER_SIZE = 8,
  UN_STATUS_PANIC = 9,
} UnStatus;

/**
 * Which side of the MLP nonlinearity to read.
 */
typedef enum UnSide {
  UN_SIDE_PRE = 0,
  UN_SIDE_POST = 1,
} UnSide;

/**
 * A streaming Pearson accumulator.
 */
typedef struct UnCorr UnCorr;

/**
 * A loaded, preprocessed model.
 */
typedef struct UnModel UnModel;

typedef struct UnModelDims {
  size_t n_layer;
  size_t n_head;
  size_t d_model;
  size_t d_mlp;
  size_t d_vocab;
  size_t n_ctx;
} UnModelDims;

/**
 * Summary moments of one sample. Kurtosis is non-excess (3 for a Gaussian).
 */
typedef struct UnMoments {
  uint64_t count;
  double mean;
  double variance;
  double skew;
  double kurtosis;
  double sparsity;
} UnMoments;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *un_version(void);

/**
 * Message of the most recent failure on this thread; empty when none.
 * The pointer stays valid until the next failing call on the same thread.
 */
const char *un_last_error(void);

/**
 * Loads a model directory and preprocesses it (layer-norm folding and
 * centering). On success `*out` owns a new handle.
 *
 * # Safety
 * `dir` must be a NUL-terminated string and `out` a valid pointer.
 */
enum UnStatus un_model_load(const char *dir, struct UnModel **out);

/**
 * Releases a model handle. Null is ignored.
 *
 * # Safety
 * `model` must come from [`un_model_load`] and not be used afterwards.
 */
void un_model_free(struct UnModel *model);

/**
 * # Safety
 * Both pointers must be valid.
 */
enum UnStatus un_model_dims(const struct UnModel *model, struct UnModelDims *out);

/**
 * Runs one context window and writes every neuron's value into `out`,
 * `n_tokens × (n_layer · d_mlp)` row-major, layer-major columns.
 * `side` is a [`UnSide`] value.
 *
 * # Safety
 * `tokens` must hold `n_tokens` ids and `out` `out_len` floats.
 */
enum UnStatus un_model_neuron_activations(const struct UnModel *model,
                                          const uint32_t *tokens,
                                          size_t n_tokens,
                                          int32_t side,
                                          float *out,
                                          size_t out_len);

/**
 * Creates an empty accumulator for `n_a × n_b` correlations.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum UnStatus un_corr_new(size_t n_a, size_t n_b, struct UnCorr **out);

/**
 * Releases an accumulator. Null is ignored.
 *
 * # Safety
 * `corr` must come from this library and not be used afterwards.
 */
void un_corr_free(struct UnCorr *corr);

/**
 * Adds `n_rows` aligned samples: `a` is `n_rows × n_a`, `b` is
 * `n_rows × n_b`. Rows whose `mask` byte is zero are skipped; a null mask
 * keeps every row.
 *
 * # Safety
 * Buffers must hold the sizes above.
 */
enum UnStatus un_corr_update(struct UnCorr *corr,
                             const float *a,
                             const float *b,
                             size_t n_rows,
                             const uint8_t *mask);

/**
 * Folds `src` into `dst`; `src` is left unchanged.
 *
 * # Safety
 * Both handles must be valid and distinct.
 */
enum UnStatus un_corr_merge(struct UnCorr *dst, const struct UnCorr *src);

/**
 * # Safety
 * Both pointers must be valid.
 */
enum UnStatus un_corr_dims(const struct UnCorr *corr, size_t *n_a, size_t *n_b);

/**
 * Number of samples accumulated so far.
 *
 * # Safety
 * Both pointers must be valid.
 */
enum UnStatus un_corr_count(const struct UnCorr *corr, uint64_t *out);

/**
 * Writes the `n_a × n_b` Pearson matrix. Pairs involving a constant
 * variable are NaN.
 *
 * # Safety
 * `out` must hold `out_len` doubles.
 */
enum UnStatus un_corr_finalize(const struct UnCorr *corr, double *out, size_t out_len);

/**
 * Streams a token file through two models and returns the neuron
 * correlation accumulator and its rotated-basis baseline as new handles.
 * `exclusions` is an optional JSON exclusion config (null for none).
 *
 * # Safety
 * Strings must be NUL-terminated; output pointers must be valid.
 */
enum UnStatus un_correlate(const struct UnModel *reference,
                           const struct UnModel *comparison,
                           const char *tokens_path,
                           const char *exclusions_path,
                           uint64_t baseline_seed,
                           struct UnCorr **out_corr,
                           struct UnCorr **out_baseline);

/**
 * Per reference neuron: `max_j corr - max_k baseline` into `out_excess`
 * and the maximising comparison column into `out_argmax` (-1 when a row is
 * all NaN). `corr` is `n_ref × n_cmp`, `baseline` is `n_ref × n_rot`.
 *
 * # Safety
 * Buffers must hold the sizes above; outputs hold `n_ref` entries.
 */
enum UnStatus un_excess_correlation(const double *corr,
                                    const double *baseline,
                                    size_t n_ref,
                                    size_t n_cmp,
                                    size_t n_rot,
                                    double *out_excess,
                                    int64_t *out_argmax,
                                    size_t out_len);

/**
 * Mean, variance, skew, non-excess kurtosis and the fraction of positive
 * values of `n` samples. Needs at least four samples.
 *
 * # Safety
 * `xs` must hold `n` doubles; `out` must be valid.
 */
enum UnStatus un_moments(const double *xs, size_t n, struct UnMoments *out);

/**
 * Share of the variance of `acts` explained by the binary `labels`.
 * Samples whose `mask` byte is zero are skipped; a null mask keeps all.
 * The score is NaN when the activation is constant.
 *
 * # Safety
 * Buffers must hold `n` entries; `out_score` must be valid.
 */
enum UnStatus un_reduction_in_variance(const double *acts,
                                       const uint8_t *labels,
                                       const uint8_t *mask,
                                       size_t n,
                                       double *out_score);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* UNIVERSAL_NEURONS_H */
