#ifndef FLST_H
#define FLST_H

#pragma once

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FlstStatus {
  FLST_STATUS_OK = 0,
  FLST_STATUS_NULL_ARGUMENT = 1,
  FLST_STATUS_CONFIG = 2,
  FLST_STATUS_NUMERIC = 3,
  FLST_STATUS_IO = 4,
  FLST_STATUS_SHAPE = 5,
  FLST_STATUS_PANIC = 6,
} FlstStatus;

typedef enum FlstActivation {
  FLST_ACTIVATION_RELU = 0,
  FLST_ACTIVATION_TANH = 1,
  FLST_ACTIVATION_SOFTMAX = 2,
  FLST_ACTIVATION_LINEAR = 3,
} FlstActivation;

typedef enum FlstMetric {
  FLST_METRIC_MAHALANOBIS = 0,
  FLST_METRIC_COSINE = 1,
} FlstMetric;

/**
 * Opaque dense network.
 */
typedef struct FlstMlp FlstMlp;

/**
 * Opaque fitted difficulty ranking.
 */
typedef struct FlstRanking FlstRanking;

/**
 * Opaque experiment summary.
 */
typedef struct FlstRunSummary FlstRunSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or null. Valid until the next call.
 */
const char *flst_last_error(void);

/**
 * Builds a seeded network. `activations` has `layer_count - 1` entries.
 *
 * # Safety
 * `sizes` must point to `layer_count` values and `activations` to `layer_count - 1`.
 */
enum FlstStatus flst_mlp_new(const size_t *sizes,
                             const enum FlstActivation *activations,
                             size_t layer_count,
                             uint64_t seed,
                             struct FlstMlp **out);

/**
 * Input width of the network.
 *
 * # Safety
 * `net` must be a live handle or null.
 */
size_t flst_mlp_input_dim(const struct FlstMlp *net);

/**
 * Output width of the network.
 *
 * # Safety
 * `net` must be a live handle or null.
 */
size_t flst_mlp_output_dim(const struct FlstMlp *net);

/**
 * Runs a row-major batch of `rows` inputs through the network into `output`
 * (`rows * output_dim` values).
 *
 * # Safety
 * Buffers must hold the stated number of `f64` values.
 */
enum FlstStatus flst_mlp_forward(const struct FlstMlp *net,
                                 const double *input,
                                 size_t rows,
                                 double *output);

/**
 * Writes the network to a checkpoint file.
 *
 * # Safety
 * `net` must be a live handle and `path` a NUL-terminated string.
 */
enum FlstStatus flst_mlp_save(const struct FlstMlp *net, const char *path);

/**
 * Reads a checkpoint file into a new handle.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum FlstStatus flst_mlp_load(const char *path, struct FlstMlp **out);

/**
 * # Safety
 * `net` must come from this library and not be used afterwards. Null is ignored.
 */
void flst_mlp_free(struct FlstMlp *net);

/**
 * Fits a difficulty ranking on `rows` row-major feature vectors of width `cols`.
 *
 * # Safety
 * `features` must hold `rows * cols` values.
 */
enum FlstStatus flst_ranking_fit(const double *features,
                                 size_t rows,
                                 size_t cols,
                                 enum FlstMetric metric,
                                 struct FlstRanking **out);

/**
 * Difficulty score of one feature vector of length `len`.
 *
 * # Safety
 * `x` must hold `len` values and `score` be writable.
 */
enum FlstStatus flst_ranking_score(const struct FlstRanking *model,
                                   const double *x,
                                   size_t len,
                                   double *score);

/**
 * # Safety
 * `model` must come from this library and not be used afterwards. Null is ignored.
 */
void flst_ranking_free(struct FlstRanking *model);

/**
 * Inverse-entropy penalty `1 / (H(p) + epsilon)` of a probability vector.
 *
 * # Safety
 * `p` must hold `len` values and `out` be writable.
 */
enum FlstStatus flst_entropy_penalty(const double *p, size_t len, double epsilon, double *out);

/**
 * Parses and validates a TOML config file.
 *
 * # Safety
 * `path` must be a NUL-terminated string.
 */
enum FlstStatus flst_validate_config(const char *path);

/**
 * Runs the experiment in `config_path`, writing outputs to `out_dir`.
 *
 * # Safety
 * Both paths must be NUL-terminated strings and `out` writable.
 */
enum FlstStatus flst_run_experiment(const char *config_path,
                                    const char *out_dir,
                                    struct FlstRunSummary **out);

/**
 * Final test accuracy, or NaN when unavailable.
 *
 * # Safety
 * `s` must be a live handle or null.
 */
double flst_summary_final_accuracy(const struct FlstRunSummary *s);

/**
 * Mean scheduler entropy over the final window, or NaN for a null handle.
 *
 * # Safety
 * `s` must be a live handle or null.
 */
double flst_summary_mean_entropy(const struct FlstRunSummary *s);

/**
 * Number of nodes covered by the selection frequencies.
 *
 * # Safety
 * `s` must be a live handle or null.
 */
size_t flst_summary_node_count(const struct FlstRunSummary *s);

/**
 * Copies up to `len` selection frequencies into `out`; returns how many were written.
 *
 * # Safety
 * `out` must hold `len` values.
 */
size_t flst_summary_selection_frequencies(const struct FlstRunSummary *s, double *out, size_t len);

/**
 * # Safety
 * `s` must come from this library and not be used afterwards. Null is ignored.
 */
void flst_summary_free(struct FlstRunSummary *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FLST_H */
