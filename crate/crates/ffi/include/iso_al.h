#ifndef ISO_AL_H
#define ISO_AL_H

/* Generated by cbindgen from crates/ffi/src. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum IsoStatus {
  ISO_STATUS_OK = 0,
  ISO_STATUS_NULL_POINTER = 1,
  ISO_STATUS_INVALID_ARGUMENT = 2,
  ISO_STATUS_SHAPE = 3,
  ISO_STATUS_BUDGET = 4,
  ISO_STATUS_TRAINING = 5,
  ISO_STATUS_IO = 6,
  ISO_STATUS_BUFFER_TOO_SMALL = 7,
  ISO_STATUS_PANIC = 8,
} IsoStatus;

typedef enum IsoLevel {
  ISO_LEVEL_FULL = 0,
  ISO_LEVEL_WEAK = 1,
} IsoLevel;

/**
 * Opaque trained model.
 */
typedef struct IsoModel IsoModel;

/**
 * Training hyperparameters; see [`iso_train_config_default`].
 */
typedef struct IsoTrainConfig {
  double learning_rate;
  size_t epochs_per_stage;
  size_t batch_size;
  size_t hidden_dim;
} IsoTrainConfig;

/**
 * One selection candidate; its embedding is a row of the `embeddings`
 * matrix passed alongside.
 */
typedef struct IsoCandidate {
  uint64_t instance_id;
  enum IsoLevel level;
  double vcr;
  double cost;
} IsoCandidate;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *iso_last_error_message(void);

struct IsoTrainConfig iso_train_config_default(void);

/**
 * Trains a fresh two-head model: weak stage on (`weak_features`,
 * `weak_labels`), then full stage on (`full_features`, `full_labels`).
 * Feature matrices are row-major with `dim` columns; `n_weak` may be 0.
 *
 * # Safety
 * Array pointers must cover the stated lengths; `out` must be writable.
 */
enum IsoStatus iso_model_train(const struct IsoTrainConfig *config,
                               size_t dim,
                               size_t num_classes,
                               size_t num_superclasses,
                               const double *full_features,
                               const uint32_t *full_labels,
                               size_t n_full,
                               const double *weak_features,
                               const uint32_t *weak_labels,
                               size_t n_weak,
                               uint64_t seed,
                               struct IsoModel **out);

/**
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void iso_model_free(struct IsoModel *model);

/**
 * Input dimension, hidden width, class and superclass counts.
 *
 * # Safety
 * `model` must be a live handle; each out pointer may be null.
 */
enum IsoStatus iso_model_shape(const struct IsoModel *model,
                               size_t *input_dim,
                               size_t *hidden_dim,
                               size_t *num_classes,
                               size_t *num_superclasses);

/**
 * Class probabilities of one input on the chosen head.
 *
 * # Safety
 * `x` holds `dim` values; `probs` has room for `capacity` values.
 */
enum IsoStatus iso_model_predict(const struct IsoModel *model,
                                 const double *x,
                                 size_t dim,
                                 enum IsoLevel level,
                                 double *probs,
                                 size_t capacity);

/**
 * Unit-norm hidden representation of one input.
 *
 * # Safety
 * `x` holds `dim` values; `embedding` has room for `capacity` values.
 */
enum IsoStatus iso_model_embed(const struct IsoModel *model,
                               const double *x,
                               size_t dim,
                               double *embedding,
                               size_t capacity);

/**
 * # Safety
 * `model` must be a live handle; `path` a NUL-terminated UTF-8 string.
 */
enum IsoStatus iso_model_save(const struct IsoModel *model, const char *path);

/**
 * # Safety
 * `path` must be a NUL-terminated UTF-8 string; `out` must be writable.
 */
enum IsoStatus iso_model_load(const char *path, struct IsoModel **out);

/**
 * Mean-rank percentile of each score, in [0, 1].
 *
 * # Safety
 * `raw` and `out` each cover `n` values.
 */
enum IsoStatus iso_percentile_normalize(const double *raw, size_t n, double *out);

/**
 * Value-to-cost ratio of each normalized score.
 *
 * # Safety
 * `scores` and `out` each cover `n` values.
 */
enum IsoStatus iso_compute_vcr(double improvement,
                               const double *scores,
                               size_t n,
                               double cost,
                               double *out);

/**
 * Per-instance improvement from a validation-accuracy curve over `k`
 * nested subsets of a pool of `pool_size` instances.
 *
 * # Safety
 * `curve` covers `k` values; `out` must be writable.
 */
enum IsoStatus iso_improvement_from_curve(const double *curve,
                                          size_t k,
                                          size_t pool_size,
                                          double *out);

/**
 * Picks candidates under `budget`: budgeted D² sampling seeded by `seed`
 * when `diverse` is true, greedy by VCR otherwise. Writes up to `capacity`
 * picks in selection order and their count to `out_count`.
 *
 * # Safety
 * `candidates` covers `n` entries, `embeddings` `n * dim` values, and the
 * pick buffers `capacity` entries each.
 */
enum IsoStatus iso_select(const struct IsoCandidate *candidates,
                          const double *embeddings,
                          size_t n,
                          size_t dim,
                          double budget,
                          bool diverse,
                          uint64_t seed,
                          uint64_t *out_ids,
                          enum IsoLevel *out_levels,
                          size_t capacity,
                          size_t *out_count,
                          double *out_spent);

/**
 * Runs a full experiment from a JSON config and returns the contents of
 * `results.csv` through `out_csv` (free with [`iso_string_free`]). Result
 * files are also written when the config names an `output_dir`.
 *
 * # Safety
 * `config_json` must be a NUL-terminated UTF-8 string; `out_csv` writable.
 */
enum IsoStatus iso_run_experiment_json(const char *config_json, char **out_csv);

/**
 * # Safety
 * `s` must come from this library and not be used afterwards.
 */
void iso_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ISO_AL_H */
