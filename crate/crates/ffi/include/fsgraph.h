#ifndef FSGRAPH_H
#define FSGRAPH_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stddef.h>
#include <stdint.h>

typedef enum FsgStatus {
  FSG_STATUS_OK = 0,
  FSG_STATUS_NULL_POINTER = 1,
  FSG_STATUS_INVALID_ARGUMENT = 2,
  FSG_STATUS_IO = 3,
  FSG_STATUS_FORMAT = 4,
  FSG_STATUS_SHAPE = 5,
  FSG_STATUS_INSUFFICIENT_ROWS = 6,
  FSG_STATUS_NUMERICAL_FAILURE = 7,
  FSG_STATUS_PANIC = 8,
} FsgStatus;

typedef enum FsgFeatureFormat {
  FSG_FEATURE_FORMAT_BINARY = 0,
  FSG_FEATURE_FORMAT_CSV = 1,
} FsgFeatureFormat;

typedef enum FsgSampling {
  FSG_SAMPLING_UNIFORM = 0,
  FSG_SAMPLING_BALANCED = 1,
} FsgSampling;

/**
 * Opaque feature-set handle.
 */
typedef struct FsgFeatureSet FsgFeatureSet;

typedef struct FsgSyntheticConfig {
  uintptr_t class_count;
  uintptr_t per_class;
  uintptr_t dim;
  double center_scale;
  double noise_sigma;
  uint64_t seed;
} FsgSyntheticConfig;

typedef struct FsgHyperParams {
  uintptr_t k;
  uint32_t kappa;
  double alpha;
  uintptr_t epochs;
  double learning_rate;
  double weight_decay;
} FsgHyperParams;

typedef struct FsgEpisodeSpec {
  uintptr_t ways;
  uintptr_t shots;
  uintptr_t queries;
  enum FsgSampling sampling;
  /**
   * 0 selects "all available".
   */
  uintptr_t pool_per_class;
} FsgEpisodeSpec;

typedef struct FsgEvalSummary {
  double mean_accuracy;
  double ci95;
  uint64_t runs;
  double mean_epochs_run;
} FsgEvalSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or NULL. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *fsg_last_error_message(void);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum FsgStatus fsg_feature_set_load(const char *path,
                                    enum FsgFeatureFormat format,
                                    struct FsgFeatureSet **out);

/**
 * Builds a feature set from row-major `n x h` features and `n` labels.
 *
 * # Safety
 * `features` must hold `n * h` floats, `labels` `n` values, and `out` must
 * be writable.
 */
enum FsgStatus fsg_feature_set_from_raw(const float *features,
                                        const uint32_t *labels,
                                        uintptr_t n,
                                        uintptr_t h,
                                        uintptr_t class_count,
                                        struct FsgFeatureSet **out);

/**
 * # Safety
 * `config` must point to a valid config and `out` must be writable.
 */
enum FsgStatus fsg_feature_set_synthetic(const struct FsgSyntheticConfig *config,
                                         struct FsgFeatureSet **out);

/**
 * # Safety
 * `set` must be a live handle and `path` a NUL-terminated string.
 */
enum FsgStatus fsg_feature_set_save(const struct FsgFeatureSet *set,
                                    const char *path,
                                    enum FsgFeatureFormat format);

/**
 * Writes row count, feature dimension and class count. Any output pointer
 * may be NULL.
 *
 * # Safety
 * `set` must be a live handle.
 */
enum FsgStatus fsg_feature_set_dims(const struct FsgFeatureSet *set,
                                    uintptr_t *rows,
                                    uintptr_t *dim,
                                    uintptr_t *class_count);

/**
 * # Safety
 * `set` must be NULL or a handle not yet freed.
 */
void fsg_feature_set_free(struct FsgFeatureSet *set);

/**
 * Recommended settings for a shot count, with default training parameters.
 */
struct FsgHyperParams fsg_hyperparams_default(uintptr_t shots);

/**
 * Runs `runs` seeded episodes. `summary` receives the aggregate; when
 * `report_json` is non-NULL it receives the full JSON report, to be
 * released with `fsg_string_free`.
 *
 * # Safety
 * `set`, `spec`, `hp` and `summary` must be valid pointers; `report_json`
 * may be NULL.
 */
enum FsgStatus fsg_evaluate(const struct FsgFeatureSet *set,
                            const struct FsgEpisodeSpec *spec,
                            const struct FsgHyperParams *hp,
                            uint64_t runs,
                            uint64_t seed,
                            uintptr_t workers,
                            struct FsgEvalSummary *summary,
                            char **report_json);

/**
 * Builds the episode graph over `m x h` row-major `features` and writes
 * `(alpha I + E)^kappa V` into `out` (same shape).
 *
 * # Safety
 * `features` and `out` must each hold `m * h` doubles.
 */
enum FsgStatus fsg_propagate(const double *features,
                             uintptr_t m,
                             uintptr_t h,
                             uintptr_t k,
                             uint32_t kappa,
                             double alpha,
                             double *out);

/**
 * # Safety
 * `s` must be NULL or a string returned by this library and not yet freed.
 */
void fsg_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FSGRAPH_H */
