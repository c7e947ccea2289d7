#ifndef WDM_H
#define WDM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum WdmStatus {
  WDM_STATUS_OK = 0,
  WDM_STATUS_NULL_POINTER = 1,
  WDM_STATUS_INVALID_UTF8 = 2,
  WDM_STATUS_BUFFER_TOO_SMALL = 3,
  WDM_STATUS_DIMENSION = 10,
  WDM_STATUS_PARAMETER = 11,
  WDM_STATUS_NUMERIC = 12,
  WDM_STATUS_CONTRACT = 13,
  WDM_STATUS_STATISTICAL = 14,
  WDM_STATUS_CONFIG = 15,
  WDM_STATUS_PARSE = 16,
  WDM_STATUS_CORRUPT = 17,
  WDM_STATUS_VERSION_MISMATCH = 18,
  WDM_STATUS_IO = 19,
  WDM_STATUS_PANIC = 99,
} WdmStatus;

/**
 * Experiment configuration.
 */
typedef struct WdmConfig WdmConfig;

/**
 * Configuration plus the schedule, task data and watermark it describes.
 */
typedef struct WdmExperiment WdmExperiment;

/**
 * A trained noise-prediction network.
 */
typedef struct WdmModel WdmModel;

/**
 * Outcome of an ownership test.
 */
typedef struct WdmVerification {
  double mu_s;
  double mu_c;
  double t_stat;
  double dof;
  double p_value;
  double alpha;
  /**
   * 1 when the watermark is detected, 0 otherwise.
   */
  int32_t verdict;
} WdmVerification;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` (NUL-terminated)
 * and returns the number of bytes the full message needs, including the
 * terminator. Returns 0 when there is no error. Passing a null `buf` or
 * `len` 0 only queries the size.
 */
size_t wdm_last_error(char *buf, size_t len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *wdm_version(void);

enum WdmStatus wdm_config_default(struct WdmConfig **out);

enum WdmStatus wdm_config_from_toml(const char *text, struct WdmConfig **out);

enum WdmStatus wdm_config_load(const char *path, struct WdmConfig **out);

/**
 * Applies one `key=value` override, e.g. `"train.epochs=50"`. The config is
 * left unchanged on failure.
 */
enum WdmStatus wdm_config_set(struct WdmConfig *cfg, const char *assignment);

/**
 * Writes the 64-character hex config hash plus NUL into `buf` (at least 65 bytes).
 */
enum WdmStatus wdm_config_hash(const struct WdmConfig *cfg, char *buf, size_t len);

void wdm_config_free(struct WdmConfig *cfg);

enum WdmStatus wdm_experiment_new(const struct WdmConfig *cfg, struct WdmExperiment **out);

void wdm_experiment_free(struct WdmExperiment *exp);

enum WdmStatus wdm_train_baseline(const struct WdmExperiment *exp, struct WdmModel **out);

enum WdmStatus wdm_train_control(const struct WdmExperiment *exp, struct WdmModel **out);

/**
 * Embeds the watermark. `baseline` may be null in scratch mode and is
 * required in fine-tune mode.
 */
enum WdmStatus wdm_embed(const struct WdmExperiment *exp,
                         const struct WdmModel *baseline,
                         struct WdmModel **out);

enum WdmStatus wdm_model_load(const char *path, struct WdmModel **out);

/**
 * Saves `model` together with the experiment's noise schedule.
 */
enum WdmStatus wdm_model_save(const struct WdmModel *model,
                              const struct WdmExperiment *exp,
                              const char *path);

size_t wdm_model_param_count(const struct WdmModel *model);

void wdm_model_free(struct WdmModel *model);

/**
 * Runs watermark extraction and writes the samples row-major into `buf`.
 * `rows` and `cols` receive the shape; if `len` is smaller than
 * `rows * cols` nothing is copied and `BufferTooSmall` is returned, so a
 * first call with `len = 0` queries the shape.
 */
enum WdmStatus wdm_extract(const struct WdmExperiment *exp,
                           const struct WdmModel *model,
                           double *buf,
                           size_t len,
                           size_t *rows,
                           size_t *cols);

/**
 * Tests whether `suspect` carries the watermark, using `control` as the
 * independent reference model.
 */
enum WdmStatus wdm_verify(const struct WdmExperiment *exp,
                          const struct WdmModel *suspect,
                          const struct WdmModel *control,
                          struct WdmVerification *out);

/**
 * Verification on precomputed watermark similarity scores.
 */
enum WdmStatus wdm_verify_scores(const double *d_s,
                                 size_t n_s,
                                 const double *d_c,
                                 size_t n_c,
                                 double alpha,
                                 struct WdmVerification *out);

/**
 * One-sided Welch test that `d_c` has the larger mean.
 */
enum WdmStatus wdm_welch_test(const double *d_s,
                              size_t n_s,
                              const double *d_c,
                              size_t n_c,
                              double *t_stat,
                              double *dof,
                              double *p_value);

/**
 * Runs the kernel identity suite with the experiment's options; `passed`
 * receives 1 when every check behaves as expected.
 */
enum WdmStatus wdm_prove(const struct WdmExperiment *exp, int32_t *passed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* WDM_H */
