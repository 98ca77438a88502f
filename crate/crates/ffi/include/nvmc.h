#ifndef NVMC_H
#define NVMC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum NvmcStatus {
  NVMC_STATUS_OK = 0,
  NVMC_STATUS_NULL_POINTER = 1,
  NVMC_STATUS_INVALID_UTF8 = 2,
  NVMC_STATUS_INVALID_ARGUMENT = 3,
  NVMC_STATUS_CONFIG = 4,
  NVMC_STATUS_IO = 5,
  NVMC_STATUS_CHECKPOINT = 6,
  NVMC_STATUS_TRAINING = 7,
  NVMC_STATUS_DOMAIN = 8,
  NVMC_STATUS_PANIC = 9,
} NvmcStatus;

typedef enum NvmcVerdict {
  NVMC_VERDICT_CONVERGES = 0,
  NVMC_VERDICT_DIVERGES = 1,
  NVMC_VERDICT_LOG_DIVERGENT = 2,
} NvmcVerdict;

/**
 * Opaque trained wavefunction.
 */
typedef struct NvmcModel NvmcModel;

/**
 * Opaque finished run: trajectory, summary, resolved config and model.
 */
typedef struct NvmcRun NvmcRun;

/**
 * Scalar results of a finished run. `relative_error` is NaN without a
 * reference value.
 */
typedef struct NvmcRunSummary {
  double energy;
  double observable;
  double variance;
  double relative_error;
  size_t steps;
  bool converged;
} NvmcRunSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL after a
 * success. Valid until the next call into the library on this thread.
 */
const char *nvmc_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *nvmc_version(void);

/**
 * Reads a checkpoint file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum NvmcStatus nvmc_model_load(const char *path, struct NvmcModel **out);

/**
 * Parses checkpoint text.
 *
 * # Safety
 * `text` must be a NUL-terminated string and `out` a writable pointer.
 */
enum NvmcStatus nvmc_model_from_checkpoint(const char *text, struct NvmcModel **out);

/**
 * Configuration-space dimension, 0 for a NULL handle.
 *
 * # Safety
 * `model` must be NULL or a live handle.
 */
size_t nvmc_model_input_dim(const struct NvmcModel *model);

/**
 * Number of trainable parameters, 0 for a NULL handle.
 *
 * # Safety
 * `model` must be NULL or a live handle.
 */
size_t nvmc_model_n_params(const struct NvmcModel *model);

/**
 * Evaluates ψ, ∇ψ and ∇²ψ on `n_rows` row-major configurations of length
 * `dim`. `grad_out` (`n_rows*dim`) and `laplacian_out` (`n_rows`) may be
 * NULL when not wanted.
 *
 * # Safety
 * Buffers must hold the stated number of doubles.
 */
enum NvmcStatus nvmc_model_eval(const struct NvmcModel *model,
                                const double *inputs,
                                size_t n_rows,
                                size_t dim,
                                double *value_out,
                                double *grad_out,
                                double *laplacian_out);

/**
 * Local energies `Hψ/ψ` for the system described by `system_json` (the
 * `system` object of a run config). Rows near a node or outside the
 * domain come back as NaN.
 *
 * # Safety
 * `system_json` must be NUL-terminated; buffers must hold the stated
 * number of doubles.
 */
enum NvmcStatus nvmc_model_local_energies(const struct NvmcModel *model,
                                          const char *system_json,
                                          const double *inputs,
                                          size_t n_rows,
                                          size_t dim,
                                          double *energies_out);

/**
 * Releases a model handle; NULL is ignored.
 *
 * # Safety
 * `model` must be NULL or a handle not yet freed.
 */
void nvmc_model_free(struct NvmcModel *model);

/**
 * Trains from a JSON run config. Artifacts are written when the config
 * names an output directory. A run that ends unconverged still succeeds;
 * inspect its summary.
 *
 * # Safety
 * `config_json` must be NUL-terminated and `out` writable.
 */
enum NvmcStatus nvmc_run_train(const char *config_json, struct NvmcRun **out);

/**
 * Loads a completed run directory.
 *
 * # Safety
 * `dir` must be NUL-terminated and `out` writable.
 */
enum NvmcStatus nvmc_run_read(const char *dir, struct NvmcRun **out);

/**
 * Writes config echo, metrics, checkpoint and summary into `dir`.
 *
 * # Safety
 * `run` must be a live handle and `dir` NUL-terminated.
 */
enum NvmcStatus nvmc_run_write(struct NvmcRun *run, const char *dir);

/**
 * # Safety
 * `run` must be a live handle and `out` writable.
 */
enum NvmcStatus nvmc_run_summary(const struct NvmcRun *run, struct NvmcRunSummary *out);

/**
 * Number of recorded metric rows, 0 for a NULL handle.
 *
 * # Safety
 * `run` must be NULL or a live handle.
 */
size_t nvmc_run_metrics_len(const struct NvmcRun *run);

/**
 * Copies the per-step energy and variance series; either buffer may be
 * NULL. Each holds `nvmc_run_metrics_len` doubles.
 *
 * # Safety
 * Non-NULL buffers must hold the stated number of doubles.
 */
enum NvmcStatus nvmc_run_metrics(const struct NvmcRun *run,
                                 double *energy_out,
                                 double *variance_out);

/**
 * Copies the trained model into a new handle.
 *
 * # Safety
 * `run` must be a live handle and `out` writable.
 */
enum NvmcStatus nvmc_run_model(const struct NvmcRun *run, struct NvmcModel **out);

/**
 * Releases a run handle; NULL is ignored.
 *
 * # Safety
 * `run` must be NULL or a handle not yet freed.
 */
void nvmc_run_free(struct NvmcRun *run);

/**
 * Whether the `p`-th moment of the local energy is finite near a node of
 * codimension `k` where `ψ ~ δ^β` and `E_L ~ δ^{-γ}`.
 *
 * # Safety
 * `verdict_out` and `margin_out` must be writable; `margin_out` may be
 * NULL.
 */
enum NvmcStatus nvmc_nodal_check(double beta,
                                 double gamma,
                                 uint32_t k,
                                 uint32_t p,
                                 bool uniform,
                                 enum NvmcVerdict *verdict_out,
                                 double *margin_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NVMC_H */
