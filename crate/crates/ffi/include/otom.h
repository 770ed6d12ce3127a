#ifndef OTOM_H
#define OTOM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum OtomStatus {
  OTOM_STATUS_OK = 0,
  OTOM_STATUS_NULL_POINTER = 1,
  OTOM_STATUS_DOMAIN = 2,
  OTOM_STATUS_PARSE = 3,
  OTOM_STATUS_FORMAT = 4,
  OTOM_STATUS_NUMERIC = 5,
  OTOM_STATUS_IO = 6,
  OTOM_STATUS_CONFIG = 7,
  OTOM_STATUS_PANIC = 8,
} OtomStatus;

/**
 * Opaque trained model.
 */
typedef struct OtomModel OtomModel;

/**
 * Tissue parameters in SI units: kmw (1/s), m0m (fraction of water M0),
 * t2m (s), t1w (s).
 */
typedef struct OtomTissue {
  double kmw;
  double m0m;
  double t2m;
  double t1w;
} OtomTissue;

/**
 * One dynamic scan: b1 (μT), omega (ppm), ts (s), td (s).
 */
typedef struct OtomScanPoint {
  double b1;
  double omega;
  double ts;
  double td;
} OtomScanPoint;

typedef struct OtomFitResult {
  struct OtomTissue params;
  double residual_rms;
  double cost;
  uint32_t iterations;
  /**
   * 1 when the best start converged, else 0.
   */
  int32_t converged;
  uint32_t start_index;
} OtomFitResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *otom_version(void);

/**
 * Message for the last failed call on this thread; empty if none. The
 * pointer stays valid until the next failing call on the same thread.
 */
const char *otom_last_error(void);

/**
 * Simulate `n` signals into `out` with the default pool constants.
 *
 * # Safety
 * `tissue` must be valid; `scans` and `out` must hold `n` elements.
 */
enum OtomStatus otom_simulate_fingerprint(const struct OtomTissue *tissue,
                                          const struct OtomScanPoint *scans,
                                          size_t n,
                                          double *out);

/**
 * Load an OTOMNN1 weight file (bi-LSTM or FCNN).
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum OtomStatus otom_model_load(const char *path, struct OtomModel **out);

/**
 * Release a model. Null is ignored.
 *
 * # Safety
 * `model` must come from [`otom_model_load`] and not be freed twice.
 */
void otom_model_free(struct OtomModel *model);

/**
 * Estimate tissue parameters from one fingerprint. FCNN models accept
 * only the schedule they were trained on.
 *
 * # Safety
 * `model` must be a live handle; `scans` and `signal` must hold `n`
 * elements; `out` must be writable.
 */
enum OtomStatus otom_model_predict(const struct OtomModel *model,
                                   const struct OtomScanPoint *scans,
                                   size_t n,
                                   const double *signal,
                                   struct OtomTissue *out);

/**
 * Multi-start least-squares fit with default bounds and tolerances.
 *
 * # Safety
 * `scans` and `signal` must hold `n` elements; `out` must be writable.
 */
enum OtomStatus otom_fit(const struct OtomScanPoint *scans,
                         size_t n,
                         const double *signal,
                         uint32_t n_starts,
                         uint64_t seed,
                         struct OtomFitResult *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OTOM_H */
