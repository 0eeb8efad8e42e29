#ifndef PLE_LINEWIDTH_H
#define PLE_LINEWIDTH_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PleStatus {
  PLE_STATUS_OK = 0,
  PLE_STATUS_NULL_POINTER = 1,
  PLE_STATUS_INVALID_ARGUMENT = 2,
  PLE_STATUS_IO = 3,
  PLE_STATUS_PARSE = 4,
  /**
   * Too few or unusable samples.
   */
  PLE_STATUS_DATA = 5,
  /**
   * A stage of the analysis could not proceed (degenerate model, binning).
   */
  PLE_STATUS_PIPELINE = 6,
  PLE_STATUS_BUFFER_TOO_SMALL = 7,
  PLE_STATUS_PANIC = 8,
} PleStatus;

typedef enum PleFitMode {
  PLE_FIT_MODE_FREE = 0,
  PLE_FIT_MODE_TIED = 1,
} PleFitMode;

typedef enum PleFitStatus {
  PLE_FIT_STATUS_CONVERGED = 0,
  PLE_FIT_STATUS_REJECTED = 1,
  PLE_FIT_STATUS_MAX_ITERATIONS = 2,
  PLE_FIT_STATUS_DEGENERATE = 3,
  PLE_FIT_STATUS_NON_FINITE = 4,
} PleFitStatus;

typedef enum PleEstimator {
  PLE_ESTIMATOR_MEDIAN = 0,
  PLE_ESTIMATOR_IVW = 1,
  PLE_ESTIMATOR_LOGNORMAL = 2,
} PleEstimator;

/**
 * Per-scan fits with the settings that produced them.
 */
typedef struct PleFits PleFits;

typedef struct PleMcm PleMcm;

/**
 * Binned scans sharing one window.
 */
typedef struct PleScanBatch PleScanBatch;

typedef struct PleFitOptions {
  enum PleFitMode mode;
  uint32_t min_counts_per_bin;
  bool fit_offset;
} PleFitOptions;

typedef struct PleFitRecord {
  double fwhm_mhz;
  /**
   * NaN when unavailable.
   */
  double stderr_mhz;
  enum PleFitStatus status;
  bool usable;
} PleFitRecord;

typedef struct PleBatchSummary {
  size_t total;
  size_t rejected;
  size_t not_converged;
  size_t fitted;
} PleBatchSummary;

typedef struct PleEstimate {
  double value_mhz;
  double ci_lo;
  double ci_hi;
  size_t k_used;
  size_t k_rejected;
} PleEstimate;

typedef struct PleMcmOptions {
  double gamma_lo;
  double gamma_hi;
  double gamma_step;
  double nbar_lo;
  double nbar_hi;
  double nbar_step;
  double photon_sigma;
  double noise_mean;
  /**
   * Simulated scans per cell; 0 picks ten times the observed count.
   */
  size_t replicas;
  double delta;
  uint64_t seed;
} PleMcmOptions;

typedef struct PleMcmSummary {
  double best_gamma;
  double best_nbar;
  double s_min;
  double gamma_ci_lo;
  double gamma_ci_hi;
  double nbar_ci_lo;
  double nbar_ci_hi;
  size_t n_gamma;
  size_t n_nbar;
  size_t masked;
  bool boundary_hit;
} PleMcmSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *ple_version(void);

/**
 * Copies the calling thread's last error message into `buf` (NUL
 * terminated, truncated to `len`) and returns the full length including the
 * terminator. Pass a null `buf` to query the length.
 */
size_t ple_last_error(char *buf, size_t len);

/**
 * Faddeeva function w(z).
 */
enum PleStatus ple_faddeeva(double re, double im, double *out_re, double *out_im);

/**
 * Voigt FWHM for Gaussian σ and Lorentzian half width γ.
 */
enum PleStatus ple_voigt_fwhm(double sigma, double gamma, double *out);

/**
 * Simulates `count` scans on the default window.
 */
enum PleStatus ple_scans_synth(double fwhm_mhz,
                               double mean_photons,
                               double photon_sigma,
                               double noise_mean,
                               size_t count,
                               uint64_t seed,
                               struct PleScanBatch **out);

/**
 * Builds a batch from `n_scans` rows of counts laid out back to back, each
 * `(hi - lo) / bin_width` long.
 */
enum PleStatus ple_scans_from_counts(double lo_mhz,
                                     double hi_mhz,
                                     double bin_width_mhz,
                                     const uint32_t *counts,
                                     size_t n_scans,
                                     struct PleScanBatch **out);

/**
 * Reads a ScanFile CSV; `nominal_resonance_mhz` is subtracted from the
 * window edges.
 */
enum PleStatus ple_scans_read(const char *path,
                              double nominal_resonance_mhz,
                              struct PleScanBatch **out);

enum PleStatus ple_scans_len(const struct PleScanBatch *batch, size_t *out);

/**
 * Copies the counts of scan `index` into `buf`. `bins` receives the row
 * length; a short `buf` yields `PLE_STATUS_BUFFER_TOO_SMALL` with `bins` set.
 */
enum PleStatus ple_scans_counts(const struct PleScanBatch *batch,
                                size_t index,
                                uint32_t *buf,
                                size_t len,
                                size_t *bins);

void ple_scans_free(struct PleScanBatch *batch);

struct PleFitOptions ple_fit_options_default(void);

/**
 * Fits every scan. `options` may be null for the defaults.
 */
enum PleStatus ple_fit(const struct PleScanBatch *batch,
                       const struct PleFitOptions *options,
                       struct PleFits **out);

enum PleStatus ple_fits_len(const struct PleFits *fits, size_t *out);

enum PleStatus ple_fits_get(const struct PleFits *fits, size_t index, struct PleFitRecord *out);

enum PleStatus ple_fits_summary(const struct PleFits *fits, struct PleBatchSummary *out);

void ple_fits_free(struct PleFits *fits);

/**
 * Linewidth estimate over the usable fits. `resamples` and `level` drive
 * the bootstrap interval (median and lognormal); `level` also sets the IVW
 * normal interval.
 */
enum PleStatus ple_estimate(const struct PleFits *fits,
                            enum PleEstimator estimator,
                            size_t resamples,
                            double level,
                            uint64_t seed,
                            struct PleEstimate *out);

struct PleMcmOptions ple_mcm_options_default(void);

/**
 * Grid search over (γ, n̄) matching the simulated linewidth histogram to
 * the fits. Simulations use the fit settings the fits were made with.
 * `options` may be null for the defaults.
 */
enum PleStatus ple_mcm(const struct PleFits *fits,
                       const struct PleMcmOptions *options,
                       struct PleMcm **out);

enum PleStatus ple_mcm_summary(const struct PleMcm *mcm, struct PleMcmSummary *out);

/**
 * Copies the χ² surface, γ rows by n̄ columns, into `buf`. Masked cells
 * are NaN.
 */
enum PleStatus ple_mcm_surface(const struct PleMcm *mcm, double *buf, size_t len);

void ple_mcm_free(struct PleMcm *mcm);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PLE_LINEWIDTH_H */
