#ifndef ADPROG_H
#define ADPROG_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum AdprogStatus {
  ADPROG_STATUS_OK = 0,
  ADPROG_STATUS_NULL_POINTER = 1,
  ADPROG_STATUS_INVALID_ARGUMENT = 2,
  ADPROG_STATUS_DIMENSION_MISMATCH = 3,
  ADPROG_STATUS_NOT_POSITIVE_DEFINITE = 4,
  ADPROG_STATUS_NUMERICAL = 5,
  ADPROG_STATUS_MONOTONE_LIKELIHOOD = 6,
  ADPROG_STATUS_NO_EVENTS = 7,
  ADPROG_STATUS_SINGLE_CLASS = 8,
  ADPROG_STATUS_PANIC = 9,
  ADPROG_STATUS_OTHER = 10,
} AdprogStatus;

// Fitted Cox proportional-hazards model.
typedef struct AdprogCox AdprogCox;

// Trained exact GP with an isotropic RBF kernel.
typedef struct AdprogGp AdprogGp;

// Trained linear margin classifier.
typedef struct AdprogSvm AdprogSvm;

typedef struct AdprogMetrics {
  uint64_t tp;
  uint64_t fp;
  uint64_t fn_;
  uint64_t tn;
  double precision;
  double recall;
  double f1;
  double accuracy;
  // Nonzero when the matching rate has a zero denominator (reported as 0).
  uint8_t precision_undefined;
  uint8_t recall_undefined;
  uint8_t f1_undefined;
  uint8_t accuracy_undefined;
} AdprogMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *adprog_version(void);

// Copies the calling thread's last error message into `buf` (NUL-terminated,
// truncated to `len - 1` bytes) and returns the full message length.
//
// # Safety
// `buf` must be null or valid for `len` bytes.
size_t adprog_last_error_message(char *buf, size_t len);

// Fits a GP with an isotropic RBF kernel and fixed hyperparameters.
//
// # Safety
// `x` must hold `n * d` values, `y` must hold `n`, `out_gp` must be writable.
enum AdprogStatus adprog_gp_fit(const double *x,
                                size_t n,
                                size_t d,
                                const double *y,
                                double signal_variance,
                                double lengthscale,
                                double noise_variance,
                                double prior_mean,
                                struct AdprogGp **out_gp);

// Fits a GP after maximizing the evidence from data-derived starting values
// for at most `budget` ascent steps.
//
// # Safety
// As for [`adprog_gp_fit`].
enum AdprogStatus adprog_gp_fit_optimized(const double *x,
                                          size_t n,
                                          size_t d,
                                          const double *y,
                                          size_t budget,
                                          struct AdprogGp **out_gp);

// Predictive mean and variance at one input of length `d`.
//
// # Safety
// `gp` must come from a GP fit call; `x` must hold `d` values.
enum AdprogStatus adprog_gp_predict(const struct AdprogGp *gp,
                                    const double *x,
                                    size_t d,
                                    double *mean,
                                    double *variance);

// Log marginal likelihood of the training data.
//
// # Safety
// `gp` must come from a GP fit call.
enum AdprogStatus adprog_gp_log_marginal_likelihood(const struct AdprogGp *gp, double *value);

// Hyperparameters in natural scale. `lengthscale` receives the first
// lengthscale of the kernel.
//
// # Safety
// `gp` must come from a GP fit call; outputs must be writable.
enum AdprogStatus adprog_gp_hyperparameters(const struct AdprogGp *gp,
                                            double *signal_variance,
                                            double *lengthscale,
                                            double *noise_variance,
                                            double *prior_mean);

// # Safety
// `gp` must be null or a handle not yet freed.
void adprog_gp_free(struct AdprogGp *gp);

// Fits a Cox model. `ties` is 0 for Breslow, 1 for Efron and 2 for exact; `event` entries
// are nonzero for observed conversions.
//
// # Safety
// `z` must hold `n * p` values, `time` and `event` must hold `n`.
enum AdprogStatus adprog_cox_fit(const double *z,
                                 size_t n,
                                 size_t p,
                                 const double *time,
                                 const uint8_t *event,
                                 int ties,
                                 struct AdprogCox **out_cox);

// Number of coefficients of a fitted Cox model.
//
// # Safety
// `cox` must be null or a live handle.
size_t adprog_cox_dim(const struct AdprogCox *cox);

// Copies the `p` coefficients into `beta`.
//
// # Safety
// `beta` must be writable for `p` values.
enum AdprogStatus adprog_cox_coefficients(const struct AdprogCox *cox, double *beta, size_t p);

// Conversion probabilities for the four windows ending at 6, 12, 18 and 24
// months. With `normalize` nonzero they are rescaled to sum to one.
//
// # Safety
// `z` must hold `p` values and `probabilities` must be writable for 4.
enum AdprogStatus adprog_cox_conversion_probabilities(const struct AdprogCox *cox,
                                                      const double *z,
                                                      size_t p,
                                                      int normalize,
                                                      double *probabilities);

// # Safety
// `cox` must be null or a handle not yet freed.
void adprog_cox_free(struct AdprogCox *cox);

// Trains the linear classifier on labels in {-1, +1}.
//
// # Safety
// `x` must hold `n * d` values and `y` must hold `n`.
enum AdprogStatus adprog_svm_train(const double *x,
                                   size_t n,
                                   size_t d,
                                   const int8_t *y,
                                   double c,
                                   size_t epochs,
                                   uint64_t seed,
                                   struct AdprogSvm **out_svm);

// Predicted label in {-1, +1} and the decision score for one input.
//
// # Safety
// `x` must hold `d` values; outputs must be writable.
enum AdprogStatus adprog_svm_predict(const struct AdprogSvm *svm,
                                     const double *x,
                                     size_t d,
                                     int8_t *label,
                                     double *score);

// # Safety
// `svm` must be null or a handle not yet freed.
void adprog_svm_free(struct AdprogSvm *svm);

// Confusion counts and rates for boolean predictions against truth.
//
// # Safety
// `predicted` and `truth` must hold `n` values; `metrics` must be writable.
enum AdprogStatus adprog_classification_metrics(const uint8_t *predicted,
                                                const uint8_t *truth,
                                                size_t n,
                                                struct AdprogMetrics *metrics);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ADPROG_H */
