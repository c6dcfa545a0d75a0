/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef KINLAB_H
#define KINLAB_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum KinlabStatus {
  KINLAB_STATUS_OK = 0,
  KINLAB_STATUS_NULL_POINTER = 1,
  KINLAB_STATUS_INVALID_ARGUMENT = 2,
  KINLAB_STATUS_NUMERICAL = 3,
  KINLAB_STATUS_BUFFER_TOO_SMALL = 4,
  KINLAB_STATUS_PANIC = 5,
} KinlabStatus;

typedef enum KinlabModelKind {
  KINLAB_MODEL_KIND_VELOCITY = 0,
  KINLAB_MODEL_KIND_WEALTH = 1,
} KinlabModelKind;

/**
 * Stationary-law families; `param` is λ for the Student law and μ for the
 * inverse-gamma law, ignored otherwise.
 */
typedef enum KinlabFamily {
  KINLAB_FAMILY_MAXWELLIAN = 0,
  KINLAB_FAMILY_GRANULAR_QUARTIC = 1,
  KINLAB_FAMILY_GENERALIZED_STUDENT = 2,
  KINLAB_FAMILY_INVERSE_GAMMA_PARETO = 3,
  KINLAB_FAMILY_WEALTH_EXACT = 4,
} KinlabFamily;

/**
 * Opaque particle ensemble.
 */
typedef struct KinlabEnsemble KinlabEnsemble;

/**
 * Tail-exponent search result. Missing values are NaN.
 */
typedef struct KinlabTailReport {
  double s_prime_at_zero;
  double delta_star;
  bool has_algebraic_tail;
  double moment_growth_rate;
  double density_exponent;
} KinlabTailReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static nul-terminated string.
 */
const char *kinlab_version(void);

/**
 * Message of the last failure on this thread, or NULL. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *kinlab_last_error_message(void);

/**
 * Tail function `S(δ)` (velocity) or `R(δ)` (wealth).
 *
 * # Safety
 * `out` must be NULL or valid for one `double` write.
 */
enum KinlabStatus kinlab_tail_function(enum KinlabModelKind kind,
                                       double p,
                                       double q,
                                       double delta,
                                       double *out);

/**
 * Positive root of the tail function and the derived exponents.
 *
 * # Safety
 * `out` must be NULL or valid for one `KinlabTailReport` write.
 */
enum KinlabStatus kinlab_find_delta_star(enum KinlabModelKind kind,
                                         double p,
                                         double q,
                                         double delta_max,
                                         double tol,
                                         struct KinlabTailReport *out);

/**
 * Predicted decay rate of the Fourier distance of order `s` between two
 * scaled solutions.
 *
 * # Safety
 * `out` must be NULL or valid for one `double` write.
 */
enum KinlabStatus kinlab_contraction_rate(enum KinlabModelKind kind,
                                          double p,
                                          double q,
                                          double s,
                                          double *out);

/**
 * Density of a stationary law at `v`.
 *
 * # Safety
 * `out` must be NULL or valid for one `double` write.
 */
enum KinlabStatus kinlab_equilibrium_density(enum KinlabFamily fam,
                                             double param,
                                             double v,
                                             double *out);

/**
 * Creates an ensemble of `n` particles drawn from the initial law named by
 * `init` (`uniform`, `gaussian`, `exponential`, `stationary:<family>`), then
 * renormalized.
 *
 * # Safety
 * `init` must be NULL or a nul-terminated string; `out` must be NULL or
 * valid for one pointer write. The handle must be freed with
 * [`kinlab_ensemble_free`].
 */
enum KinlabStatus kinlab_ensemble_new(enum KinlabModelKind kind,
                                      double p,
                                      double q,
                                      const char *init,
                                      size_t n,
                                      uint64_t seed,
                                      struct KinlabEnsemble **out);

/**
 * Releases an ensemble. NULL is ignored.
 *
 * # Safety
 * `ens` must be NULL or a handle from [`kinlab_ensemble_new`] that has not
 * been freed.
 */
void kinlab_ensemble_free(struct KinlabEnsemble *ens);

/**
 * Advances the ensemble by `dt` without renormalizing.
 *
 * # Safety
 * `ens` must be NULL or a live handle; `out_events` may be NULL.
 */
enum KinlabStatus kinlab_ensemble_step(struct KinlabEnsemble *ens, double dt, size_t *out_events);

/**
 * Restores unit energy (velocity) or unit mean (wealth).
 *
 * # Safety
 * `ens` must be NULL or a live handle; `out_statistic` may be NULL.
 */
enum KinlabStatus kinlab_ensemble_renormalize(struct KinlabEnsemble *ens, double *out_statistic);

/**
 * Number of particles, or 0 for NULL.
 *
 * # Safety
 * `ens` must be NULL or a live handle.
 */
size_t kinlab_ensemble_len(const struct KinlabEnsemble *ens);

/**
 * Elapsed model time, or NaN for NULL.
 *
 * # Safety
 * `ens` must be NULL or a live handle.
 */
double kinlab_ensemble_time(const struct KinlabEnsemble *ens);

/**
 * Copies the states into `buf`, which must hold at least
 * [`kinlab_ensemble_len`] values.
 *
 * # Safety
 * `ens` must be NULL or a live handle and `buf` valid for `cap` writes.
 */
enum KinlabStatus kinlab_ensemble_copy_states(const struct KinlabEnsemble *ens,
                                              double *buf,
                                              size_t cap);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* KINLAB_H */
