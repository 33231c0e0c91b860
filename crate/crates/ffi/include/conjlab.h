#ifndef CONJLAB_H
#define CONJLAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ConjlabStatus {
  CONJLAB_STATUS_OK = 0,
  CONJLAB_STATUS_NULL_POINTER = 1,
  CONJLAB_STATUS_INVALID_ARGUMENT = 2,
  CONJLAB_STATUS_UNKNOWN_ENTRY = 3,
  CONJLAB_STATUS_CONFIG = 4,
  CONJLAB_STATUS_NOT_CONTRACTING = 5,
  CONJLAB_STATUS_NUMERICAL = 6,
  CONJLAB_STATUS_SINGULAR = 7,
  CONJLAB_STATUS_CAPABILITY = 8,
  CONJLAB_STATUS_PANIC = 9,
} ConjlabStatus;

/**
 * Opaque handle.
 */
typedef struct ConjlabSystem ConjlabSystem;

/**
 * Hypothesis check results; boolean fields are 0 or 1.
 */
typedef struct ConjlabVerifySummary {
  double p_hat;
  double q_hat;
  double c1_margin;
  int32_t c1_passed;
  int32_t c2_passed;
  int32_t c3_passed;
  int32_t c5_passed;
} ConjlabVerifySummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *conjlab_last_error(void);

/**
 * Creates a system from a catalog id (`"S1"`..`"S4"` or the full name)
 * and `n_params` name/value pairs. Names may be null when `n_params` is 0.
 *
 * # Safety
 * `id` must be a NUL-terminated string; `names` and `values` must hold
 * `n_params` entries; `out` must be writable.
 */
enum ConjlabStatus conjlab_system_new(const char *id,
                                      const char *const *names,
                                      const double *values,
                                      size_t n_params,
                                      struct ConjlabSystem **out);

/**
 * Releases a handle; null is ignored.
 *
 * # Safety
 * `sys` must come from `conjlab_system_new` and not be used afterwards.
 */
void conjlab_system_free(struct ConjlabSystem *sys);

/**
 * State dimension, or 0 for a null handle.
 *
 * # Safety
 * `sys` must be null or a live handle.
 */
size_t conjlab_system_dimension(const struct ConjlabSystem *sys);

/**
 * `H(t, ξ)` into `out[len]`; `error_bound` may be null.
 *
 * # Safety
 * `xi` and `out` must hold `len` doubles; `error_bound` null or writable.
 */
enum ConjlabStatus conjlab_h_map(const struct ConjlabSystem *sys,
                                 double t,
                                 const double *xi,
                                 size_t len,
                                 double *out,
                                 double *error_bound);

/**
 * `G(t, η)` into `out[len]`; `error_bound` may be null.
 *
 * # Safety
 * As `conjlab_h_map`.
 */
enum ConjlabStatus conjlab_g_map(const struct ConjlabSystem *sys,
                                 double t,
                                 const double *eta,
                                 size_t len,
                                 double *out,
                                 double *error_bound);

/**
 * `∂G/∂η(τ, η)` into `out[len*len]`.
 *
 * # Safety
 * `eta` must hold `len` doubles and `out` `len*len`.
 */
enum ConjlabStatus conjlab_dg(const struct ConjlabSystem *sys,
                              double tau,
                              const double *eta,
                              size_t len,
                              double *out);

/**
 * `∂H/∂ξ(τ, ξ)` into `out[len*len]`; `condition` (nullable) receives the
 * condition number of the inverted matrix.
 *
 * # Safety
 * As `conjlab_dg`; `condition` null or writable.
 */
enum ConjlabStatus conjlab_dh(const struct ConjlabSystem *sys,
                              double tau,
                              const double *xi,
                              size_t len,
                              double *out,
                              double *condition);

/**
 * `X(t, s)` of the linear part into `out[d*d]`.
 *
 * # Safety
 * `out` must hold `d*d` doubles with `d = conjlab_system_dimension(sys)`.
 */
enum ConjlabStatus conjlab_transition_matrix(const struct ConjlabSystem *sys,
                                             double t,
                                             double s,
                                             double *out);

/**
 * Runs the hypothesis checks on default grids.
 *
 * # Safety
 * `out` must be writable.
 */
enum ConjlabStatus conjlab_verify(const struct ConjlabSystem *sys,
                                  struct ConjlabVerifySummary *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CONJLAB_H */
