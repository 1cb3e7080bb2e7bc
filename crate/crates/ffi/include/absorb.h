#ifndef ABSORB_H
#define ABSORB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum AbsorbStatus {
  ABSORB_STATUS_OK = 0,
  ABSORB_STATUS_NULL_POINTER = 1,
  ABSORB_STATUS_INVALID_UTF8 = 2,
  ABSORB_STATUS_INVALID_ARGUMENT = 3,
  ABSORB_STATUS_CONFIG = 4,
  ABSORB_STATUS_CAP_EXCEEDED = 5,
  ABSORB_STATUS_ZERO_MASS = 6,
  ABSORB_STATUS_SUPPORT_VIOLATION = 7,
  ABSORB_STATUS_BUFFER_TOO_SMALL = 8,
  ABSORB_STATUS_NUMERICAL = 9,
  ABSORB_STATUS_PANIC = 10,
} AbsorbStatus;

/**
 * Opaque model spec.
 */
typedef struct AbsorbSpec AbsorbSpec;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Last error message on this thread, or NULL. Valid until the next call
 * into this library from the same thread.
 */
const char *absorb_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *absorb_version(void);

/**
 * Builds a spec from JSON such as `{"S":3,"d":2,"q0":"uniform"}`.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum AbsorbStatus absorb_spec_from_json(const char *json, struct AbsorbSpec **out);

/**
 * Releases a spec. NULL is ignored.
 *
 * # Safety
 * `spec` must come from [`absorb_spec_from_json`] and not be used again.
 */
void absorb_spec_free(struct AbsorbSpec *spec);

/**
 * Vocabulary size, dimension count, mask token and number of states.
 *
 * # Safety
 * All pointers must be valid.
 */
enum AbsorbStatus absorb_spec_info(const struct AbsorbSpec *spec,
                                   size_t *vocab,
                                   size_t *dims,
                                   uint32_t *mask,
                                   size_t *num_states);

/**
 * Writes the forward marginal `q_t` into `out` (length `S^d`).
 *
 * # Safety
 * `out` must point to `len` writable doubles.
 */
enum AbsorbStatus absorb_marginal(const struct AbsorbSpec *spec, double t, double *out, size_t len);

/**
 * Exact score `q_t(y)/q_t(x)` for an unmasking pair; `x` and `y` hold `d`
 * tokens each.
 *
 * # Safety
 * `x` and `y` must point to `dims` tokens, `out` to one double.
 */
enum AbsorbStatus absorb_score(const struct AbsorbSpec *spec,
                               double t,
                               const uint32_t *x,
                               const uint32_t *y,
                               size_t dims,
                               double *out);

/**
 * `KL(p ‖ q)`.
 *
 * # Safety
 * `p` and `q` must point to `len` doubles, `out` to one double.
 */
enum AbsorbStatus absorb_kl(const double *p, const double *q, size_t len, double *out);

/**
 * Total variation distance.
 *
 * # Safety
 * `p` and `q` must point to `len` doubles, `out` to one double.
 */
enum AbsorbStatus absorb_tv(const double *p, const double *q, size_t len, double *out);

/**
 * `KL(q_T ‖ p_init)` with `ε_T = e^{-T}`.
 *
 * # Safety
 * `out` must point to one double.
 */
enum AbsorbStatus absorb_forward_kl(const struct AbsorbSpec *spec, double horizon, double *out);

/**
 * The data constant γ (may be +infinity for all-mask data).
 *
 * # Safety
 * `out` must point to one double.
 */
enum AbsorbStatus absorb_gamma(const struct AbsorbSpec *spec, double *out);

/**
 * Exact output law of τ-leaping with the exact score.
 *
 * # Safety
 * `out` must point to `len` writable doubles.
 */
enum AbsorbStatus absorb_tau_leaping_law(const struct AbsorbSpec *spec,
                                         double horizon,
                                         double delta,
                                         double c,
                                         double *out,
                                         size_t len);

/**
 * One τ-leaping trajectory with the exact score; writes `d` tokens.
 *
 * # Safety
 * `out` must point to `dims` writable tokens.
 */
enum AbsorbStatus absorb_tau_leaping_sample(const struct AbsorbSpec *spec,
                                            double horizon,
                                            double delta,
                                            double c,
                                            uint64_t seed,
                                            uint32_t *out,
                                            size_t dims);

/**
 * One uniformization trajectory with the clipped exact score and the
 * analytic intensity scaled by `kappa_lambda`. Writes `d` tokens and the
 * number of clock events.
 *
 * # Safety
 * `out` must point to `dims` writable tokens and `events` to one integer.
 */
enum AbsorbStatus absorb_uniformization_sample(const struct AbsorbSpec *spec,
                                               double horizon,
                                               double delta,
                                               double c,
                                               double kappa_lambda,
                                               uint64_t seed,
                                               uint32_t *out,
                                               size_t dims,
                                               uint64_t *events);

/**
 * Exact output law of uniformization with the clipped exact score.
 *
 * # Safety
 * `out` must point to `len` writable doubles.
 */
enum AbsorbStatus absorb_uniformization_law(const struct AbsorbSpec *spec,
                                            double horizon,
                                            double delta,
                                            double c,
                                            double *out,
                                            size_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ABSORB_H */
