#ifndef DNLS_FFI_H
#define DNLS_FFI_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DnlsStatus {
  DNLS_STATUS_OK = 0,
  DNLS_STATUS_NULL_POINTER = 1,
  DNLS_STATUS_INVALID_ARGUMENT = 2,
  DNLS_STATUS_NON_FINITE = 3,
  DNLS_STATUS_BLOW_UP = 4,
  DNLS_STATUS_UNUSABLE_ESTIMATE = 5,
  DNLS_STATUS_FORMAT = 6,
  DNLS_STATUS_IO = 7,
  /**
   * A panic was caught at the boundary.
   */
  DNLS_STATUS_INTERNAL = 8,
} DnlsStatus;

/**
 * Vector field selector for `dnls_evolve`.
 */
typedef enum DnlsRhs {
  DNLS_RHS_FGDNLS = 0,
  DNLS_RHS_GDNLS_PLUS = 1,
  DNLS_RHS_DNLS = 2,
} DnlsRhs;

/**
 * Opaque weighted ensemble.
 */
typedef struct DnlsEnsemble DnlsEnsemble;

/**
 * Opaque Fourier-truncated state.
 */
typedef struct DnlsState DnlsState;

/**
 * Scalar functionals of one state.
 */
typedef struct DnlsEnergyReport {
  double mass;
  double psi;
  double hamiltonian_h;
  double energy_e;
  double gauged_h;
  double gauged_e;
  double full_energy;
  double nonlinear_n;
  double f_part;
  double g_part;
  double k_part;
  double momentum_re;
  double momentum_im;
} DnlsEnergyReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty if none. The
 * pointer stays valid until the next failing call on the same thread.
 */
const char *dnls_last_error_message(void);

/**
 * Static name of a status code.
 */
const char *dnls_status_name(enum DnlsStatus status);

/**
 * A state from `2·bandwidth + 1` coefficients ordered `n = −N..=N`.
 *
 * # Safety
 * `re` and `im` must point to `2·bandwidth + 1` readable doubles and `out`
 * to writable storage for one handle.
 */
enum DnlsStatus dnls_state_new(size_t bandwidth,
                               const double *re,
                               const double *im,
                               struct DnlsState **out);

/**
 * # Safety
 * `out` must be writable.
 */
enum DnlsStatus dnls_state_zeros(size_t bandwidth, struct DnlsState **out);

/**
 * # Safety
 * `state` must be a live handle; `out` must be writable.
 */
enum DnlsStatus dnls_state_clone(const struct DnlsState *state, struct DnlsState **out);

/**
 * Releases a state; null is ignored.
 *
 * # Safety
 * `state` must be null or a handle not yet freed.
 */
void dnls_state_free(struct DnlsState *state);

/**
 * # Safety
 * `state` must be a live handle; `out` must be writable.
 */
enum DnlsStatus dnls_state_bandwidth(const struct DnlsState *state, size_t *out);

/**
 * Copies the coefficients into `re`/`im`, each of length `len = 2N+1`.
 *
 * # Safety
 * `state` must be a live handle; `re` and `im` must hold `len` doubles.
 */
enum DnlsStatus dnls_state_coefficients(const struct DnlsState *state,
                                        double *re,
                                        double *im,
                                        size_t len);

/**
 * `‖v‖_{FL^{s,r}}`; `r` may be `INFINITY`.
 *
 * # Safety
 * `state` must be a live handle; `out` must be writable.
 */
enum DnlsStatus dnls_fl_norm(const struct DnlsState *state, double s, double r, double *out);

/**
 * # Safety
 * `state` must be a live handle; `out` must be writable.
 */
enum DnlsStatus dnls_l2_norm(const struct DnlsState *state, double *out);

/**
 * # Safety
 * `state` must be a live handle; `out` must be writable.
 */
enum DnlsStatus dnls_energy_report(const struct DnlsState *state, struct DnlsEnergyReport *out);

/**
 * Integrates to `t_final` (negative runs backward) with step at most `dt`.
 *
 * # Safety
 * `state` must be a live handle; `out` must be writable.
 */
enum DnlsStatus dnls_evolve(const struct DnlsState *state,
                            enum DnlsRhs rhs,
                            double dt,
                            double t_final,
                            struct DnlsState **out);

/**
 * `G(u)` truncated to `out_bandwidth`.
 *
 * # Safety
 * `state` must be a live handle; `out` must be writable.
 */
enum DnlsStatus dnls_gauge_forward(const struct DnlsState *state,
                                   size_t out_bandwidth,
                                   struct DnlsState **out);

/**
 * `G⁻¹(w)` truncated to `out_bandwidth`.
 *
 * # Safety
 * `state` must be a live handle; `out` must be writable.
 */
enum DnlsStatus dnls_gauge_inverse(const struct DnlsState *state,
                                   size_t out_bandwidth,
                                   struct DnlsState **out);

/**
 * `Γ(t)w`, translation by `2t·m(w)`.
 *
 * # Safety
 * `state` must be a live handle; `out` must be writable.
 */
enum DnlsStatus dnls_gamma_translate(const struct DnlsState *state,
                                     double t,
                                     struct DnlsState **out);

/**
 * Sample `index` of the `ρ_N` stream `seed`.
 *
 * # Safety
 * `out` must be writable.
 */
enum DnlsStatus dnls_draw_sample(size_t bandwidth,
                                 uint64_t seed,
                                 uint64_t index,
                                 struct DnlsState **out);

/**
 * `count` unweighted `ρ_N` samples.
 *
 * # Safety
 * `out` must be writable.
 */
enum DnlsStatus dnls_sample_rho(size_t bandwidth,
                                size_t count,
                                uint64_t seed,
                                struct DnlsEnsemble **out);

/**
 * `count` weighted `μ_N` samples with cutoff `b`.
 *
 * # Safety
 * `out` must be writable.
 */
enum DnlsStatus dnls_sample_mu(size_t bandwidth,
                               size_t count,
                               uint64_t seed,
                               double b,
                               struct DnlsEnsemble **out);

/**
 * Releases an ensemble; null is ignored.
 *
 * # Safety
 * `ensemble` must be null or a handle not yet freed.
 */
void dnls_ensemble_free(struct DnlsEnsemble *ensemble);

/**
 * # Safety
 * `ensemble` must be a live handle; `out` must be writable.
 */
enum DnlsStatus dnls_ensemble_count(const struct DnlsEnsemble *ensemble, size_t *out);

/**
 * # Safety
 * `ensemble` must be a live handle; `out` must be writable.
 */
enum DnlsStatus dnls_ensemble_effective_sample_size(const struct DnlsEnsemble *ensemble,
                                                    double *out);

/**
 * A copy of sample `index` and its log-weight (either output may be null).
 *
 * # Safety
 * `ensemble` must be a live handle; non-null outputs must be writable.
 */
enum DnlsStatus dnls_ensemble_get(const struct DnlsEnsemble *ensemble,
                                  size_t index,
                                  struct DnlsState **state_out,
                                  double *log_weight_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DNLS_FFI_H */
