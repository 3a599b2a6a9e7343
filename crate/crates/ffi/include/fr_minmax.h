/* C ABI for the fr-minmax entropy-regularized min-max game library. */

#ifndef FR_MINMAX_H
#define FR_MINMAX_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible call.
 */
typedef enum FrStatus {
  FrStatus_Ok = 0,
  FrStatus_NullPointer = 1,
  FrStatus_InvalidArgument = 2,
  FrStatus_GridMismatch = 3,
  FrStatus_NonFinite = 4,
  FrStatus_RatioCondition = 5,
  FrStatus_NotConverged = 6,
  FrStatus_Io = 7,
  FrStatus_Utf8 = 8,
  FrStatus_Internal = 99,
} FrStatus;

/**
 * Integration scheme selector.
 */
typedef enum FrScheme {
  FrScheme_EulerLog = 0,
  FrScheme_ExpDuhamel = 1,
} FrScheme;

/**
 * Regularizer-weight convention for MDA runs.
 */
typedef enum FrRegConvention {
  /**
   * Weight `sigma^2 / 2` (continuous-time objective).
   */
  FrRegConvention_MainText = 0,
  /**
   * Weight `sigma` (discrete-time analysis), requires `sigma * eta <= 1`.
   */
  FrRegConvention_AppendixD = 1,
} FrRegConvention;

/**
 * Opaque equilibrium handle.
 */
typedef struct FrEquilibrium FrEquilibrium;

/**
 * Opaque quadrature grid handle.
 */
typedef struct FrGrid FrGrid;

/**
 * Opaque probability-measure handle.
 */
typedef struct FrMeasure FrMeasure;

/**
 * Opaque regularized-objective handle (payoff + sigma + references).
 */
typedef struct FrObjective FrObjective;

/**
 * Opaque trajectory handle.
 */
typedef struct FrTrajectory FrTrajectory;

/**
 * Per-sample trajectory diagnostics (mirrors the trajectory CSV columns).
 */
typedef struct FrSampleDiag {
  double t;
  double kl_nu_pi;
  double kl_mu_rho;
  double sup_ratio_nu;
  double inf_ratio_nu;
  double sup_ratio_mu;
  double inf_ratio_mu;
  double mass_err_nu;
  double mass_err_mu;
} FrSampleDiag;

/**
 * Derived constants of an equilibrium solve.
 */
typedef struct FrConstants {
  double c_nu;
  double c_mu;
  double c_sigma;
  double r1_nu;
  double r1_mu;
  double big_r1_nu;
  double big_r1_mu;
  double cv_nu;
  double cv_mu;
} FrConstants;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the most recent error on this thread. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *fr_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *fr_version(void);

/**
 * Uniform 1-D grid of `n >= 2` points on `[a, b]` with trapezoidal weights.
 *
 * # Safety
 * `out` must be a valid pointer; the returned handle must be released with
 * [`fr_grid_free`].
 */
enum FrStatus fr_grid_uniform_1d(size_t n, double a, double b, struct FrGrid **out);

/**
 * Finite strategy set of `n` points with unit weights.
 *
 * # Safety
 * As [`fr_grid_uniform_1d`].
 */
enum FrStatus fr_grid_finite(size_t n, struct FrGrid **out);

/**
 * Number of grid points; 0 for a null handle.
 *
 * # Safety
 * `grid` must be a live handle from this library or null.
 */
size_t fr_grid_len(const struct FrGrid *grid);

/**
 * # Safety
 * `grid` must be a handle returned by this library, not yet freed; null is
 * a no-op.
 */
void fr_grid_free(struct FrGrid *grid);

/**
 * Uniform probability measure on the grid.
 *
 * # Safety
 * `grid` must be a live handle; `out` valid; release with
 * [`fr_measure_free`].
 */
enum FrStatus fr_measure_uniform(const struct FrGrid *grid, struct FrMeasure **out);

/**
 * Gibbs normalization of `len` unnormalized log-weights; writes the log
 * normalizing constant to `log_z_out` when non-null.
 *
 * # Safety
 * `log_weights` must point to `len` readable doubles; `grid` live; `out`
 * valid.
 */
enum FrStatus fr_measure_from_log_weights(const struct FrGrid *grid,
                                          const double *log_weights,
                                          size_t len,
                                          double *log_z_out,
                                          struct FrMeasure **out);

/**
 * Copy the log-density values into `buf` (capacity `len`, must equal the
 * grid size).
 *
 * # Safety
 * `buf` must point to `len` writable doubles.
 */
enum FrStatus fr_measure_log_density(const struct FrMeasure *m, double *buf, size_t len);

/**
 * Relative entropy KL(p|q).
 *
 * # Safety
 * `p`, `q` live handles on the same grid; `out` valid.
 */
enum FrStatus fr_measure_kl(const struct FrMeasure *p, const struct FrMeasure *q, double *out);

/**
 * Total variation distance.
 *
 * # Safety
 * As [`fr_measure_kl`].
 */
enum FrStatus fr_measure_tv(const struct FrMeasure *p, const struct FrMeasure *q, double *out);

/**
 * # Safety
 * `m` must be a handle returned by this library, not yet freed; null is a
 * no-op.
 */
void fr_measure_free(struct FrMeasure *m);

/**
 * Build a regularized objective from a named kernel generator (`zero`,
 * `matching_pennies`, `smooth_sin`, `appendix_d_phi`) with uniform
 * references. `matching_pennies` ignores the supplied grids and uses its
 * own 2x2 finite sets.
 *
 * # Safety
 * `generator` must be a NUL-terminated string; grid handles live; `out`
 * valid; release with [`fr_objective_free`].
 */
enum FrStatus fr_objective_new_generator(const char *generator,
                                         const struct FrGrid *grid_x,
                                         const struct FrGrid *grid_y,
                                         double sigma,
                                         struct FrObjective **out);

/**
 * # Safety
 * `obj` must be a handle returned by this library, not yet freed; null is
 * a no-op.
 */
void fr_objective_free(struct FrObjective *obj);

/**
 * Integrate the birth-death flow from `(nu0, mu0)` over `[0, t_end]`.
 *
 * # Safety
 * All handles live; `out` valid; release with [`fr_trajectory_free`].
 */
enum FrStatus fr_flow_integrate(const struct FrObjective *obj,
                                const struct FrMeasure *nu0,
                                const struct FrMeasure *mu0,
                                enum FrScheme scheme,
                                double dt,
                                double t_end,
                                size_t sample_every,
                                struct FrTrajectory **out);

/**
 * Number of samples in a trajectory; 0 for null.
 *
 * # Safety
 * `t` must be a live handle or null.
 */
size_t fr_trajectory_len(const struct FrTrajectory *t);

/**
 * Diagnostics of sample `idx`.
 *
 * # Safety
 * `t` live; `out` valid.
 */
enum FrStatus fr_trajectory_diag(const struct FrTrajectory *t,
                                 size_t idx,
                                 struct FrSampleDiag *out);

/**
 * Clone the pair of measures at sample `idx`.
 *
 * # Safety
 * `t` live; out-pointers valid; release the measures with
 * [`fr_measure_free`].
 */
enum FrStatus fr_trajectory_state(const struct FrTrajectory *t,
                                  size_t idx,
                                  struct FrMeasure **nu_out,
                                  struct FrMeasure **mu_out);

/**
 * # Safety
 * `t` must be a handle returned by this library, not yet freed; null is a
 * no-op.
 */
void fr_trajectory_free(struct FrTrajectory *t);

/**
 * Run simultaneous mirror descent-ascent for `n_steps` iterations and
 * return the final pair. `sigma` is interpreted through `convention`; the
 * objective's own `sigma` is not consulted.
 *
 * # Safety
 * All handles live; out-pointers valid; release the measures with
 * [`fr_measure_free`].
 */
enum FrStatus fr_mda_run(const struct FrObjective *obj,
                         const struct FrMeasure *nu0,
                         const struct FrMeasure *mu0,
                         enum FrRegConvention convention,
                         double sigma,
                         double eta,
                         size_t n_steps,
                         struct FrMeasure **nu_out,
                         struct FrMeasure **mu_out);

/**
 * Solve for the mixed Nash equilibrium by damped Gibbs fixed-point
 * iteration. Pass `damping <= 0` to use the default damping.
 *
 * # Safety
 * `obj` live; `out` valid; release with [`fr_equilibrium_free`].
 */
enum FrStatus fr_solve_mne(const struct FrObjective *obj,
                           double damping,
                           double tol,
                           size_t max_iter,
                           struct FrEquilibrium **out);

/**
 * Terminal best-response TV residual; NaN for null.
 *
 * # Safety
 * `eq` must be a live handle or null.
 */
double fr_equilibrium_residual(const struct FrEquilibrium *eq);

/**
 * Clone the equilibrium pair.
 *
 * # Safety
 * `eq` live; out-pointers valid; release with [`fr_measure_free`].
 */
enum FrStatus fr_equilibrium_pair(const struct FrEquilibrium *eq,
                                  struct FrMeasure **nu_out,
                                  struct FrMeasure **mu_out);

/**
 * Derived constants bundle of the solve.
 *
 * # Safety
 * `eq` live; `out` valid.
 */
enum FrStatus fr_equilibrium_constants(const struct FrEquilibrium *eq, struct FrConstants *out);

/**
 * Nikaido-Isoda error of `(nu, mu)` for the equilibrium's objective.
 *
 * # Safety
 * All handles live; `out` valid.
 */
enum FrStatus fr_ni_error(const struct FrEquilibrium *eq,
                          const struct FrMeasure *nu,
                          const struct FrMeasure *mu,
                          double *out);

/**
 * # Safety
 * `eq` must be a handle returned by this library, not yet freed; null is a
 * no-op.
 */
void fr_equilibrium_free(struct FrEquilibrium *eq);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FR_MINMAX_H */
