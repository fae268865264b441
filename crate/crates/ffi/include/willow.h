#ifndef WILLOW_H
#define WILLOW_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result code of every fallible call.
 */
typedef enum WillowStatus {
  WILLOW_STATUS_OK = 0,
  /*
   A verification check ran and failed.
   */
  WILLOW_STATUS_CHECK_FAILED = 1,
  /*
   Null pointer, bad index, bad string or unknown name.
   */
  WILLOW_STATUS_USAGE = 2,
  /*
   Invalid model or violated precondition.
   */
  WILLOW_STATUS_MODEL = 3,
  /*
   Solver or quadrature failure.
   */
  WILLOW_STATUS_NUMERIC = 4,
  /*
   Sampling or population budget exhausted.
   */
  WILLOW_STATUS_BUDGET = 5,
  /*
   A Rust panic was caught at the boundary.
   */
  WILLOW_STATUS_INTERNAL = 6,
} WillowStatus;

/*
 Extinction tail `v` and its time derivative on `[t0, horizon]`.
 */
typedef struct WillowFields WillowFields;

/*
 A validated multitype model.
 */
typedef struct WillowModel WillowModel;

/*
 A measure-valued path sampled on a time grid.
 */
typedef struct WillowPath WillowPath;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread, or NULL. The pointer stays
 valid until the next failing call on the same thread.
 */
const char *willow_last_error(void);

/*
 Builds a model from a row-major `k x k` generator and per-type `beta`, `alpha`.

 # Safety
 `q` must hold `k*k` doubles, `beta` and `alpha` `k` each; `out` must be writable.
 */
enum WillowStatus willow_model_new(uintptr_t k,
                                   const double *q,
                                   const double *beta,
                                   const double *alpha,
                                   struct WillowModel **out);

/*
 Resolves a built-in model name (`ref1`, `ref2type`, `critical2type`) or a
 model file path.

 # Safety
 `name` must be a NUL-terminated string; `out` must be writable.
 */
enum WillowStatus willow_model_load(const char *name, struct WillowModel **out);

/*
 # Safety
 `m` must come from a model constructor and not be freed twice.
 */
void willow_model_free(struct WillowModel *m);

/*
 Number of types, or 0 for a null handle.

 # Safety
 `m` must be a live handle or NULL.
 */
uintptr_t willow_model_k(const struct WillowModel *m);

/*
 Generalized eigenvalue `lambda0`, right/left eigenvectors and the
 stationary law of the spine. Array outputs hold `k` doubles and may be NULL.

 # Safety
 `m` must be a live handle; non-null outputs must be writable.
 */
enum WillowStatus willow_eigen(const struct WillowModel *m,
                               double *lambda0,
                               double *phi0,
                               double *phi0_tilde,
                               double *pi);

/*
 Solves for the extinction tail on `[t0, horizon]` with default tolerances.

 # Safety
 `m` must be a live handle; `out` must be writable.
 */
enum WillowStatus willow_fields_new(const struct WillowModel *m,
                                    double horizon,
                                    struct WillowFields **out);

/*
 # Safety
 `f` must come from [`willow_fields_new`] and not be freed twice.
 */
void willow_fields_free(struct WillowFields *f);

/*
 `v_t(x)` for every type, written to `out` (`k` doubles).

 # Safety
 `f` must be a live handle; `out` must hold `k` doubles.
 */
enum WillowStatus willow_fields_v(const struct WillowFields *f, double t, double *out);

/*
 `d/dt v_t(x)` for every type, written to `out` (`k` doubles).

 # Safety
 `f` must be a live handle; `out` must hold `k` doubles.
 */
enum WillowStatus willow_fields_dv(const struct WillowFields *f, double t, double *out);

/*
 `P_nu(H_max <= h) = exp(-<nu, v_h>)`.

 # Safety
 `f` must be a live handle; `nu` must hold `k` doubles; `out` must be writable.
 */
enum WillowStatus willow_extinction_cdf(const struct WillowFields *f,
                                        const double *nu,
                                        double h,
                                        double *out);

/*
 One replicate of the branching-particle system started from `nu`
 (`k` masses), recorded on `grid_steps + 1` uniform times in `[0, horizon]`.
 Replicate `rep` of seed `seed` is reproducible.

 # Safety
 `m` must be a live handle; `nu` must hold `k` doubles; `out` must be writable.
 */
enum WillowStatus willow_particles_sample(const struct WillowModel *m,
                                          const double *nu,
                                          double epsilon,
                                          double horizon,
                                          uintptr_t grid_steps,
                                          uint64_t seed,
                                          uint64_t rep,
                                          struct WillowPath **out);

/*
 One replicate of the process conditioned to die exactly at `h`, started
 from a single individual of type `x` (0-based).

 # Safety
 `f` must be a live handle with horizon beyond `h`; `out` must be writable.
 */
enum WillowStatus willow_williams_sample(const struct WillowFields *f,
                                         uintptr_t x,
                                         double h,
                                         double epsilon,
                                         uintptr_t grid_steps,
                                         uint64_t seed,
                                         uint64_t rep,
                                         struct WillowPath **out);

/*
 # Safety
 `p` must come from a sampler and not be freed twice.
 */
void willow_path_free(struct WillowPath *p);

/*
 Number of grid times, or 0 for a null handle.

 # Safety
 `p` must be a live handle or NULL.
 */
uintptr_t willow_path_len(const struct WillowPath *p);

/*
 Extinction time of the path (`INFINITY` if it survives), NaN for NULL.

 # Safety
 `p` must be a live handle or NULL.
 */
double willow_path_extinction_time(const struct WillowPath *p);

/*
 Copies the grid times (`len` doubles) and the row-major masses
 (`len * k` doubles). Either output may be NULL.

 # Safety
 `p` must be a live handle; non-null outputs must be large enough.
 */
enum WillowStatus willow_path_copy(const struct WillowPath *p, double *times, double *masses);

/*
 Runs one named verification check. `suite` is `"fast"` or `"full"`.
 Returns `Ok` on pass or skip, `CheckFailed` on failure; the statistic is
 written to `statistic` when non-null.

 # Safety
 `m` must be a live handle; strings must be NUL-terminated.
 */
enum WillowStatus willow_verify_check(const struct WillowModel *m,
                                      const char *check,
                                      const char *suite,
                                      uint64_t seed,
                                      double *statistic);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* WILLOW_H */
