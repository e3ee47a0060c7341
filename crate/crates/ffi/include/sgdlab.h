#ifndef SGDLAB_H
#define SGDLAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

#define SGD_ALG_RAPGD 0

#define SGD_ALG_PPGD 1

#define SGD_ALG_RASPGD 2

#define SGD_ALG_SSGD 3

#define SGD_SCHEDULE_CONSTANT 0

#define SGD_SCHEDULE_INVERSE_SQRT 1

/**
 * A compact convex body.
 */
typedef struct SgdBody SgdBody;

/**
 * An objective with its sampler; deterministic problems have one component.
 */
typedef struct SgdObjective SgdObjective;

/**
 * The history of one optimizer run.
 */
typedef struct SgdTrace SgdTrace;

typedef int32_t SgdStatus;

#define SGD_OK 0

#define SGD_ERR_NULL_POINTER 1

#define SGD_ERR_INVALID_ARGUMENT 2

#define SGD_ERR_DIMENSION_MISMATCH 3

#define SGD_ERR_NON_FINITE 4

#define SGD_ERR_NOT_IN_BODY 5

#define SGD_ERR_DIVERGENCE 6

#define SGD_ERR_MISSING_DATA 7

#define SGD_ERR_CONFIG 8

#define SGD_ERR_IO 9

#define SGD_ERR_UTF8 10

#define SGD_ERR_PANIC 11

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the last failed call on this thread. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *sgd_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *sgd_version(void);

/**
 * Euclidean ball with the given center and radius.
 *
 * # Safety
 * `center` must point to `dim` doubles; `out` must be writable.
 */
SgdStatus sgd_body_ball(const double *center, size_t dim, double radius, SgdBody **out);

/**
 * Axis-aligned box `[lower, upper]`.
 *
 * # Safety
 * `lower` and `upper` must point to `dim` doubles; `out` must be writable.
 */
SgdStatus sgd_body_box(const double *lower, const double *upper, size_t dim, SgdBody **out);

/**
 * Scaled probability simplex `{x ≥ 0, Σx = scale}`.
 *
 * # Safety
 * `out` must be writable.
 */
SgdStatus sgd_body_simplex(size_t dim, double scale, SgdBody **out);

/**
 * Body from its JSON description, e.g. `{"type": "ball", "center": [0, 0], "radius": 1}`.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be writable.
 */
SgdStatus sgd_body_from_json(const char *json, SgdBody **out);

/**
 * # Safety
 * `body` must come from an `sgd_body_*` constructor and not be used afterwards.
 */
void sgd_body_free(SgdBody *body);

/**
 * # Safety
 * `body` must be a live handle.
 */
size_t sgd_body_dim(const SgdBody *body);

/**
 * # Safety
 * `body` must be a live handle; `out` must be writable.
 */
SgdStatus sgd_body_diameter(const SgdBody *body, double *out);

/**
 * Euclidean projection of `x` onto the body.
 *
 * # Safety
 * `x` and `out` must each hold `dim` doubles.
 */
SgdStatus sgd_body_project(const SgdBody *body, const double *x, size_t dim, double *out);

/**
 * Distance from `x` to the body; this is also the penalization gauge.
 *
 * # Safety
 * `x` must hold `dim` doubles; `out` must be writable.
 */
SgdStatus sgd_body_distance(const SgdBody *body, const double *x, size_t dim, double *out);

/**
 * Subgradient of the distance gauge at `x`.
 *
 * # Safety
 * `x` and `out` must each hold `dim` doubles.
 */
SgdStatus sgd_body_gauge_subgradient(const SgdBody *body, const double *x, size_t dim, double *out);

/**
 * `½‖x − a‖²` over the body.
 *
 * # Safety
 * `a` must hold `dim` doubles; `body` must be live; `out` must be writable.
 */
SgdStatus sgd_objective_quadratic(const double *a,
                                  size_t dim,
                                  const SgdBody *body,
                                  SgdObjective **out);

/**
 * `‖x − a‖₁` over the body.
 *
 * # Safety
 * As for `sgd_objective_quadratic`.
 */
SgdStatus sgd_objective_l1(const double *a, size_t dim, const SgdBody *body, SgdObjective **out);

/**
 * `‖x − a‖₁` sampled one coordinate at a time.
 *
 * # Safety
 * As for `sgd_objective_quadratic`.
 */
SgdStatus sgd_objective_stochastic_l1(const double *a,
                                      size_t dim,
                                      const SgdBody *body,
                                      SgdObjective **out);

/**
 * Least squares over a finite dataset, sampled one row at a time. `xs` is
 * row-major with `rows × dim` entries.
 *
 * # Safety
 * `xs` must hold `rows * dim` doubles and `ys` `rows` doubles.
 */
SgdStatus sgd_objective_regression(const double *xs,
                                   const double *ys,
                                   size_t rows,
                                   size_t dim,
                                   const SgdBody *body,
                                   SgdObjective **out);

/**
 * # Safety
 * `f` must come from an `sgd_objective_*` constructor and not be used afterwards.
 */
void sgd_objective_free(SgdObjective *f);

/**
 * Mean objective value at `x`.
 *
 * # Safety
 * `x` must hold `dim` doubles; `out` must be writable.
 */
SgdStatus sgd_objective_value(const SgdObjective *f, const double *x, size_t dim, double *out);

/**
 * Subgradient bound of the sampled components.
 *
 * # Safety
 * `f` must be live; `out` must be writable.
 */
SgdStatus sgd_objective_grad_bound(const SgdObjective *f, double *out);

/**
 * Constrained optimum value; fails with `SGD_ERR_MISSING_DATA` when unknown.
 *
 * # Safety
 * `f` must be live; `out` must be writable.
 */
SgdStatus sgd_objective_optimum_value(const SgdObjective *f, double *out);

/**
 * Runs one optimizer.
 *
 * `algorithm` is one of `SGD_ALG_*` and `schedule` one of `SGD_SCHEDULE_*`
 * with constant `c`. `eps_sm` and `smooth` apply to SSGD only; `seed` drives
 * the sampling of the stochastic methods.
 *
 * # Safety
 * Handles must be live; `u1` must hold `dim` doubles; `out` must be writable.
 */
SgdStatus sgd_run(int32_t algorithm,
                  const SgdObjective *f,
                  const SgdBody *body,
                  int32_t schedule,
                  double c,
                  const double *u1,
                  size_t dim,
                  size_t steps,
                  double eps_sm,
                  bool smooth,
                  uint64_t seed,
                  SgdTrace **out);

/**
 * # Safety
 * `trace` must come from `sgd_run` and not be used afterwards.
 */
void sgd_trace_free(SgdTrace *trace);

/**
 * Number of steps `T`; the trace holds `T + 1` iterates.
 *
 * # Safety
 * `trace` must be live.
 */
size_t sgd_trace_steps(const SgdTrace *trace);

/**
 * The reported output point (running average, last iterate, or projected
 * final iterate, depending on the algorithm).
 *
 * # Safety
 * `out` must hold `dim` doubles.
 */
SgdStatus sgd_trace_output(const SgdTrace *trace, double *out, size_t dim);

/**
 * Iterate `u_{t+1}` for `t` in `0..=T`.
 *
 * # Safety
 * `out` must hold `dim` doubles.
 */
SgdStatus sgd_trace_iterate(const SgdTrace *trace, size_t t, double *out, size_t dim);

/**
 * Mean objective values at the `T + 1` iterates.
 *
 * # Safety
 * `out` must hold `len` doubles, with `len` equal to `T + 1`.
 */
SgdStatus sgd_trace_values(const SgdTrace *trace, double *out, size_t len);

/**
 * Step sizes `ε_1 … ε_T`.
 *
 * # Safety
 * `out` must hold `len` doubles, with `len` equal to `T`.
 */
SgdStatus sgd_trace_step_sizes(const SgdTrace *trace, double *out, size_t len);

/**
 * Optimality gap `f(output) − f(u_opt)` of a trace produced on `f`.
 *
 * # Safety
 * Handles must be live; `out` must be writable.
 */
SgdStatus sgd_trace_gap(const SgdTrace *trace, const SgdObjective *f, double *out);

/**
 * Steps SSGD needs for accuracy `eps`.
 *
 * # Safety
 * `out` must be writable.
 */
SgdStatus sgd_required_steps_ssgd(double g, double diam, double eps, bool lipschitz, uint64_t *out);

/**
 * Steps RASPGD needs for accuracy `eps`.
 *
 * # Safety
 * `out` must be writable.
 */
SgdStatus sgd_required_steps_raspgd(double g, double diam, double eps, uint64_t *out);

/**
 * Runs a JSON experiment config. Output paths in the config are resolved
 * against `out_dir` (the working directory when null). The summary JSON is
 * returned in `summary_out` and must be released with `sgd_string_free`.
 *
 * # Safety
 * `config` must be NUL-terminated; `out_dir` NUL-terminated or null;
 * `summary_out` writable.
 */
SgdStatus sgd_run_config_json(const char *config, const char *out_dir, char **summary_out);

/**
 * # Safety
 * `s` must come from this library and not be used afterwards.
 */
void sgd_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SGDLAB_H */
