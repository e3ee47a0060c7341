//! C ABI for sgdlab.
//!
//! Objects are opaque heap handles created by `sgd_*_new`/constructor
//! functions and released with the matching `*_free`. Every fallible call
//! returns an `SgdStatus`; on failure a message is kept per thread and can be
//! read with `sgd_last_error_message`. Vectors cross the boundary as
//! `(pointer, length)` pairs of doubles.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use sgdlab::experiment::{parse_config, run_experiment, summary_json};
use sgdlab::geometry::ConvexBody;
use sgdlab::objectives::{
    make_finite_dataset_regression, make_l1, make_quadratic, make_stochastic_l1, StochasticObjective,
};
use sgdlab::optimizers::{
    required_steps_raspgd, required_steps_ssgd, run_ppgd, run_rapgd, run_raspgd, run_ssgd, RunOptions, RunTrace,
    Schedule,
};
use sgdlab::rng::rng_from_seed;
use sgdlab::{Error, Vector};

pub type SgdStatus = i32;

pub const SGD_OK: SgdStatus = 0;
pub const SGD_ERR_NULL_POINTER: SgdStatus = 1;
pub const SGD_ERR_INVALID_ARGUMENT: SgdStatus = 2;
pub const SGD_ERR_DIMENSION_MISMATCH: SgdStatus = 3;
pub const SGD_ERR_NON_FINITE: SgdStatus = 4;
pub const SGD_ERR_NOT_IN_BODY: SgdStatus = 5;
pub const SGD_ERR_DIVERGENCE: SgdStatus = 6;
pub const SGD_ERR_MISSING_DATA: SgdStatus = 7;
pub const SGD_ERR_CONFIG: SgdStatus = 8;
pub const SGD_ERR_IO: SgdStatus = 9;
pub const SGD_ERR_UTF8: SgdStatus = 10;
pub const SGD_ERR_PANIC: SgdStatus = 11;

pub const SGD_ALG_RAPGD: i32 = 0;
pub const SGD_ALG_PPGD: i32 = 1;
pub const SGD_ALG_RASPGD: i32 = 2;
pub const SGD_ALG_SSGD: i32 = 3;

pub const SGD_SCHEDULE_CONSTANT: i32 = 0;
pub const SGD_SCHEDULE_INVERSE_SQRT: i32 = 1;

/// A compact convex body.
pub struct SgdBody(ConvexBody);

/// An objective with its sampler; deterministic problems have one component.
pub struct SgdObjective(StochasticObjective);

/// The history of one optimizer run.
pub struct SgdTrace(RunTrace);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> SgdStatus {
    match e {
        Error::DimensionMismatch { .. } => SGD_ERR_DIMENSION_MISMATCH,
        Error::NonFinite { .. } => SGD_ERR_NON_FINITE,
        Error::InvalidArgument(_) | Error::NotOnBoundary { .. } | Error::GradBoundViolation { .. } => {
            SGD_ERR_INVALID_ARGUMENT
        }
        Error::NotInBody(_) => SGD_ERR_NOT_IN_BODY,
        Error::Divergence { .. } => SGD_ERR_DIVERGENCE,
        Error::MissingData(_) => SGD_ERR_MISSING_DATA,
        Error::Config { .. } | Error::Json(_) => SGD_ERR_CONFIG,
        Error::Io(_) => SGD_ERR_IO,
    }
}

struct Fail(SgdStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(SGD_ERR_NULL_POINTER, format!("{what} is null"))
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SgdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SGD_OK,
        Ok(Err(Fail(code, msg))) => {
            set_error(&msg);
            code
        }
        Err(_) => {
            set_error("internal panic");
            SGD_ERR_PANIC
        }
    }
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn vector(p: *const f64, len: usize, what: &str) -> Result<Vector, Fail> {
    Ok(Vector::new(slice(p, len, what)?.to_vec())?)
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn store<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output handle"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn put<T>(out: *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output"));
    }
    *out = value;
    Ok(())
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(SGD_ERR_UTF8, format!("{what} is not valid UTF-8")))
}

fn copy_out(src: &[f64], dst: &mut [f64]) -> Result<(), Fail> {
    if src.len() != dst.len() {
        return Err(Error::DimensionMismatch {
            expected: src.len(),
            found: dst.len(),
        }
        .into());
    }
    dst.copy_from_slice(src);
    Ok(())
}

/// Message describing the last failed call on this thread. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn sgd_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sgd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

// Bodies

/// Euclidean ball with the given center and radius.
///
/// # Safety
/// `center` must point to `dim` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sgd_body_ball(center: *const f64, dim: usize, radius: f64, out: *mut *mut SgdBody) -> SgdStatus {
    guard(|| {
        let body = ConvexBody::ball(vector(center, dim, "center")?, radius)?;
        store(out, SgdBody(body))
    })
}

/// Axis-aligned box `[lower, upper]`.
///
/// # Safety
/// `lower` and `upper` must point to `dim` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sgd_body_box(
    lower: *const f64,
    upper: *const f64,
    dim: usize,
    out: *mut *mut SgdBody,
) -> SgdStatus {
    guard(|| {
        let body = ConvexBody::cube(vector(lower, dim, "lower")?, vector(upper, dim, "upper")?)?;
        store(out, SgdBody(body))
    })
}

/// Scaled probability simplex `{x ≥ 0, Σx = scale}`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sgd_body_simplex(dim: usize, scale: f64, out: *mut *mut SgdBody) -> SgdStatus {
    guard(|| store(out, SgdBody(ConvexBody::simplex(dim, scale)?)))
}

/// Body from its JSON description, e.g. `{"type": "ball", "center": [0, 0], "radius": 1}`.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sgd_body_from_json(json: *const c_char, out: *mut *mut SgdBody) -> SgdStatus {
    guard(|| {
        let body: ConvexBody = serde_json::from_str(text(json, "json")?).map_err(Error::from)?;
        store(out, SgdBody(body))
    })
}

/// # Safety
/// `body` must come from an `sgd_body_*` constructor and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sgd_body_free(body: *mut SgdBody) {
    if !body.is_null() {
        drop(Box::from_raw(body));
    }
}

/// # Safety
/// `body` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn sgd_body_dim(body: *const SgdBody) -> usize {
    body.as_ref().map_or(0, |b| b.0.dim())
}

/// # Safety
/// `body` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sgd_body_diameter(body: *const SgdBody, out: *mut f64) -> SgdStatus {
    guard(|| put(out, handle(body, "body")?.0.diameter()))
}

/// Euclidean projection of `x` onto the body.
///
/// # Safety
/// `x` and `out` must each hold `dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn sgd_body_project(body: *const SgdBody, x: *const f64, dim: usize, out: *mut f64) -> SgdStatus {
    guard(|| {
        let p = handle(body, "body")?.0.project(slice(x, dim, "x")?)?;
        copy_out(&p, slice_mut(out, dim, "out")?)
    })
}

/// Distance from `x` to the body; this is also the penalization gauge.
///
/// # Safety
/// `x` must hold `dim` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sgd_body_distance(body: *const SgdBody, x: *const f64, dim: usize, out: *mut f64) -> SgdStatus {
    guard(|| put(out, handle(body, "body")?.0.distance_to_set(slice(x, dim, "x")?)?))
}

/// Subgradient of the distance gauge at `x`.
///
/// # Safety
/// `x` and `out` must each hold `dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn sgd_body_gauge_subgradient(
    body: *const SgdBody,
    x: *const f64,
    dim: usize,
    out: *mut f64,
) -> SgdStatus {
    guard(|| {
        let g = handle(body, "body")?.0.gauge_subgradient(slice(x, dim, "x")?)?;
        copy_out(&g, slice_mut(out, dim, "out")?)
    })
}

// Objectives

/// `½‖x − a‖²` over the body.
///
/// # Safety
/// `a` must hold `dim` doubles; `body` must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sgd_objective_quadratic(
    a: *const f64,
    dim: usize,
    body: *const SgdBody,
    out: *mut *mut SgdObjective,
) -> SgdStatus {
    guard(|| {
        let f = make_quadratic(vector(a, dim, "a")?, &handle(body, "body")?.0)?;
        store(out, SgdObjective(StochasticObjective::deterministic(f)))
    })
}

/// `‖x − a‖₁` over the body.
///
/// # Safety
/// As for `sgd_objective_quadratic`.
#[no_mangle]
pub unsafe extern "C" fn sgd_objective_l1(
    a: *const f64,
    dim: usize,
    body: *const SgdBody,
    out: *mut *mut SgdObjective,
) -> SgdStatus {
    guard(|| {
        let f = make_l1(vector(a, dim, "a")?, &handle(body, "body")?.0)?;
        store(out, SgdObjective(StochasticObjective::deterministic(f)))
    })
}

/// `‖x − a‖₁` sampled one coordinate at a time.
///
/// # Safety
/// As for `sgd_objective_quadratic`.
#[no_mangle]
pub unsafe extern "C" fn sgd_objective_stochastic_l1(
    a: *const f64,
    dim: usize,
    body: *const SgdBody,
    out: *mut *mut SgdObjective,
) -> SgdStatus {
    guard(|| {
        let d = make_stochastic_l1(vector(a, dim, "a")?, &handle(body, "body")?.0)?;
        store(out, SgdObjective(d))
    })
}

/// Least squares over a finite dataset, sampled one row at a time. `xs` is
/// row-major with `rows × dim` entries.
///
/// # Safety
/// `xs` must hold `rows * dim` doubles and `ys` `rows` doubles.
#[no_mangle]
pub unsafe extern "C" fn sgd_objective_regression(
    xs: *const f64,
    ys: *const f64,
    rows: usize,
    dim: usize,
    body: *const SgdBody,
    out: *mut *mut SgdObjective,
) -> SgdStatus {
    guard(|| {
        let len = rows
            .checked_mul(dim)
            .ok_or_else(|| Fail(SGD_ERR_INVALID_ARGUMENT, "dataset size overflows".into()))?;
        let flat = slice(xs, len, "xs")?;
        let xs: Vec<Vector> = flat
            .chunks(dim.max(1))
            .map(|r| Vector::new(r.to_vec()))
            .collect::<Result<_, _>>()?;
        let ys = slice(ys, rows, "ys")?.to_vec();
        let d = make_finite_dataset_regression(xs, ys, &handle(body, "body")?.0)?;
        store(out, SgdObjective(d))
    })
}

/// # Safety
/// `f` must come from an `sgd_objective_*` constructor and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sgd_objective_free(f: *mut SgdObjective) {
    if !f.is_null() {
        drop(Box::from_raw(f));
    }
}

/// Mean objective value at `x`.
///
/// # Safety
/// `x` must hold `dim` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sgd_objective_value(f: *const SgdObjective, x: *const f64, dim: usize, out: *mut f64) -> SgdStatus {
    guard(|| put(out, handle(f, "objective")?.0.mean().value(slice(x, dim, "x")?)?))
}

/// Subgradient bound of the sampled components.
///
/// # Safety
/// `f` must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sgd_objective_grad_bound(f: *const SgdObjective, out: *mut f64) -> SgdStatus {
    guard(|| put(out, handle(f, "objective")?.0.grad_bound()))
}

/// Constrained optimum value; fails with `SGD_ERR_MISSING_DATA` when unknown.
///
/// # Safety
/// `f` must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sgd_objective_optimum_value(f: *const SgdObjective, out: *mut f64) -> SgdStatus {
    guard(|| put(out, handle(f, "objective")?.0.mean().require_optimum()?.value))
}

// Runs

/// Runs one optimizer.
///
/// `algorithm` is one of `SGD_ALG_*` and `schedule` one of `SGD_SCHEDULE_*`
/// with constant `c`. `eps_sm` and `smooth` apply to SSGD only; `seed` drives
/// the sampling of the stochastic methods.
///
/// # Safety
/// Handles must be live; `u1` must hold `dim` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sgd_run(
    algorithm: i32,
    f: *const SgdObjective,
    body: *const SgdBody,
    schedule: i32,
    c: f64,
    u1: *const f64,
    dim: usize,
    steps: usize,
    eps_sm: f64,
    smooth: bool,
    seed: u64,
    out: *mut *mut SgdTrace,
) -> SgdStatus {
    guard(|| {
        let d = &handle(f, "objective")?.0;
        let body = &handle(body, "body")?.0;
        let s = match schedule {
            SGD_SCHEDULE_CONSTANT => Schedule::constant(c)?,
            SGD_SCHEDULE_INVERSE_SQRT => Schedule::inverse_sqrt(c)?,
            other => return Err(Fail(SGD_ERR_INVALID_ARGUMENT, format!("unknown schedule {other}"))),
        };
        let u1 = vector(u1, dim, "u1")?;
        let opts = RunOptions::default();
        let mut rng = rng_from_seed(seed);
        let mut trace = match algorithm {
            SGD_ALG_RAPGD => run_rapgd(d.mean(), body, &s, &u1, steps, &opts)?,
            SGD_ALG_PPGD => run_ppgd(d.mean(), body, &s, &u1, steps, &opts)?,
            SGD_ALG_RASPGD => run_raspgd(d, body, &s, &u1, steps, &mut rng, &opts)?,
            SGD_ALG_SSGD => run_ssgd(d, body, &s, eps_sm, &u1, steps, smooth, &mut rng, &opts)?,
            other => return Err(Fail(SGD_ERR_INVALID_ARGUMENT, format!("unknown algorithm {other}"))),
        };
        if algorithm == SGD_ALG_RASPGD || algorithm == SGD_ALG_SSGD {
            trace.seed = Some(seed);
        }
        store(out, SgdTrace(trace))
    })
}

/// # Safety
/// `trace` must come from `sgd_run` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sgd_trace_free(trace: *mut SgdTrace) {
    if !trace.is_null() {
        drop(Box::from_raw(trace));
    }
}

/// Number of steps `T`; the trace holds `T + 1` iterates.
///
/// # Safety
/// `trace` must be live.
#[no_mangle]
pub unsafe extern "C" fn sgd_trace_steps(trace: *const SgdTrace) -> usize {
    trace.as_ref().map_or(0, |t| t.0.steps())
}

/// The reported output point (running average, last iterate, or projected
/// final iterate, depending on the algorithm).
///
/// # Safety
/// `out` must hold `dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn sgd_trace_output(trace: *const SgdTrace, out: *mut f64, dim: usize) -> SgdStatus {
    guard(|| copy_out(&handle(trace, "trace")?.0.u_end, slice_mut(out, dim, "out")?))
}

/// Iterate `u_{t+1}` for `t` in `0..=T`.
///
/// # Safety
/// `out` must hold `dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn sgd_trace_iterate(trace: *const SgdTrace, t: usize, out: *mut f64, dim: usize) -> SgdStatus {
    guard(|| {
        let tr = &handle(trace, "trace")?.0;
        let u = tr.iterates.get(t).ok_or_else(|| {
            Fail(
                SGD_ERR_INVALID_ARGUMENT,
                format!("iterate index {t} out of range 0..={}", tr.steps()),
            )
        })?;
        copy_out(u, slice_mut(out, dim, "out")?)
    })
}

/// Mean objective values at the `T + 1` iterates.
///
/// # Safety
/// `out` must hold `len` doubles, with `len` equal to `T + 1`.
#[no_mangle]
pub unsafe extern "C" fn sgd_trace_values(trace: *const SgdTrace, out: *mut f64, len: usize) -> SgdStatus {
    guard(|| copy_out(&handle(trace, "trace")?.0.mean_values, slice_mut(out, len, "out")?))
}

/// Step sizes `ε_1 … ε_T`.
///
/// # Safety
/// `out` must hold `len` doubles, with `len` equal to `T`.
#[no_mangle]
pub unsafe extern "C" fn sgd_trace_step_sizes(trace: *const SgdTrace, out: *mut f64, len: usize) -> SgdStatus {
    guard(|| copy_out(&handle(trace, "trace")?.0.step_sizes, slice_mut(out, len, "out")?))
}

/// Optimality gap `f(output) − f(u_opt)` of a trace produced on `f`.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sgd_trace_gap(trace: *const SgdTrace, f: *const SgdObjective, out: *mut f64) -> SgdStatus {
    guard(|| {
        let g = sgdlab::analysis::gap(&handle(trace, "trace")?.0, handle(f, "objective")?.0.mean())?;
        put(out, g)
    })
}

// Step counts and experiments

/// Steps SSGD needs for accuracy `eps`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sgd_required_steps_ssgd(g: f64, diam: f64, eps: f64, lipschitz: bool, out: *mut u64) -> SgdStatus {
    guard(|| put(out, required_steps_ssgd(g, diam, eps, lipschitz)?))
}

/// Steps RASPGD needs for accuracy `eps`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sgd_required_steps_raspgd(g: f64, diam: f64, eps: f64, out: *mut u64) -> SgdStatus {
    guard(|| put(out, required_steps_raspgd(g, diam, eps)?))
}

/// Runs a JSON experiment config. Output paths in the config are resolved
/// against `out_dir` (the working directory when null). The summary JSON is
/// returned in `summary_out` and must be released with `sgd_string_free`.
///
/// # Safety
/// `config` must be NUL-terminated; `out_dir` NUL-terminated or null;
/// `summary_out` writable.
#[no_mangle]
pub unsafe extern "C" fn sgd_run_config_json(
    config: *const c_char,
    out_dir: *const c_char,
    summary_out: *mut *mut c_char,
) -> SgdStatus {
    guard(|| {
        if summary_out.is_null() {
            return Err(null("summary_out"));
        }
        let exp = parse_config(text(config, "config")?)?;
        let dir = if out_dir.is_null() {
            None
        } else {
            Some(Path::new(text(out_dir, "out_dir")?))
        };
        let report = run_experiment(&exp, dir)?;
        let json = summary_json(&report.summary)?;
        *summary_out = CString::new(json)
            .map_err(|_| Fail(SGD_ERR_INVALID_ARGUMENT, "summary contains NUL".into()))?
            .into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sgd_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
