//! The four descent methods, learning-rate schedules, and step-count formulas.
//!
//! * RAPGD: projected subgradient steps, output the ε-weighted running average.
//! * PPGD: projected subgradient steps, output the last iterate.
//! * RASPGD: RAPGD driven by one sampled objective per step.
//! * SSGD: unprojected steps on the penalized objective `f + 2G·ψ_C`,
//!   evaluated at a uniformly perturbed point; the last iterate is projected.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ConvexBody, BOUNDARY_TOL};
use crate::objectives::{ConvexObjective, Function, StochasticObjective};
use crate::smoothing::{sample_uniform_ball, BallNoise};
use crate::vector::{check_dim, Vector};

/// Relative slack allowed when checking sampled subgradients against `G`.
pub const GRAD_BOUND_SLACK: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScheduleSpec", into = "ScheduleSpec")]
pub enum Schedule {
    Constant(f64),
    /// `c / √t`
    InverseSqrt(f64),
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleSpec {
    Constant { c: f64 },
    InverseSqrt { c: f64 },
}

impl TryFrom<ScheduleSpec> for Schedule {
    type Error = Error;
    fn try_from(spec: ScheduleSpec) -> Result<Self> {
        match spec {
            ScheduleSpec::Constant { c } => Schedule::constant(c),
            ScheduleSpec::InverseSqrt { c } => Schedule::inverse_sqrt(c),
        }
    }
}

impl From<Schedule> for ScheduleSpec {
    fn from(s: Schedule) -> Self {
        match s {
            Schedule::Constant(c) => ScheduleSpec::Constant { c },
            Schedule::InverseSqrt(c) => ScheduleSpec::InverseSqrt { c },
        }
    }
}

fn check_rate(c: f64) -> Result<f64> {
    if c.is_finite() && c > 0.0 {
        Ok(c)
    } else {
        Err(Error::InvalidArgument(format!("schedule constant must be positive, got {c}")))
    }
}

impl Schedule {
    pub fn constant(c: f64) -> Result<Self> {
        Ok(Schedule::Constant(check_rate(c)?))
    }

    pub fn inverse_sqrt(c: f64) -> Result<Self> {
        Ok(Schedule::InverseSqrt(check_rate(c)?))
    }

    /// Step size at step `t ≥ 1`.
    pub fn at(&self, t: usize) -> Result<f64> {
        if t == 0 {
            return Err(Error::InvalidArgument("schedules are indexed from t = 1".into()));
        }
        Ok(self.at_unchecked(t))
    }

    fn at_unchecked(&self, t: usize) -> f64 {
        match *self {
            Schedule::Constant(c) => c,
            Schedule::InverseSqrt(c) => c / (t as f64).sqrt(),
        }
    }

    /// Largest step size over steps `1..=T`.
    pub fn max_over(&self, steps: usize) -> f64 {
        match *self {
            Schedule::Constant(c) | Schedule::InverseSqrt(c) if steps > 0 => c,
            _ => 0.0,
        }
    }

    pub fn sizes(&self, steps: usize) -> Vec<f64> {
        (1..=steps).map(|t| self.at_unchecked(t)).collect()
    }
}

pub fn schedule_at(s: &Schedule, t: usize) -> Result<f64> {
    s.at(t)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Rapgd,
    Ppgd,
    Raspgd,
    Ssgd,
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Rapgd => "rapgd",
            Algorithm::Ppgd => "ppgd",
            Algorithm::Raspgd => "raspgd",
            Algorithm::Ssgd => "ssgd",
        }
    }

    pub fn is_stochastic(&self) -> bool {
        matches!(self, Algorithm::Raspgd | Algorithm::Ssgd)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rapgd" => Ok(Algorithm::Rapgd),
            "ppgd" => Ok(Algorithm::Ppgd),
            "raspgd" => Ok(Algorithm::Raspgd),
            "ssgd" => Ok(Algorithm::Ssgd),
            other => Err(Error::InvalidArgument(format!("unknown algorithm `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions {
    pub record_half_steps: bool,
}

/// Full history of one run.
///
/// Per-step vectors have `T` entries indexed by `t = 1..=T`; `iterates`,
/// `mean_values` and `dist_to_body` have `T + 1` entries.
#[derive(Clone, Debug, PartialEq)]
pub struct RunTrace {
    pub algorithm: Algorithm,
    /// `u_1 … u_{T+1}`
    pub iterates: Vec<Vector>,
    /// `u_{t+½}`, when recording was requested (projected methods only).
    pub half_steps: Option<Vec<Vector>>,
    /// Mean objective `f(u_t)`.
    pub mean_values: Vec<f64>,
    /// `f_{t+½}(u_t)`; equals `f(u_t)` for the deterministic methods.
    pub sampled_values_at_iterate: Vec<f64>,
    /// `f_{t+½}(u_opt)`, when the optimum is known.
    pub sampled_values_at_opt: Option<Vec<f64>>,
    /// SSGD only: the realized update direction
    /// `∂f_{t+½}(u_t − v) + 2G·∂ψ(u_t − v)`.
    pub step_directions: Option<Vec<Vector>>,
    pub step_sizes: Vec<f64>,
    pub u_end: Vector,
    pub dist_to_body: Vec<f64>,
    /// Subgradient bound `G` of the objective or sampler that drove the run.
    pub grad_bound: f64,
    pub seed: Option<u64>,
}

impl RunTrace {
    pub fn steps(&self) -> usize {
        self.step_sizes.len()
    }

    pub fn last_iterate(&self) -> &Vector {
        self.iterates.last().expect("trace has at least one iterate")
    }
}

fn check_start(body: &ConvexBody, dim: usize, u1: &Vector, steps: usize) -> Result<()> {
    check_dim(body.dim(), dim)?;
    check_dim(body.dim(), u1.dim())?;
    if steps == 0 {
        return Err(Error::InvalidArgument("T must be at least 1".into()));
    }
    if !u1.is_finite() {
        return Err(Error::NonFinite { what: "starting point" });
    }
    if !body.contains_unchecked(u1, BOUNDARY_TOL) {
        return Err(Error::NotInBody("starting point".into()));
    }
    Ok(())
}

fn check_bound(step: usize, g: &Vector, bound: f64) -> Result<()> {
    let norm = g.norm();
    if !norm.is_finite() {
        return Err(Error::Divergence { step });
    }
    if norm > bound * (1.0 + GRAD_BOUND_SLACK) {
        return Err(Error::GradBoundViolation { step, norm, bound });
    }
    Ok(())
}

fn finite_or_diverged(v: Vec<f64>, step: usize) -> Result<Vector> {
    if v.iter().all(|c| c.is_finite()) {
        Ok(Vector::from_vec_unchecked(v))
    } else {
        Err(Error::Divergence { step })
    }
}

/// Running weighted mean, updated incrementally so that a constant sequence
/// averages to itself exactly.
fn weighted_average(iterates: &[Vector], weights: &[f64]) -> Vector {
    let mut acc = iterates[0].clone().into_inner();
    let mut total = 0.0;
    for (u, w) in iterates.iter().zip(weights) {
        total += w;
        let share = w / total;
        for (a, c) in acc.iter_mut().zip(u.iter()) {
            *a += share * (c - *a);
        }
    }
    Vector::from_vec_unchecked(acc)
}

/// Which point a projected method reports.
#[derive(Clone, Copy, PartialEq)]
enum Output {
    RunningAverage,
    LastIterate,
}

/// Shared loop of the three projected methods. `draw` supplies the objective
/// used at each step.
fn run_projected<'a>(
    algorithm: Algorithm,
    mean: &ConvexObjective,
    grad_bound: f64,
    body: &ConvexBody,
    s: &Schedule,
    u1: &Vector,
    steps: usize,
    opts: &RunOptions,
    output: Output,
    mut draw: impl FnMut() -> &'a dyn Function,
) -> Result<RunTrace> {
    check_start(body, mean.dim(), u1, steps)?;
    let mean_fn = mean.function();
    let opt = mean.optimum().map(|o| o.point.clone());
    let mut iterates = Vec::with_capacity(steps + 1);
    let mut half_steps = opts.record_half_steps.then(|| Vec::with_capacity(steps));
    let mut sampled_at_u = Vec::with_capacity(steps);
    let mut sampled_at_opt = opt.as_ref().map(|_| Vec::with_capacity(steps));
    let step_sizes = s.sizes(steps);
    let mut u = u1.clone();
    for (t, &eps) in (1..=steps).zip(&step_sizes) {
        let f = draw();
        let g = f.subgradient(&u);
        check_bound(t, &g, grad_bound)?;
        sampled_at_u.push(f.value(&u));
        if let (Some(values), Some(p)) = (sampled_at_opt.as_mut(), opt.as_ref()) {
            values.push(f.value(p));
        }
        let half = finite_or_diverged(u.iter().zip(g.iter()).map(|(a, b)| a - eps * b).collect(), t)?;
        let next = body.project_unchecked(&half);
        if let Some(h) = half_steps.as_mut() {
            h.push(half);
        }
        iterates.push(std::mem::replace(&mut u, next));
    }
    iterates.push(u);
    let u_end = match output {
        Output::RunningAverage => weighted_average(&iterates[..steps], &step_sizes),
        Output::LastIterate => iterates[steps].clone(),
    };
    let mean_values = iterates.iter().map(|x| mean_fn.value(x)).collect();
    let dist_to_body = iterates.iter().map(|x| body.distance_unchecked(x)).collect();
    Ok(RunTrace {
        algorithm,
        iterates,
        half_steps,
        mean_values,
        sampled_values_at_iterate: sampled_at_u,
        sampled_values_at_opt: sampled_at_opt,
        step_directions: None,
        step_sizes,
        u_end,
        dist_to_body,
        grad_bound,
        seed: None,
    })
}

/// Running-average projected gradient descent.
pub fn run_rapgd(
    f: &ConvexObjective,
    body: &ConvexBody,
    s: &Schedule,
    u1: &Vector,
    steps: usize,
    opts: &RunOptions,
) -> Result<RunTrace> {
    let func = f.function().as_ref();
    run_projected(Algorithm::Rapgd, f, f.grad_bound(), body, s, u1, steps, opts, Output::RunningAverage, || func)
}

/// Plain projected gradient descent; reports the last iterate.
pub fn run_ppgd(
    f: &ConvexObjective,
    body: &ConvexBody,
    s: &Schedule,
    u1: &Vector,
    steps: usize,
    opts: &RunOptions,
) -> Result<RunTrace> {
    let func = f.function().as_ref();
    run_projected(Algorithm::Ppgd, f, f.grad_bound(), body, s, u1, steps, opts, Output::LastIterate, || func)
}

/// Running-average stochastic projected gradient descent. One component is
/// drawn from `d` per step.
pub fn run_raspgd<R: Rng + ?Sized>(
    d: &StochasticObjective,
    body: &ConvexBody,
    s: &Schedule,
    u1: &Vector,
    steps: usize,
    rng: &mut R,
    opts: &RunOptions,
) -> Result<RunTrace> {
    run_projected(
        Algorithm::Raspgd,
        d.mean(),
        d.grad_bound(),
        body,
        s,
        u1,
        steps,
        opts,
        Output::RunningAverage,
        || d.sample(rng),
    )
}

/// Smoothed stochastic gradient descent on `f + 2G·ψ_C`.
///
/// Each step draws a component and then one perturbation `v` from the ball of
/// radius `eps_sm` (`v = 0` when `smooth` is false); the same `v` is used for
/// both the objective and the gauge subgradient. Iterates are not projected;
/// the reported point is the projection of `u_{T+1}`.
#[allow(clippy::too_many_arguments)]
pub fn run_ssgd<R: Rng + ?Sized>(
    d: &StochasticObjective,
    body: &ConvexBody,
    s: &Schedule,
    eps_sm: f64,
    u1: &Vector,
    steps: usize,
    smooth: bool,
    rng: &mut R,
    opts: &RunOptions,
) -> Result<RunTrace> {
    check_start(body, d.dim(), u1, steps)?;
    let noise = if smooth {
        Some(BallNoise::new(d.dim(), eps_sm)?)
    } else {
        None
    };
    let g_bound = d.grad_bound();
    let mean_fn = d.mean().function();
    let opt = d.mean().optimum().map(|o| o.point.clone());
    let n = d.dim();
    let step_sizes = s.sizes(steps);
    let mut iterates = Vec::with_capacity(steps + 1);
    let mut half_steps = opts.record_half_steps.then(|| Vec::with_capacity(steps));
    let mut sampled_at_u = Vec::with_capacity(steps);
    let mut sampled_at_opt = opt.as_ref().map(|_| Vec::with_capacity(steps));
    let mut directions = Vec::with_capacity(steps);
    let mut u = u1.clone();
    let mut y = vec![0.0; n];
    for (t, &eps) in (1..=steps).zip(&step_sizes) {
        let f = d.sample(rng);
        match &noise {
            Some(noise) => {
                let v = sample_uniform_ball(noise, rng);
                for i in 0..n {
                    y[i] = u[i] - v[i];
                }
            }
            None => y.copy_from_slice(&u),
        }
        let gf = f.subgradient(&y);
        check_bound(t, &gf, g_bound)?;
        let dir = gf.add_scaled(2.0 * g_bound, &body.gauge_subgradient_unchecked(&y));
        sampled_at_u.push(f.value(&u));
        if let (Some(values), Some(p)) = (sampled_at_opt.as_mut(), opt.as_ref()) {
            values.push(f.value(p));
        }
        let next = finite_or_diverged(u.iter().zip(dir.iter()).map(|(a, b)| a - eps * b).collect(), t)?;
        if let Some(h) = half_steps.as_mut() {
            h.push(next.clone());
        }
        directions.push(dir);
        iterates.push(std::mem::replace(&mut u, next));
    }
    iterates.push(u);
    let u_end = body.project_unchecked(&iterates[steps]);
    let mean_values = iterates.iter().map(|x| mean_fn.value(x)).collect();
    let dist_to_body = iterates.iter().map(|x| body.distance_unchecked(x)).collect();
    Ok(RunTrace {
        algorithm: Algorithm::Ssgd,
        iterates,
        half_steps,
        mean_values,
        sampled_values_at_iterate: sampled_at_u,
        sampled_values_at_opt: sampled_at_opt,
        step_directions: Some(directions),
        step_sizes,
        u_end,
        dist_to_body,
        grad_bound: g_bound,
        seed: None,
    })
}

fn check_positive(name: &str, x: f64) -> Result<()> {
    if x.is_finite() && x > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} must be positive and finite, got {x}")))
    }
}

/// Ceiling that treats values within a relative 1e-12 of an integer as that
/// integer, so exact formula values are not pushed up by rounding.
fn ceil_exact(x: f64) -> Result<u64> {
    let r = x.round();
    let c = if (x - r).abs() <= 1e-12 * r.abs().max(1.0) { r } else { x.ceil() };
    if !(c.is_finite() && c < 4.0e9) {
        return Err(Error::InvalidArgument(format!("step count overflows: ceiling {x}")));
    }
    Ok(c as u64)
}

/// `⌈3G·diam/(2ε³) + 1⌉² − 1`, or with `ε²` in the Lipschitz-gradient case.
pub fn required_steps_ssgd(g: f64, diam: f64, eps: f64, lipschitz_case: bool) -> Result<u64> {
    check_positive("G", g)?;
    check_positive("diam", diam)?;
    check_positive("eps", eps)?;
    if eps >= 1.0 {
        log::warn!("eps = {eps} is outside the small-eps regime the step formula assumes");
    }
    let power = if lipschitz_case { 2 } else { 3 };
    let k = ceil_exact(3.0 * g * diam / (2.0 * eps.powi(power)) + 1.0)?;
    Ok(k * k - 1)
}

/// `⌈(2G·diam + G²)/(4ε)⌉²`.
pub fn required_steps_raspgd(g: f64, diam: f64, eps: f64) -> Result<u64> {
    check_positive("G", g)?;
    check_positive("diam", diam)?;
    check_positive("eps", eps)?;
    let k = ceil_exact((2.0 * g * diam + g * g) / (4.0 * eps))?;
    Ok(k * k)
}
