//! Martingale reconstruction, maximal-inequality bounds, per-run inequality
//! checks, ensemble tail statistics, and rate fitting.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ConvexBody, LocalNormQuery};
use crate::objectives::{ConvexObjective, StochasticObjective};
use crate::optimizers::{Algorithm, RunTrace};
use crate::smoothing::{sample_uniform_ball, BallNoise, Moments, VectorEstimate};
use crate::vector::{check_dim, distance, dot, Vector};

/// Absolute slack for the exact per-run inequalities.
pub const CHECK_TOL: f64 = 1e-9;

/// `X_1 … X_T` and the increment bounds `c_1 … c_T`.
#[derive(Clone, Debug, PartialEq)]
pub struct MartingaleTrace {
    pub values: Vec<f64>,
    pub increment_bounds: Vec<f64>,
    /// True when the increments rely on a Monte Carlo estimate.
    pub estimated: bool,
}

impl MartingaleTrace {
    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn last(&self) -> f64 {
        self.values.last().copied().unwrap_or(0.0)
    }

    pub fn increments(&self) -> Vec<f64> {
        let mut prev = 0.0;
        self.values
            .iter()
            .map(|&x| {
                let d = x - prev;
                prev = x;
                d
            })
            .collect()
    }
}

/// `X_t = Σ_{s≤t} ε_s[(f_{s+½}(u_s) − f_{s+½}(u_opt)) − (f(u_s) − f(u_opt))]`
/// with `c_t = 2G·diam·ε_t`.
pub fn martingale_trace_raspgd(
    trace: &RunTrace,
    mean: &ConvexObjective,
    body: &ConvexBody,
) -> Result<MartingaleTrace> {
    let at_opt = trace
        .sampled_values_at_opt
        .as_ref()
        .ok_or(Error::MissingData("sampled values at the optimum"))?;
    let opt = mean.require_optimum()?;
    check_dim(mean.dim(), opt.point.dim())?;
    let steps = trace.steps();
    if trace.sampled_values_at_iterate.len() != steps || at_opt.len() != steps {
        return Err(Error::MissingData("per-step sampled values"));
    }
    let diam = body.diameter();
    let mut x = 0.0;
    let mut values = Vec::with_capacity(steps);
    let mut bounds = Vec::with_capacity(steps);
    for s in 0..steps {
        let eps = trace.step_sizes[s];
        let f_u = mean.function().value(&trace.iterates[s]);
        let sampled = trace.sampled_values_at_iterate[s] - at_opt[s];
        x += eps * (sampled - (f_u - opt.value));
        values.push(x);
        bounds.push(2.0 * trace.grad_bound * diam * eps);
    }
    Ok(MartingaleTrace {
        values,
        increment_bounds: bounds,
        estimated: false,
    })
}

/// Monte Carlo estimate of `∂g(x)` for `g = E_v[f + 2G·ψ_C](· − v)`, averaging
/// fresh (component, perturbation) pairs. `eps_sm = 0` disables the
/// perturbation.
pub fn estimate_g_subgradient<R: Rng + ?Sized>(
    d: &StochasticObjective,
    body: &ConvexBody,
    eps_sm: f64,
    x: &[f64],
    n_mc: usize,
    rng: &mut R,
) -> Result<VectorEstimate> {
    check_dim(d.dim(), x.len())?;
    check_dim(body.dim(), x.len())?;
    if n_mc == 0 {
        return Err(Error::InvalidArgument("n_mc must be at least 1".into()));
    }
    if !(eps_sm.is_finite() && eps_sm >= 0.0) {
        return Err(Error::InvalidArgument(format!("eps_sm must be nonnegative, got {eps_sm}")));
    }
    let noise = if eps_sm > 0.0 {
        Some(BallNoise::new(x.len(), eps_sm)?)
    } else {
        None
    };
    let n = x.len();
    let coef = 2.0 * d.grad_bound();
    let mut moments = vec![Moments::default(); n];
    let mut y = vec![0.0; n];
    for _ in 0..n_mc {
        let f = d.sample(rng);
        match &noise {
            Some(noise) => {
                let v = sample_uniform_ball(noise, rng);
                for i in 0..n {
                    y[i] = x[i] - v[i];
                }
            }
            None => y.copy_from_slice(x),
        }
        let g = f.subgradient(&y).add_scaled(coef, &body.gauge_subgradient_unchecked(&y));
        for (m, gi) in moments.iter_mut().zip(g.iter()) {
            m.push(*gi);
        }
    }
    let est: Vec<_> = moments.iter().map(Moments::estimate).collect();
    Ok(VectorEstimate {
        mean: Vector::from_vec_unchecked(est.iter().map(|e| e.mean).collect()),
        stderr: est.iter().map(|e| e.stderr).collect(),
    })
}

/// `X_t = −Σ_{s≤t} ε_s[⟨∂g(u_s), ∂g_{s+½}(u_s)⟩ − ‖∂g(u_s)‖²]` with
/// `c_t = 18G²ε_t`. `∂g_{s+½}(u_s)` is the update direction recorded by the
/// run; `∂g(u_s)` is estimated with `n_mc` fresh draws per step, so the result
/// is flagged as an estimate.
pub fn martingale_trace_ssgd<R: Rng + ?Sized>(
    trace: &RunTrace,
    d: &StochasticObjective,
    body: &ConvexBody,
    eps_sm: f64,
    n_mc: usize,
    rng: &mut R,
) -> Result<MartingaleTrace> {
    let directions = trace
        .step_directions
        .as_ref()
        .ok_or(Error::MissingData("per-step update directions"))?;
    let steps = trace.steps();
    if directions.len() != steps {
        return Err(Error::MissingData("per-step update directions"));
    }
    let g = d.grad_bound();
    let mut x = 0.0;
    let mut values = Vec::with_capacity(steps);
    let mut bounds = Vec::with_capacity(steps);
    for s in 0..steps {
        let eps = trace.step_sizes[s];
        let est = estimate_g_subgradient(d, body, eps_sm, &trace.iterates[s], n_mc, rng)?;
        let mean = &est.mean;
        x -= eps * (dot(mean, &directions[s]) - dot(mean, mean));
        values.push(x);
        bounds.push(18.0 * g * g * eps);
    }
    Ok(MartingaleTrace {
        values,
        increment_bounds: bounds,
        estimated: true,
    })
}

/// `min(1, 2·exp(−a² / (2Σc_t²)))`, the maximal-inequality tail bound for a
/// martingale with increments bounded by `c_t`.
pub fn hoeffding_doob_bound(eps_prob: f64, increment_bounds: &[f64]) -> Result<f64> {
    if !(eps_prob.is_finite() && eps_prob > 0.0) {
        return Err(Error::InvalidArgument(format!("threshold must be positive, got {eps_prob}")));
    }
    if increment_bounds.is_empty() {
        return Err(Error::InvalidArgument("no increment bounds".into()));
    }
    if increment_bounds.iter().any(|c| !(c.is_finite() && *c > 0.0)) {
        return Err(Error::InvalidArgument("increment bounds must be positive".into()));
    }
    let s: f64 = increment_bounds.iter().map(|c| c * c).sum();
    Ok((2.0 * (-eps_prob * eps_prob / (2.0 * s)).exp()).min(1.0))
}

/// The RASPGD tail bound with the exponent denominator `4G²·diam²·Σε_t²`
/// instead of the generic `2Σc_t² = 8G²·diam²·Σε_t²`. Always at most the
/// generic value; reported alongside it.
pub fn hoeffding_bound_raspgd_display(eps_prob: f64, grad_bound: f64, diam: f64, step_sizes: &[f64]) -> Result<f64> {
    if !(eps_prob.is_finite() && eps_prob > 0.0) {
        return Err(Error::InvalidArgument(format!("threshold must be positive, got {eps_prob}")));
    }
    if step_sizes.is_empty() {
        return Err(Error::InvalidArgument("no step sizes".into()));
    }
    let s: f64 = step_sizes.iter().map(|e| e * e).sum();
    let denom = 4.0 * grad_bound * grad_bound * diam * diam * s;
    Ok((2.0 * (-eps_prob * eps_prob / denom).exp()).min(1.0))
}

/// `2G·diam·(ln T + 1)`.
pub fn eps_prob_raspgd(grad_bound: f64, diam: f64, steps: usize) -> f64 {
    2.0 * grad_bound * diam * ((steps as f64).ln() + 1.0)
}

/// `64G²·ε_sm·ln(1/ε_sm)`.
pub fn eps_prob_ssgd(grad_bound: f64, eps_sm: f64) -> f64 {
    64.0 * grad_bound * grad_bound * eps_sm * (1.0 / eps_sm).ln()
}

/// Per-trial outcomes of an ensemble.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    /// `f(u_end) − f(u_opt)` per trial.
    pub gaps: Vec<f64>,
    /// `max_t |X_t|` per trial, when the martingale was reconstructed.
    pub max_abs_x: Vec<f64>,
    pub trial_count: usize,
    /// `(threshold, fraction of gaps at or above it)`.
    pub threshold_hits: Vec<(f64, f64)>,
}

impl EnsembleSummary {
    pub fn new(gaps: Vec<f64>, max_abs_x: Vec<f64>, thresholds: &[f64]) -> Self {
        let trial_count = gaps.len();
        let threshold_hits = thresholds
            .iter()
            .map(|&th| (th, fraction_above(&gaps, th)))
            .collect();
        EnsembleSummary {
            gaps,
            max_abs_x,
            trial_count,
            threshold_hits,
        }
    }

    pub fn median_gap(&self) -> Option<f64> {
        median(&self.gaps)
    }
}

fn fraction_above(values: &[f64], threshold: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().filter(|&&v| v >= threshold).count() as f64 / values.len() as f64
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailField {
    Gaps,
    #[serde(rename = "max_abs_X")]
    MaxAbsX,
}

impl FromStr for TailField {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaps" => Ok(TailField::Gaps),
            "max_abs_X" | "max_abs_x" => Ok(TailField::MaxAbsX),
            other => Err(Error::InvalidArgument(format!("unknown summary field `{other}`"))),
        }
    }
}

impl fmt::Display for TailField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TailField::Gaps => "gaps",
            TailField::MaxAbsX => "max_abs_X",
        })
    }
}

/// An empirical probability with its Wilson 95% interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailEstimate {
    pub fraction: f64,
    pub lower: f64,
    pub upper: f64,
}

pub fn wilson_interval(hits: usize, n: usize) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let z = 1.959_963_984_540_054;
    let nf = n as f64;
    let p = hits as f64 / nf;
    let z2 = z * z;
    let center = (p + z2 / (2.0 * nf)) / (1.0 + z2 / nf);
    let half = z / (1.0 + z2 / nf) * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt();
    let lower = if hits == 0 { 0.0 } else { (center - half).max(0.0) };
    let upper = if hits == n { 1.0 } else { (center + half).min(1.0) };
    (lower, upper)
}

/// Fraction of trials whose `field` value is at least `threshold`, matching
/// the `P(· ≥ a)` form of the tail bounds.
pub fn empirical_tail(summary: &EnsembleSummary, threshold: f64, field: TailField) -> Result<TailEstimate> {
    let values = match field {
        TailField::Gaps => &summary.gaps,
        TailField::MaxAbsX => &summary.max_abs_x,
    };
    if summary.trial_count == 0 {
        return Err(Error::InvalidArgument("summary has no trials".into()));
    }
    if values.is_empty() {
        return Err(Error::MissingData("summary field has no values"));
    }
    let hits = values.iter().filter(|&&v| v >= threshold).count();
    let (lower, upper) = wilson_interval(hits, values.len());
    Ok(TailEstimate {
        fraction: hits as f64 / values.len() as f64,
        lower,
        upper,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    /// Indices of points dropped for having a nonpositive gap.
    pub excluded: Vec<usize>,
}

/// Least-squares slope of `ln gap` against `ln T`.
pub fn fit_rate(steps: &[u64], gaps: &[f64]) -> Result<RateFit> {
    if steps.len() != gaps.len() {
        return Err(Error::InvalidArgument("T values and gaps differ in length".into()));
    }
    let mut excluded = Vec::new();
    let mut pts = Vec::new();
    for (i, (&t, &g)) in steps.iter().zip(gaps).enumerate() {
        if g > 0.0 && g.is_finite() && t > 0 {
            pts.push(((t as f64).ln(), g.ln()));
        } else {
            log::warn!("excluding point {i} (T = {t}, gap = {g}) from the rate fit");
            excluded.push(i);
        }
    }
    if pts.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "rate fit needs at least 3 positive gaps, got {}",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("rate fit needs distinct T values".into()));
    }
    let slope = sxy / sxx;
    Ok(RateFit {
        slope,
        intercept: my - slope * mx,
        excluded,
    })
}

/// Two sides of an inequality `lhs ≤ rhs` and whether it held.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

impl BoundCheck {
    fn new(lhs: f64, rhs: f64) -> Self {
        BoundCheck {
            lhs,
            rhs,
            holds: lhs <= rhs + CHECK_TOL,
        }
    }
}

/// `f(u_end) − f(u_opt)`.
pub fn gap(trace: &RunTrace, f: &ConvexObjective) -> Result<f64> {
    let opt = f.require_optimum()?;
    Ok(f.value(&trace.u_end)? - opt.value)
}

fn regret_radius(trace: &RunTrace, opt: &Vector, g: f64) -> f64 {
    let d0 = distance(&trace.iterates[0], opt);
    let sq: f64 = trace.step_sizes.iter().map(|e| e * e).sum();
    d0 * d0 + g * g * sq
}

/// `f(u_end) − f(u_opt) ≤ (‖u₁ − u_opt‖² + G²Σε_t²) / (2Σε_t)`.
pub fn check_rapgd_bound(trace: &RunTrace, f: &ConvexObjective) -> Result<BoundCheck> {
    let opt = f.require_optimum()?;
    let lhs = f.value(&trace.u_end)? - opt.value;
    let total: f64 = trace.step_sizes.iter().sum();
    let rhs = regret_radius(trace, &opt.point, f.grad_bound()) / (2.0 * total);
    Ok(BoundCheck::new(lhs, rhs))
}

/// `Σε_t(f(u_t) − f(u_opt)) ≤ (‖u₁ − u_opt‖² + G²Σε_t²)/2 + |X_T|`, with `G`
/// the sampler's bound.
pub fn check_raspgd_per_run(trace: &RunTrace, mean: &ConvexObjective, martingale: &MartingaleTrace) -> Result<BoundCheck> {
    let opt = mean.require_optimum()?;
    let lhs: f64 = trace
        .step_sizes
        .iter()
        .zip(&trace.iterates)
        .map(|(e, u)| e * (mean.function().value(u) - opt.value))
        .sum();
    let rhs = regret_radius(trace, &opt.point, trace.grad_bound) / 2.0 + martingale.last().abs();
    Ok(BoundCheck::new(lhs, rhs))
}

/// Largest increase `f(u_{t+1}) − f(u_t)` along the trace; the sequence is
/// non-increasing within `tol` when this is at most `tol`.
pub fn max_increase(trace: &RunTrace) -> f64 {
    trace
        .mean_values
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::NEG_INFINITY, f64::max)
}

/// `dist(u_{T+1}, C) ≤ ((f + 2G·ψ)(u_{T+1}) − f(u_opt)) / G`.
pub fn check_ssgd_distance(trace: &RunTrace, mean: &ConvexObjective, body: &ConvexBody) -> Result<BoundCheck> {
    let opt = mean.require_optimum()?;
    let last = trace.last_iterate();
    let g = trace.grad_bound;
    let dist = body.distance_to_set(last)?;
    let penalized_gap = mean.value(last)? + 2.0 * g * dist - opt.value;
    Ok(BoundCheck::new(dist, penalized_gap / g))
}

/// `‖u_{t+1} − u_t‖ ≤ 3G·ε_t` for every step; returns the largest ratio.
pub fn max_ssgd_step_ratio(trace: &RunTrace) -> f64 {
    (0..trace.steps())
        .map(|t| distance(&trace.iterates[t + 1], &trace.iterates[t]) / (3.0 * trace.grad_bound * trace.step_sizes[t]))
        .fold(0.0, f64::max)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DichotomyBranch {
    /// `f(u_end) − f(u_opt) ≤ eps_err`.
    ErrorSmall,
    /// Some step had a local norm of the gradient at most the threshold.
    LocalNormSmall,
    /// Neither held, judged with lower local-norm estimates.
    Violation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DichotomyReport {
    pub branch: DichotomyBranch,
    pub gap: f64,
    /// `√(2(f(u₁) − f(u_opt) − eps_err) / (γΣε_t))`, clamped at zero.
    pub threshold: f64,
    /// Smallest local-norm estimate of the descent direction `−∂f(u_t)` at
    /// scale `ε_t‖∂f(u_t)‖` over `t = 1..=T`, and the step attaining it.
    pub min_local_norm: f64,
    pub t_star: usize,
    /// Whether the local-norm condition held at some step, regardless of the
    /// branch reported.
    pub local_norm_holds: bool,
    /// Local norms are lower estimates, so a violation is conditional on them.
    pub estimate_conditional: bool,
}

/// Reports which alternative of the PPGD dichotomy held. The error branch is
/// tested first; the local-norm scan is always performed and reported.
pub fn check_ppgd_dichotomy(
    trace: &RunTrace,
    f: &ConvexObjective,
    body: &ConvexBody,
    eps_err: f64,
    gamma: f64,
    ln_samples: usize,
) -> Result<DichotomyReport> {
    let opt = f.require_optimum()?;
    let lipschitz = f
        .lipschitz_grad()
        .ok_or_else(|| Error::InvalidArgument("dichotomy check needs a gradient Lipschitz constant".into()))?;
    if !(gamma > 0.0 && eps_err > 0.0) {
        return Err(Error::InvalidArgument("gamma and eps_err must be positive".into()));
    }
    if let Some((t, e)) = trace
        .step_sizes
        .iter()
        .enumerate()
        .find(|(_, e)| 1.0 - *e * lipschitz < gamma)
    {
        return Err(Error::InvalidArgument(format!(
            "schedule violates 1 - eps_t L >= gamma at step {} (eps_t = {e})",
            t + 1
        )));
    }
    let gap = f.value(&trace.u_end)? - opt.value;
    let total: f64 = trace.step_sizes.iter().sum();
    let f1 = f.value(&trace.iterates[0])?;
    let threshold = (2.0 * (f1 - opt.value - eps_err) / (gamma * total)).max(0.0).sqrt();
    let mut min_local_norm = f64::INFINITY;
    let mut t_star = 1;
    for t in 0..trace.steps() {
        let u = &trace.iterates[t];
        // the step moves along −∂f, so that is the direction whose local
        // norm controls the decrease (and it vanishes at a minimizer)
        let descent = f.subgradient(u)?.scaled(-1.0);
        let r = trace.step_sizes[t] * descent.norm();
        let ln = if r > 0.0 {
            body.local_norm(&LocalNormQuery {
                p: u.clone(),
                u: descent,
                r,
                samples: ln_samples,
            })?
        } else {
            0.0
        };
        if ln < min_local_norm {
            min_local_norm = ln;
            t_star = t + 1;
        }
    }
    let local_norm_holds = min_local_norm <= threshold;
    let branch = if gap <= eps_err {
        DichotomyBranch::ErrorSmall
    } else if local_norm_holds {
        DichotomyBranch::LocalNormSmall
    } else {
        DichotomyBranch::Violation
    };
    Ok(DichotomyReport {
        branch,
        gap,
        threshold,
        min_local_norm,
        t_star,
        local_norm_holds,
        estimate_conditional: branch == DichotomyBranch::Violation,
    })
}

/// Checks a trace against the invariants of its algorithm. Returns named
/// results; stochastic checks that need a martingale take it as an argument.
pub fn per_run_checks(
    trace: &RunTrace,
    mean: &ConvexObjective,
    body: &ConvexBody,
    martingale: Option<&MartingaleTrace>,
) -> Result<Vec<(&'static str, bool)>> {
    let mut out = Vec::new();
    let known = mean.optimum().is_some();
    match trace.algorithm {
        Algorithm::Rapgd | Algorithm::Ppgd | Algorithm::Raspgd => {
            let feasible = trace.dist_to_body.iter().all(|d| *d <= CHECK_TOL);
            out.push(("iterates_in_body", feasible));
        }
        Algorithm::Ssgd => {}
    }
    match trace.algorithm {
        Algorithm::Rapgd if known => out.push(("rapgd_bound", check_rapgd_bound(trace, mean)?.holds)),
        Algorithm::Ppgd => {
            if let Some(l) = mean.lipschitz_grad() {
                if trace.step_sizes.iter().all(|e| e * l <= 1.0) {
                    out.push(("ppgd_monotone", max_increase(trace) <= 1e-12));
                }
            }
        }
        Algorithm::Raspgd if known => {
            if let Some(m) = martingale {
                out.push(("raspgd_per_run", check_raspgd_per_run(trace, mean, m)?.holds));
                let inc_ok = m
                    .increments()
                    .iter()
                    .zip(&m.increment_bounds)
                    .all(|(d, c)| d.abs() <= c + CHECK_TOL);
                out.push(("martingale_increments", inc_ok));
            }
        }
        Algorithm::Ssgd => {
            out.push(("ssgd_step_bound", max_ssgd_step_ratio(trace) <= 1.0 + 1e-9));
            if known {
                out.push(("ssgd_distance", check_ssgd_distance(trace, mean, body)?.holds));
            }
        }
        _ => {}
    }
    Ok(out)
}
