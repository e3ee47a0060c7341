//! JSON-configured experiments: problem construction, seeded trial
//! ensembles, trace CSVs, and the summary report.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    self, empirical_tail, eps_prob_raspgd, eps_prob_ssgd, fit_rate, hoeffding_bound_raspgd_display,
    hoeffding_doob_bound, martingale_trace_raspgd, martingale_trace_ssgd, median, per_run_checks, wilson_interval,
    EnsembleSummary, TailField,
};
use crate::error::{Error, Result};
use crate::geometry::{ConvexBody, BOUNDARY_TOL};
use crate::objectives::{
    make_finite_dataset_regression, make_l1, make_quadratic, make_stochastic_l1, ConvexObjective,
    StochasticObjective,
};
use crate::optimizers::{
    required_steps_raspgd, required_steps_ssgd, run_ppgd, run_rapgd, run_raspgd, run_ssgd, Algorithm,
    RunOptions, RunTrace, Schedule,
};
use crate::rng::{mix64, rng_from_seed, trial_seed};
use crate::vector::{distance, Vector};

pub const DEFAULT_N_MC: usize = 10_000;

/// Test problem selected by name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemSpec {
    Quadratic {
        a: Vector,
    },
    L1 {
        a: Vector,
    },
    StochasticL1 {
        a: Vector,
    },
    DatasetRegression {
        #[serde(rename = "X")]
        x: Vec<Vector>,
        y: Vec<f64>,
    },
}

impl ProblemSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ProblemSpec::Quadratic { .. } => "quadratic",
            ProblemSpec::L1 { .. } => "l1",
            ProblemSpec::StochasticL1 { .. } => "stochastic_l1",
            ProblemSpec::DatasetRegression { .. } => "dataset_regression",
        }
    }

    /// Builds the sampler; deterministic problems yield a zero-variance one.
    pub fn build(&self, body: &ConvexBody) -> Result<StochasticObjective> {
        let wrap = |e: Error| match e {
            Error::DimensionMismatch { expected, found } => Error::config(
                "problem",
                format!("dimension {found} does not match body dimension {expected}"),
            ),
            other => Error::config("problem", other.to_string()),
        };
        match self {
            ProblemSpec::Quadratic { a } => make_quadratic(a.clone(), body).map(StochasticObjective::deterministic),
            ProblemSpec::L1 { a } => make_l1(a.clone(), body).map(StochasticObjective::deterministic),
            ProblemSpec::StochasticL1 { a } => make_stochastic_l1(a.clone(), body),
            ProblemSpec::DatasetRegression { x, y } => make_finite_dataset_regression(x.clone(), y.clone(), body),
        }
        .map_err(wrap)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StepsSpec {
    Fixed(u64),
    Auto(String),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    pub trace_dir: Option<PathBuf>,
    pub summary_path: Option<PathBuf>,
}

/// A desk-scale acceptance limit on the fraction of gaps at or above a threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GapTailLimit {
    pub threshold: f64,
    pub max_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateSweep {
    #[serde(rename = "T")]
    pub steps: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    pub problem: ProblemSpec,
    pub body: ConvexBody,
    #[serde(default)]
    pub schedule: Option<Schedule>,
    #[serde(rename = "T")]
    pub steps: StepsSpec,
    #[serde(default)]
    pub eps: Option<f64>,
    #[serde(default)]
    pub eps_sm: Option<f64>,
    #[serde(default = "default_true")]
    pub smooth: bool,
    #[serde(default = "default_one")]
    pub trials: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub u1: Option<Vector>,
    #[serde(default)]
    pub outputs: Outputs,
    #[serde(default)]
    pub record_half_steps: bool,
    #[serde(default = "default_n_mc")]
    pub n_mc: usize,
    /// Thresholds `a` for the martingale tail `P(max_t |X_t| ≥ a)`. Defaults
    /// to `{0.5, 1, 2}·eps_prob` when the martingale is reconstructed.
    #[serde(default)]
    pub thresholds: Option<Vec<f64>>,
    /// Thresholds for the gap tail `P(gap ≥ a)`.
    #[serde(default)]
    pub gap_thresholds: Vec<f64>,
    #[serde(default)]
    pub gap_tail_limit: Option<GapTailLimit>,
    /// Reconstruct the martingale per trial (default: on for raspgd, off for
    /// ssgd, where it needs `n_mc` draws per step).
    #[serde(default)]
    pub martingale: Option<bool>,
    #[serde(default)]
    pub rate_sweep: Option<RateSweep>,
}

fn default_true() -> bool {
    true
}
fn default_one() -> usize {
    1
}
fn default_n_mc() -> usize {
    DEFAULT_N_MC
}

/// A validated config with its problem built and `T` resolved.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub body: ConvexBody,
    pub sampler: StochasticObjective,
    pub schedule: Schedule,
    pub steps: u64,
    pub steps_auto: bool,
    pub u1: Vector,
    pub eps_prob: Option<f64>,
    pub martingale: bool,
}

impl Experiment {
    pub fn objective(&self) -> &ConvexObjective {
        self.sampler.mean()
    }

    pub fn grad_bound(&self) -> f64 {
        match self.config.algorithm {
            Algorithm::Rapgd | Algorithm::Ppgd => self.objective().grad_bound(),
            Algorithm::Raspgd | Algorithm::Ssgd => self.sampler.grad_bound(),
        }
    }

    /// Martingale increment bounds `c_t` for this schedule.
    pub fn increment_bounds(&self, steps: usize) -> Vec<f64> {
        let g = self.grad_bound();
        let diam = self.body.diameter();
        self.schedule
            .sizes(steps)
            .into_iter()
            .map(|e| match self.config.algorithm {
                Algorithm::Ssgd => 18.0 * g * g * e,
                _ => 2.0 * g * diam * e,
            })
            .collect()
    }
}

fn positive(field: &str, x: Option<f64>) -> Result<Option<f64>> {
    match x {
        Some(v) if !(v.is_finite() && v > 0.0) => Err(Error::config(field, format!("must be positive, got {v}"))),
        other => Ok(other),
    }
}

/// Parses and validates a JSON config, filling defaults and resolving
/// `"T": "auto"` from the step-count formulas.
pub fn parse_config(text: &str) -> Result<Experiment> {
    let config: ExperimentConfig = serde_json::from_str(text)?;
    prepare(config)
}

pub fn prepare(config: ExperimentConfig) -> Result<Experiment> {
    let alg = config.algorithm;
    let eps = positive("eps", config.eps)?;
    let eps_sm = positive("eps_sm", config.eps_sm)?;
    if config.trials == 0 {
        return Err(Error::config("trials", "must be at least 1"));
    }
    if config.n_mc == 0 {
        return Err(Error::config("n_mc", "must be at least 1"));
    }
    if alg == Algorithm::Ssgd && config.smooth && eps_sm.is_none() {
        return Err(Error::config("eps_sm", "ssgd with smooth = true requires eps_sm"));
    }
    let body = config.body.clone();
    let sampler = config.problem.build(&body)?;
    let u1 = match &config.u1 {
        Some(u) => {
            if u.dim() != body.dim() {
                return Err(Error::config("u1", format!("dimension {} does not match body dimension {}", u.dim(), body.dim())));
            }
            if !body.membership(u, BOUNDARY_TOL)? {
                return Err(Error::config("u1", "starting point is not in the body"));
            }
            u.clone()
        }
        None => body.reference_point(),
    };
    let schedule = match config.schedule {
        Some(s) => s,
        None => match alg {
            Algorithm::Rapgd | Algorithm::Raspgd => Schedule::InverseSqrt(1.0),
            Algorithm::Ssgd if config.smooth => Schedule::InverseSqrt(eps_sm.unwrap_or(1.0)),
            Algorithm::Ssgd => Schedule::InverseSqrt(1.0),
            Algorithm::Ppgd => {
                let l = sampler.mean().lipschitz_grad().filter(|l| *l > 0.0).ok_or_else(|| {
                    Error::config("schedule", "ppgd needs an explicit schedule for objectives without a gradient Lipschitz constant")
                })?;
                Schedule::Constant(1.0 / (2.0 * l))
            }
        },
    };
    let g = match alg {
        Algorithm::Rapgd | Algorithm::Ppgd => sampler.mean().grad_bound(),
        _ => sampler.grad_bound(),
    };
    let diam = body.diameter();
    let (steps, steps_auto) = match &config.steps {
        StepsSpec::Fixed(0) => return Err(Error::config("T", "must be at least 1")),
        StepsSpec::Fixed(t) => (*t, false),
        StepsSpec::Auto(s) if s == "auto" => {
            let eps = eps.ok_or_else(|| Error::config("eps", "\"T\": \"auto\" requires eps"))?;
            let t = match alg {
                Algorithm::Raspgd => required_steps_raspgd(g, diam, eps)?,
                Algorithm::Ssgd => required_steps_ssgd(g, diam, eps, !config.smooth)?,
                _ => return Err(Error::config("T", "\"auto\" is only defined for raspgd and ssgd")),
            };
            (t, true)
        }
        StepsSpec::Auto(other) => {
            return Err(Error::config("T", format!("expected a positive integer or \"auto\", got \"{other}\"")))
        }
    };
    let eps_prob = match alg {
        Algorithm::Raspgd => Some(eps_prob_raspgd(g, diam, steps as usize)),
        Algorithm::Ssgd => eps_sm.filter(|e| *e < 1.0).map(|e| eps_prob_ssgd(g, e)),
        _ => None,
    };
    let martingale = config.martingale.unwrap_or(alg == Algorithm::Raspgd);
    if martingale && !alg.is_stochastic() {
        return Err(Error::config("martingale", "only raspgd and ssgd runs define a martingale"));
    }
    if let Some(limit) = &config.gap_tail_limit {
        if !(0.0..=1.0).contains(&limit.max_fraction) {
            return Err(Error::config("gap_tail_limit", "max_fraction must lie in [0, 1]"));
        }
    }
    if let Some(sweep) = &config.rate_sweep {
        if sweep.steps.len() < 3 || sweep.steps.contains(&0) {
            return Err(Error::config("rate_sweep", "needs at least 3 positive T values"));
        }
    }
    Ok(Experiment {
        config,
        body,
        sampler,
        schedule,
        steps,
        steps_auto,
        u1,
        eps_prob,
        martingale,
    })
}

/// Outcome of one trial.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialOutcome {
    pub index: usize,
    pub seed: u64,
    pub gap: Option<f64>,
    pub max_abs_x: Option<f64>,
    pub checks: Vec<(&'static str, bool)>,
    pub error: Option<String>,
}

/// Runs one trial with its own seed and returns the trace.
pub fn run_trial(exp: &Experiment, steps: u64, index: usize) -> (u64, Result<RunTrace>) {
    let seed = trial_seed(exp.config.master_seed, index as u64);
    let mut rng = rng_from_seed(seed);
    let opts = RunOptions {
        record_half_steps: exp.config.record_half_steps,
    };
    let steps = steps as usize;
    let f = exp.objective();
    let trace = match exp.config.algorithm {
        Algorithm::Rapgd => run_rapgd(f, &exp.body, &exp.schedule, &exp.u1, steps, &opts),
        Algorithm::Ppgd => run_ppgd(f, &exp.body, &exp.schedule, &exp.u1, steps, &opts),
        Algorithm::Raspgd => run_raspgd(&exp.sampler, &exp.body, &exp.schedule, &exp.u1, steps, &mut rng, &opts),
        Algorithm::Ssgd => run_ssgd(
            &exp.sampler,
            &exp.body,
            &exp.schedule,
            exp.config.eps_sm.unwrap_or(0.0),
            &exp.u1,
            steps,
            exp.config.smooth,
            &mut rng,
            &opts,
        ),
    };
    (
        seed,
        trace.map(|mut t| {
            t.seed = Some(seed);
            t
        }),
    )
}

fn evaluate_trial(exp: &Experiment, index: usize, seed: u64, trace: &RunTrace) -> Result<TrialOutcome> {
    let f = exp.objective();
    let gap = match f.optimum() {
        Some(_) => Some(analysis::gap(trace, f)?),
        None => None,
    };
    let martingale = if exp.martingale {
        Some(match exp.config.algorithm {
            Algorithm::Raspgd => martingale_trace_raspgd(trace, f, &exp.body)?,
            _ => {
                // independent stream for the estimator, so the run itself is
                // unchanged by whether the martingale is reconstructed
                let mut rng = rng_from_seed(mix64(seed ^ 0x6d61_7274_696e_6761));
                martingale_trace_ssgd(
                    trace,
                    &exp.sampler,
                    &exp.body,
                    if exp.config.smooth { exp.config.eps_sm.unwrap_or(0.0) } else { 0.0 },
                    exp.config.n_mc,
                    &mut rng,
                )?
            }
        })
    } else {
        None
    };
    let checks = per_run_checks(trace, f, &exp.body, martingale.as_ref())?;
    Ok(TrialOutcome {
        index,
        seed,
        gap,
        max_abs_x: martingale.map(|m| m.max_abs()),
        checks,
        error: None,
    })
}

fn failed_trial(index: usize, seed: u64, e: Error) -> TrialOutcome {
    TrialOutcome {
        index,
        seed,
        gap: None,
        max_abs_x: None,
        checks: Vec::new(),
        error: Some(e.to_string()),
    }
}

/// Runs all trials at `steps`, writing traces into `trace_dir` if given.
/// Results come back in trial order regardless of scheduling.
pub fn run_ensemble(exp: &Experiment, steps: u64, trace_dir: Option<&Path>) -> Result<Vec<TrialOutcome>> {
    (0..exp.config.trials)
        .into_par_iter()
        .map(|i| {
            let (seed, trace) = run_trial(exp, steps, i);
            let trace = match trace {
                Ok(t) => t,
                Err(e) => {
                    log::warn!("trial {i} failed: {e}");
                    return Ok(failed_trial(i, seed, e));
                }
            };
            if let Some(dir) = trace_dir {
                write_trace_csv(&trace, exp.objective(), &dir.join(format!("trial_{i:05}.csv")))?;
            }
            Ok(evaluate_trial(exp, i, seed, &trace).unwrap_or_else(|e| failed_trial(i, seed, e)))
        })
        .collect()
}

/// Writes one trace as CSV with 17 significant digits per float. Row `T + 1`
/// carries the final iterate; columns without a value are left empty.
pub fn write_trace_csv(trace: &RunTrace, mean: &ConvexObjective, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "t,eps_t,f_u_t,dist_to_body,sampled_value_at_u,sampled_value_at_opt")?;
    let known = mean.optimum().is_some();
    let steps = trace.steps();
    for t in 0..=steps {
        let eps = trace.step_sizes.get(t).map(|e| fmt_f64(*e)).unwrap_or_default();
        let at_u = trace.sampled_values_at_iterate.get(t).map(|v| fmt_f64(*v)).unwrap_or_default();
        let at_opt = trace
            .sampled_values_at_opt
            .as_ref()
            .filter(|_| known)
            .and_then(|v| v.get(t))
            .map(|v| fmt_f64(*v))
            .unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{},{},{}",
            t + 1,
            eps,
            fmt_f64(trace.mean_values[t]),
            fmt_f64(trace.dist_to_body[t]),
            at_u,
            at_opt
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckTally {
    pub passed: usize,
    pub failed: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailReport {
    pub threshold: f64,
    pub fraction: f64,
    pub wilson_lower: f64,
    pub wilson_upper: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailedTrial {
    pub trial: usize,
    pub error: String,
}

/// The summary JSON. Serialized through a sorted map, so keys appear in
/// lexicographic order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub algorithm: Algorithm,
    pub problem: String,
    pub body: String,
    #[serde(rename = "T")]
    pub steps: u64,
    #[serde(rename = "T_auto")]
    pub steps_auto: bool,
    pub trials: usize,
    pub master_seed: u64,
    pub eps: Option<f64>,
    pub eps_sm: Option<f64>,
    #[serde(rename = "G")]
    pub grad_bound: f64,
    pub diam: f64,
    pub eps_prob: Option<f64>,
    /// Thresholds for `P(max_t |X_t| ≥ a)`.
    pub thresholds: Vec<f64>,
    pub empirical_tails: Vec<f64>,
    pub empirical_tail_intervals: Vec<[f64; 2]>,
    pub hoeffding_bounds: Vec<f64>,
    /// RASPGD only: the bound with the `4G²·diam²·Σε_t²` denominator.
    pub hoeffding_bounds_display: Vec<f64>,
    pub martingale_estimated: bool,
    pub gap_tails: Vec<TailReport>,
    pub median_gap: Option<f64>,
    pub max_gap: Option<f64>,
    pub rate_sweep_t: Vec<u64>,
    pub rate_sweep_median_gaps: Vec<f64>,
    pub rate_slope: Option<f64>,
    pub checks: BTreeMap<String, CheckTally>,
    pub all_checks_passed: bool,
    pub failed_trials: Vec<FailedTrial>,
}

/// Everything an experiment produced.
#[derive(Clone, Debug)]
pub struct ExperimentReport {
    pub summary: ExperimentSummary,
    pub ensemble: EnsembleSummary,
    pub outcomes: Vec<TrialOutcome>,
}

/// Runs the experiment. Trace CSVs go to `outputs.trace_dir` and the summary
/// to `outputs.summary_path`, both resolved against `out_dir`; either is
/// skipped when unset.
pub fn run_experiment(exp: &Experiment, out_dir: Option<&Path>) -> Result<ExperimentReport> {
    let base = out_dir.unwrap_or_else(|| Path::new("."));
    let trace_dir = exp.config.outputs.trace_dir.as_ref().map(|d| base.join(d));
    if let Some(dir) = &trace_dir {
        fs::create_dir_all(dir)?;
    }
    let outcomes = run_ensemble(exp, exp.steps, trace_dir.as_deref())?;
    let report = summarize(exp, outcomes)?;
    if let Some(path) = &exp.config.outputs.summary_path {
        write_results(&report.summary, &base.join(path))?;
    }
    Ok(report)
}

/// Runs `run_experiment` on a dedicated pool of `threads` workers.
pub fn run_experiment_with_threads(exp: &Experiment, out_dir: Option<&Path>, threads: usize) -> Result<ExperimentReport> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot build worker pool: {e}")))?;
    pool.install(|| run_experiment(exp, out_dir))
}

fn summarize(exp: &Experiment, outcomes: Vec<TrialOutcome>) -> Result<ExperimentReport> {
    let cfg = &exp.config;
    let gaps: Vec<f64> = outcomes.iter().filter_map(|o| o.gap).collect();
    let max_abs_x: Vec<f64> = outcomes.iter().filter_map(|o| o.max_abs_x).collect();
    let ensemble = EnsembleSummary::new(gaps.clone(), max_abs_x.clone(), &cfg.gap_thresholds);

    let mut checks: BTreeMap<String, CheckTally> = BTreeMap::new();
    let mut tally = |name: &str, ok: bool| {
        let e = checks.entry(name.to_string()).or_default();
        if ok {
            e.passed += 1;
        } else {
            e.failed += 1;
        }
    };
    for o in &outcomes {
        tally("trial_completed", o.error.is_none());
        for (name, ok) in &o.checks {
            tally(name, *ok);
        }
    }

    let thresholds: Vec<f64> = match (&cfg.thresholds, exp.eps_prob) {
        (Some(t), _) => t.clone(),
        (None, Some(p)) if exp.martingale => vec![0.5 * p, p, 2.0 * p],
        _ => Vec::new(),
    };
    let mut empirical_tails = Vec::new();
    let mut intervals = Vec::new();
    let mut hoeffding_bounds = Vec::new();
    let mut display = Vec::new();
    if exp.martingale && !max_abs_x.is_empty() {
        let c = exp.increment_bounds(exp.steps as usize);
        let sizes = exp.schedule.sizes(exp.steps as usize);
        for &a in &thresholds {
            let tail = empirical_tail(&ensemble, a, TailField::MaxAbsX)?;
            let bound = hoeffding_doob_bound(a, &c)?;
            empirical_tails.push(tail.fraction);
            intervals.push([tail.lower, tail.upper]);
            hoeffding_bounds.push(bound);
            let mut slack_ok = tail.lower <= bound;
            if cfg.algorithm == Algorithm::Raspgd {
                let d = hoeffding_bound_raspgd_display(a, exp.grad_bound(), exp.body.diameter(), &sizes)?;
                display.push(d);
                slack_ok &= tail.lower <= d;
            }
            // estimated martingales carry Monte Carlo error in every increment
            if !(cfg.algorithm == Algorithm::Ssgd) {
                tally("hoeffding_tail", slack_ok);
            }
        }
    }
    let gap_tails: Vec<TailReport> = if gaps.is_empty() {
        Vec::new()
    } else {
        cfg.gap_thresholds
            .iter()
            .map(|&a| {
                let hits = gaps.iter().filter(|&&g| g >= a).count();
                let (lo, hi) = wilson_interval(hits, gaps.len());
                TailReport {
                    threshold: a,
                    fraction: hits as f64 / gaps.len() as f64,
                    wilson_lower: lo,
                    wilson_upper: hi,
                }
            })
            .collect()
    };
    if let Some(limit) = &cfg.gap_tail_limit {
        if !gaps.is_empty() {
            let hits = gaps.iter().filter(|&&g| g > limit.threshold).count();
            tally("gap_tail_limit", hits as f64 / gaps.len() as f64 <= limit.max_fraction);
        }
    }
    let (sweep_t, sweep_gaps, rate_slope) = match &cfg.rate_sweep {
        Some(sweep) => {
            let mut medians = Vec::new();
            for &t in &sweep.steps {
                let out = run_ensemble(exp, t, None)?;
                let g: Vec<f64> = out.iter().filter_map(|o| o.gap).collect();
                medians.push(median(&g).unwrap_or(f64::NAN));
            }
            let slope = fit_rate(&sweep.steps, &medians).ok().map(|r| r.slope);
            (sweep.steps.clone(), medians, slope)
        }
        None => (Vec::new(), Vec::new(), None),
    };
    let failed_trials = outcomes
        .iter()
        .filter_map(|o| {
            o.error.as_ref().map(|e| FailedTrial {
                trial: o.index,
                error: e.clone(),
            })
        })
        .collect();
    let all_checks_passed = checks.values().all(|c| c.failed == 0);
    let summary = ExperimentSummary {
        algorithm: cfg.algorithm,
        problem: cfg.problem.name().to_string(),
        body: exp.body.kind().to_string(),
        steps: exp.steps,
        steps_auto: exp.steps_auto,
        trials: cfg.trials,
        master_seed: cfg.master_seed,
        eps: cfg.eps,
        eps_sm: cfg.eps_sm,
        grad_bound: exp.grad_bound(),
        diam: exp.body.diameter(),
        eps_prob: exp.eps_prob,
        thresholds: if exp.martingale { thresholds } else { Vec::new() },
        empirical_tails,
        empirical_tail_intervals: intervals,
        hoeffding_bounds,
        hoeffding_bounds_display: display,
        martingale_estimated: exp.martingale && cfg.algorithm == Algorithm::Ssgd,
        gap_tails,
        median_gap: median(&gaps),
        max_gap: gaps.iter().cloned().reduce(f64::max),
        rate_sweep_t: sweep_t,
        rate_sweep_median_gaps: sweep_gaps,
        rate_slope,
        checks,
        all_checks_passed,
        failed_trials,
    };
    Ok(ExperimentReport {
        summary,
        ensemble,
        outcomes,
    })
}

/// Serializes the summary with lexicographically sorted keys.
pub fn summary_json(summary: &ExperimentSummary) -> Result<String> {
    let value = serde_json::to_value(summary)?;
    let mut s = serde_json::to_string_pretty(&value)?;
    s.push('\n');
    Ok(s)
}

pub fn write_results(summary: &ExperimentSummary, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, summary_json(summary)?)?;
    Ok(())
}

/// Randomized invariant checks of the experiment's body and objective:
/// projection is non-expansive and satisfies its variational inequality,
/// the gauge subgradient satisfies the subgradient inequality, and the mean
/// objective's subgradients obey their bound and inequality.
pub fn invariant_checks(exp: &Experiment, samples: usize) -> Vec<(&'static str, bool)> {
    use rand::Rng;
    let body = &exp.body;
    let f = exp.objective();
    let n = body.dim();
    let mut rng = rng_from_seed(mix64(exp.config.master_seed ^ 0x696e_7661_7269_616e));
    let (lo, hi) = body.bounding_box();
    let point = |rng: &mut crate::rng::TrialRng| -> Vec<f64> {
        (0..n)
            .map(|i| {
                let w = (hi[i] - lo[i]).max(1e-3);
                lo[i] - w + 3.0 * w * rng.random::<f64>()
            })
            .collect()
    };
    let mut lipschitz = true;
    let mut optimality = true;
    let mut gauge = true;
    let mut subgradient = true;
    let mut bounded = true;
    let scale = 1.0 + body.diameter();
    for _ in 0..samples {
        let x = point(&mut rng);
        let y = point(&mut rng);
        let px = body.project_unchecked(&x);
        let py = body.project_unchecked(&y);
        lipschitz &= distance(&px, &py) <= distance(&x, &y) + 1e-9;
        let vi: f64 = (0..n).map(|i| (x[i] - px[i]) * (py[i] - px[i])).sum();
        optimality &= vi <= 1e-9 * scale * scale;
        let g = body.gauge_subgradient_unchecked(&x);
        let rhs = body.distance_unchecked(&x) + (0..n).map(|i| g[i] * (y[i] - x[i])).sum::<f64>();
        gauge &= body.distance_unchecked(&y) >= rhs - 1e-9 * scale && g.norm() <= 1.0 + 1e-12;
        let fx = f.function().value(&px);
        let gx = f.function().subgradient(&px);
        bounded &= gx.norm() <= f.grad_bound() * (1.0 + 1e-9);
        let lin = fx + (0..n).map(|i| gx[i] * (py[i] - px[i])).sum::<f64>();
        subgradient &= f.function().value(&py) >= lin - 1e-9 * (1.0 + fx.abs());
    }
    vec![
        ("projection_nonexpansive", lipschitz),
        ("projection_optimality", optimality),
        ("gauge_subgradient_inequality", gauge),
        ("objective_grad_bound", bounded),
        ("objective_subgradient_inequality", subgradient),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "algorithm": "rapgd",
        "problem": {"name": "quadratic", "a": [0.2, 0.4]},
        "body": {"type": "box", "lower": [0, 0], "upper": [1, 1]},
        "T": 50
    }"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let exp = parse_config(MINIMAL).unwrap();
        assert_eq!(exp.steps, 50);
        assert!(!exp.steps_auto);
        assert_eq!(exp.config.n_mc, 10_000);
        assert!(!exp.config.record_half_steps);
        assert_eq!(exp.config.trials, 1);
        assert_eq!(exp.schedule, Schedule::InverseSqrt(1.0));
        assert_eq!(exp.u1.as_slice(), &[0.5, 0.5]);
    }

    #[test]
    fn auto_steps_follow_formula() {
        let text = r#"{
            "algorithm": "ssgd",
            "problem": {"name": "stochastic_l1", "a": [0.0]},
            "body": {"type": "box", "lower": [-1], "upper": [1]},
            "T": "auto", "eps": 0.5, "eps_sm": 0.5
        }"#;
        let exp = parse_config(text).unwrap();
        assert_eq!(exp.steps, 624);
        assert!(exp.steps_auto);
        let no_eps = text.replace("\"eps\": 0.5,", "");
        let err = parse_config(&no_eps).unwrap_err().to_string();
        assert!(err.contains("eps"), "{err}");
    }

    #[test]
    fn schema_errors_name_the_field() {
        let bad = MINIMAL.replace("\"T\": 50", "\"T\": 50, \"trials\": 0");
        assert!(parse_config(&bad).unwrap_err().to_string().contains("trials"));
        let bad = MINIMAL.replace("[0.2, 0.4]", "[0.2]");
        assert!(parse_config(&bad).unwrap_err().to_string().contains("problem"));
        let bad = MINIMAL.replace("\"T\": 50", "\"T\": 50, \"bogus\": 1");
        assert!(parse_config(&bad).unwrap_err().to_string().contains("bogus"));
        let bad = MINIMAL.replace("\"T\": 50", "\"T\": \"soon\"");
        assert!(parse_config(&bad).unwrap_err().to_string().contains("T"));
        let ssgd = MINIMAL.replace("rapgd", "ssgd");
        assert!(parse_config(&ssgd).unwrap_err().to_string().contains("eps_sm"));
        assert!(parse_config(&ssgd.replace("\"T\": 50", "\"T\": 50, \"smooth\": false")).is_ok());
    }

    #[test]
    fn degenerate_single_trial_matches_direct_run() {
        let text = r#"{
            "algorithm": "raspgd",
            "problem": {"name": "dataset_regression", "X": [[1.0, 0.5]], "y": [0.3]},
            "body": {"type": "ball", "center": [0, 0], "radius": 1},
            "T": 40, "trials": 1, "master_seed": 3
        }"#;
        let exp = parse_config(text).unwrap();
        let report = run_experiment(&exp, None).unwrap();
        let direct = run_rapgd(exp.objective(), &exp.body, &exp.schedule, &exp.u1, 40, &RunOptions::default()).unwrap();
        let gap = analysis::gap(&direct, exp.objective()).unwrap();
        assert_eq!(report.summary.median_gap, Some(gap));
        assert!(report.summary.all_checks_passed, "{:?}", report.summary.checks);
    }

    #[test]
    fn outputs_are_written_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let text = r#"{
            "algorithm": "raspgd",
            "problem": {"name": "stochastic_l1", "a": [0.3, 0.8]},
            "body": {"type": "box", "lower": [0, 0], "upper": [1, 1]},
            "T": 30, "trials": 3, "master_seed": 1,
            "outputs": {"trace_dir": "traces", "summary_path": "summary.json"}
        }"#;
        let exp = parse_config(text).unwrap();
        let report = run_experiment(&exp, Some(dir.path())).unwrap();
        let csv = fs::read_to_string(dir.path().join("traces/trial_00002.csv")).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 32);
        assert_eq!(lines[0], "t,eps_t,f_u_t,dist_to_body,sampled_value_at_u,sampled_value_at_opt");
        assert!(lines[1].starts_with("1,1.0000000000000000e0,"));
        assert!(lines[31].starts_with("31,,"));
        let text = fs::read_to_string(dir.path().join("summary.json")).unwrap();
        let parsed: ExperimentSummary = serde_json::from_str(&text).unwrap();
        assert_eq!(parsed, report.summary);
        assert_eq!(parsed.thresholds.len(), 3);
        assert_eq!(parsed.hoeffding_bounds_display.len(), 3);
    }

    #[test]
    fn empty_threshold_summary_is_valid_json() {
        let exp = parse_config(MINIMAL).unwrap();
        let report = run_experiment(&exp, None).unwrap();
        let json = summary_json(&report.summary).unwrap();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["thresholds"], serde_json::json!([]));
        assert_eq!(v["empirical_tails"], serde_json::json!([]));
        // keys are sorted
        let keys: Vec<&String> = v.as_object().unwrap().keys().collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
    }

    #[test]
    fn invariant_suite_passes_on_examples() {
        for body in [
            r#"{"type": "ball", "center": [0, 0], "radius": 1}"#,
            r#"{"type": "simplex", "dim": 2, "scale": 1}"#,
            r#"{"type": "halfspaces", "constraints": [{"normal": [1, 1], "offset": 1}],
                "bounding_box": {"lower": [0, 0], "upper": [1, 1]}, "interior_point": [0.2, 0.2]}"#,
        ] {
            let text = MINIMAL.replace(r#"{"type": "box", "lower": [0, 0], "upper": [1, 1]}"#, body);
            let exp = parse_config(&text).unwrap();
            for (name, ok) in invariant_checks(&exp, 500) {
                assert!(ok, "{name} failed for {body}");
            }
        }
    }
}
