use proptest::prelude::*;

use sgdlab::analysis::{
    check_ppgd_dichotomy, check_raspgd_per_run, check_ssgd_distance, martingale_trace_raspgd, max_increase,
    max_ssgd_step_ratio, DichotomyBranch,
};
use sgdlab::geometry::{ConvexBody, Halfspace, LocalNormQuery};
use sgdlab::objectives::{
    make_finite_dataset_regression, make_l1, make_linear, make_quadratic, make_stochastic_l1, penalized,
    ConvexObjective, StochasticObjective,
};
use sgdlab::optimizers::{run_ppgd, run_rapgd, run_raspgd, run_ssgd, RunOptions, Schedule};
use sgdlab::rng::rng_from_seed;
use sgdlab::smoothing::{mollified_value_with, BallNoise};
use sgdlab::vector::{distance, dot, Vector};

fn v(c: &[f64]) -> Vector {
    Vector::new(c.to_vec()).unwrap()
}

fn coords(n: usize, lo: f64, hi: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(lo..hi, n)
}

/// Bodies of every kind in dimension 1..=3 (halfspaces in 2 and 3).
fn body() -> impl Strategy<Value = ConvexBody> {
    (1usize..=3).prop_flat_map(|n| {
        prop_oneof![
            (coords(n, -1.0, 1.0), 0.2f64..2.0).prop_map(|(c, r)| ConvexBody::ball(v(&c), r).unwrap()),
            (coords(n, -1.0, 0.5), coords(n, 0.1, 2.0)).prop_map(|(lo, w)| {
                let hi: Vec<f64> = lo.iter().zip(&w).map(|(a, b)| a + b).collect();
                ConvexBody::cube(v(&lo), v(&hi)).unwrap()
            }),
            (0.3f64..3.0).prop_map(move |s| ConvexBody::simplex(n, s).unwrap()),
            (coords(n.max(2), -1.0, 1.0), 0.1f64..1.0).prop_map(|(w, off)| {
                let n = w.len();
                let normal = if w.iter().all(|c| c.abs() < 1e-3) { vec![1.0; n] } else { w };
                ConvexBody::halfspaces(
                    vec![Halfspace {
                        normal: v(&normal),
                        offset: off,
                    }],
                    v(&vec![-1.0; n]),
                    v(&vec![1.0; n]),
                    v(&vec![0.0; n]),
                )
                .unwrap()
            }),
        ]
    })
}

/// Point around the body's bounding box, inflated by its width on every side.
fn around(body: &ConvexBody, t: &[f64]) -> Vector {
    let (lo, hi) = body.bounding_box();
    v(&(0..body.dim())
        .map(|i| {
            let w = hi[i] - lo[i];
            lo[i] - w + 3.0 * w * t[i]
        })
        .collect::<Vec<_>>())
}

fn unit(t: &[f64]) -> Option<Vector> {
    let x = v(t);
    let n = x.norm();
    (n > 1e-3).then(|| x.scaled(1.0 / n))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn projection_is_nonexpansive_and_optimal(
        b in body(),
        pairs in prop::collection::vec((coords(3, 0.0, 1.0), coords(3, 0.0, 1.0)), 40),
    ) {
        for (s, t) in &pairs {
            let x = around(&b, s);
            let y = around(&b, t);
            let px = b.project(&x).unwrap();
            let py = b.project(&y).unwrap();
            prop_assert!(b.membership(&px, 1e-9).unwrap());
            prop_assert!(distance(&px, &py) <= distance(&x, &y) + 1e-9);
            // py is a member, so the variational inequality applies
            prop_assert!(dot(&(&x - &px), &(&py - &px)) <= 1e-9);
            // idempotent on members
            prop_assert!(distance(&b.project(&px).unwrap(), &px) <= 1e-9);
        }
    }

    #[test]
    fn gauge_is_distance_with_valid_subgradients(
        b in body(),
        pairs in prop::collection::vec((coords(3, 0.0, 1.0), coords(3, 0.0, 1.0)), 40),
    ) {
        for (s, t) in &pairs {
            let x = around(&b, s);
            let y = around(&b, t);
            let gx = b.gauge_value(&x).unwrap();
            prop_assert_eq!(gx, b.distance_to_set(&x).unwrap());
            let g = b.gauge_subgradient(&x).unwrap();
            prop_assert!(g.norm() <= 1.0 + 1e-12);
            let lin = gx + dot(&g, &(&y - &x));
            prop_assert!(b.gauge_value(&y).unwrap() >= lin - 1e-9);
        }
    }

    #[test]
    fn local_norm_is_monotone_and_bounded(
        b in body(),
        s in coords(3, 0.0, 1.0),
        t in coords(3, -1.0, 1.0),
        scale in 0.2f64..3.0,
        r0 in 0.01f64..1.0,
        grow in 1.0f64..4.0,
    ) {
        let n = b.dim();
        prop_assume!(n >= 2);
        let p = b.project(&around(&b, &s)).unwrap();
        let Some(u) = unit(&t[..n]) else { return Ok(()); };
        let u = u.scaled(scale);
        let r0 = r0 * b.diameter();
        let q = |r: f64| LocalNormQuery { p: p.clone(), u: u.clone(), r, samples: 64 };
        let near = b.local_norm(&q(r0)).unwrap();
        let far = b.local_norm(&q(r0 * grow)).unwrap();
        prop_assert!(near <= u.norm() + 1e-12);
        prop_assert!(far <= u.norm() + 1e-12);
        prop_assert!(near >= far - 2e-6 * u.norm(), "r0 estimate {} below larger-radius estimate {}", near, far);
    }

    #[test]
    fn objectives_satisfy_subgradient_inequality(
        b in body(),
        a in coords(3, -2.0, 2.0),
        pairs in prop::collection::vec((coords(3, 0.0, 1.0), coords(3, 0.0, 1.0)), 30),
        data in prop::collection::vec((coords(3, -1.0, 1.0), -1.0f64..1.0), 1..6),
    ) {
        let n = b.dim();
        let a = v(&a[..n]);
        let xs: Vec<Vector> = data.iter().map(|(x, _)| v(&x[..n])).collect();
        let ys: Vec<f64> = data.iter().map(|(_, y)| *y).collect();
        let reg = make_finite_dataset_regression(xs, ys, &b).unwrap();
        let objectives: Vec<ConvexObjective> = vec![
            make_quadratic(a.clone(), &b).unwrap(),
            make_l1(a.clone(), &b).unwrap(),
            make_linear(a.clone(), &b).unwrap(),
            reg.mean().clone(),
            penalized(&make_l1(a.clone(), &b).unwrap(), &b).unwrap(),
        ];
        for f in &objectives {
            for (s, t) in &pairs {
                // the inequality holds on all of the space, not only the body
                let x = around(&b, s);
                let y = around(&b, t);
                let fx = f.value(&x).unwrap();
                let g = f.subgradient(&x).unwrap();
                let lin = fx + dot(&g, &(&y - &x));
                prop_assert!(f.value(&y).unwrap() >= lin - 1e-9 * (1.0 + fx.abs()), "{:?}", f);
                let px = b.project(&x).unwrap();
                prop_assert!(f.subgradient(&px).unwrap().norm() <= f.grad_bound() * (1.0 + 1e-9));
            }
        }
    }

    #[test]
    fn stochastic_mean_is_component_average(
        b in body(),
        a in coords(3, -1.0, 1.0),
        t in coords(3, 0.0, 1.0),
        data in prop::collection::vec((coords(3, -1.0, 1.0), -1.0f64..1.0), 1..6),
    ) {
        let n = b.dim();
        let x = around(&b, &t);
        let xs: Vec<Vector> = data.iter().map(|(x, _)| v(&x[..n])).collect();
        let ys: Vec<f64> = data.iter().map(|(_, y)| *y).collect();
        for d in [make_stochastic_l1(v(&a[..n]), &b).unwrap(), make_finite_dataset_regression(xs, ys, &b).unwrap()] {
            let k = d.components().len() as f64;
            let avg: f64 = d.components().iter().map(|c| c.value(&x)).sum::<f64>() / k;
            let mean = d.mean().value(&x).unwrap();
            prop_assert!((avg - mean).abs() <= 1e-12 * (1.0 + mean.abs()));
            for c in d.components() {
                let px = b.project(&x).unwrap();
                prop_assert!(c.subgradient(&px).norm() <= d.grad_bound() * (1.0 + 1e-9));
            }
        }
    }

    #[test]
    fn approximate_minimizer_transfers(
        values in prop::collection::vec(-5.0f64..5.0, 2..50),
        noise in prop::collection::vec(-1.0f64..1.0, 50),
        eps in 0.0f64..0.5,
    ) {
        let noisy: Vec<f64> = values.iter().zip(&noise).map(|(f, z)| f + eps * z).collect();
        let f_opt = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let g_opt = noisy.iter().cloned().fold(f64::INFINITY, f64::min);
        for (f, g) in values.iter().zip(&noisy) {
            prop_assert!(f - f_opt <= 2.0 * eps + g - g_opt + 1e-12);
        }
    }

    #[test]
    fn mollified_value_is_midpoint_convex(
        b in body(),
        a in coords(3, -1.0, 1.0),
        s in coords(3, 0.0, 1.0),
        t in coords(3, 0.0, 1.0),
        eps in 0.01f64..1.0,
        seed in any::<u64>(),
    ) {
        let n = b.dim();
        let f = make_l1(v(&a[..n]), &b).unwrap();
        let x = around(&b, &s);
        let y = around(&b, &t);
        let mid = (&x + &y).scaled(0.5);
        // with common perturbations the estimate is itself an average of
        // convex functions, so convexity holds up to rounding
        let offsets = BallNoise::new(n, eps).unwrap().draw(500, &mut rng_from_seed(seed));
        let fx = mollified_value_with(f.function().as_ref(), &x, &offsets).mean;
        let fy = mollified_value_with(f.function().as_ref(), &y, &offsets).mean;
        let fm = mollified_value_with(f.function().as_ref(), &mid, &offsets).mean;
        prop_assert!(fm <= 0.5 * (fx + fy) + 1e-12 * (1.0 + fx.abs() + fy.abs()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn projected_runs_stay_feasible_and_meet_their_bounds(
        b in body(),
        a in coords(3, -2.0, 2.0),
        c in 0.05f64..2.0,
        steps in 1usize..300,
        seed in any::<u64>(),
    ) {
        let n = b.dim();
        let u1 = b.reference_point();
        let s = Schedule::inverse_sqrt(c).unwrap();
        let f = make_l1(v(&a[..n]), &b).unwrap();
        let trace = run_rapgd(&f, &b, &s, &u1, steps, &RunOptions::default()).unwrap();
        prop_assert!(trace.dist_to_body.iter().all(|d| *d <= 1e-9));
        prop_assert!(trace.iterates.iter().all(|u| b.membership(u, 1e-9).unwrap()));

        let d = make_stochastic_l1(v(&a[..n]), &b).unwrap();
        let trace = run_raspgd(&d, &b, &s, &u1, steps, &mut rng_from_seed(seed), &RunOptions::default()).unwrap();
        prop_assert!(trace.dist_to_body.iter().all(|d| *d <= 1e-9));
        let m = martingale_trace_raspgd(&trace, d.mean(), &b).unwrap();
        prop_assert!(check_raspgd_per_run(&trace, d.mean(), &m).unwrap().holds);
        for (x, c) in m.increments().iter().zip(&m.increment_bounds) {
            prop_assert!(x.abs() <= c + 1e-9);
        }
    }

    #[test]
    fn ppgd_descends_and_dichotomy_holds(
        b in body(),
        a in coords(3, -2.0, 2.0),
        steps in 1usize..60,
        eps_err in 1e-4f64..0.5,
    ) {
        let n = b.dim();
        let f = make_quadratic(v(&a[..n]), &b).unwrap();
        let l = f.lipschitz_grad().unwrap();
        let s = Schedule::constant(1.0 / (2.0 * l)).unwrap();
        let u1 = b.project(&v(&vec![1.0; n]).scaled(-2.0)).unwrap();
        let trace = run_ppgd(&f, &b, &s, &u1, steps, &RunOptions::default()).unwrap();
        prop_assert!(max_increase(&trace) <= 1e-12);
        prop_assert!(trace.dist_to_body.iter().all(|d| *d <= 1e-9));
        if n >= 2 {
            let report = check_ppgd_dichotomy(&trace, &f, &b, eps_err, 0.5, 32).unwrap();
            prop_assert_ne!(report.branch, DichotomyBranch::Violation, "{:?}", report);
        }
    }

    #[test]
    fn ssgd_steps_and_distance_are_bounded(
        b in body(),
        a in coords(3, -1.0, 1.0),
        eps_sm in 0.05f64..0.9,
        steps in 1usize..300,
        smooth in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let n = b.dim();
        let d = make_stochastic_l1(v(&a[..n]), &b).unwrap();
        let s = Schedule::inverse_sqrt(eps_sm).unwrap();
        let trace = run_ssgd(&d, &b, &s, eps_sm, &b.reference_point(), steps, smooth, &mut rng_from_seed(seed), &RunOptions::default()).unwrap();
        prop_assert!(max_ssgd_step_ratio(&trace) <= 1.0 + 1e-9);
        prop_assert!(check_ssgd_distance(&trace, d.mean(), &b).unwrap().holds);
        prop_assert!(b.membership(&trace.u_end, 1e-9).unwrap());
    }

    #[test]
    fn identical_seeds_give_identical_traces(
        b in body(),
        a in coords(3, -1.0, 1.0),
        seed in any::<u64>(),
    ) {
        let n = b.dim();
        let d = make_stochastic_l1(v(&a[..n]), &b).unwrap();
        let s = Schedule::inverse_sqrt(0.5).unwrap();
        let u1 = b.reference_point();
        let opts = RunOptions { record_half_steps: true };
        let first = run_raspgd(&d, &b, &s, &u1, 50, &mut rng_from_seed(seed), &opts).unwrap();
        let second = run_raspgd(&d, &b, &s, &u1, 50, &mut rng_from_seed(seed), &opts).unwrap();
        prop_assert_eq!(first, second);
        let first = run_ssgd(&d, &b, &s, 0.3, &u1, 50, true, &mut rng_from_seed(seed), &opts).unwrap();
        let second = run_ssgd(&d, &b, &s, 0.3, &u1, 50, true, &mut rng_from_seed(seed), &opts).unwrap();
        prop_assert_eq!(first, second);
    }
}

#[test]
fn martingale_increments_have_zero_mean() {
    let body = ConvexBody::unit_box(2);
    let d = make_stochastic_l1(v(&[0.3, 0.6]), &body).unwrap();
    let s = Schedule::InverseSqrt(1.0);
    let u1 = v(&[0.9, 0.1]);
    let trials = 4000;
    let steps = 20;
    let mut inc: Vec<Vec<f64>> = vec![Vec::with_capacity(trials); steps];
    for i in 0..trials {
        let trace = run_raspgd(&d, &body, &s, &u1, steps, &mut rng_from_seed(i as u64), &RunOptions::default()).unwrap();
        let m = martingale_trace_raspgd(&trace, d.mean(), &body).unwrap();
        for (t, x) in m.increments().into_iter().enumerate() {
            inc[t].push(x);
        }
    }
    for (t, xs) in inc.iter().enumerate() {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!(mean.abs() <= 5.0 * sd / n.sqrt() + 1e-15, "step {}: mean {mean}, sd {sd}", t + 1);
    }
}

#[test]
fn deterministic_sampler_matches_deterministic_run() {
    let body = ConvexBody::ball(v(&[0.0, 0.0]), 1.0).unwrap();
    let f = make_quadratic(v(&[1.2, 0.4]), &body).unwrap();
    let d = StochasticObjective::deterministic(f.clone());
    let s = Schedule::InverseSqrt(0.7);
    let u1 = v(&[0.0, -0.5]);
    let det = run_rapgd(&f, &body, &s, &u1, 100, &RunOptions::default()).unwrap();
    let sto = run_raspgd(&d, &body, &s, &u1, 100, &mut rng_from_seed(9), &RunOptions::default()).unwrap();
    assert_eq!(det.iterates, sto.iterates);
    assert_eq!(det.u_end, sto.u_end);
}
