//! Uniform-ball perturbations and Monte Carlo mollification.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::objectives::Function;
use crate::vector::{check_dim, check_finite, Vector};

/// The uniform distribution on the solid ball `B(0, radius)` in ℝ^dim.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BallNoise {
    dim: usize,
    radius: f64,
}

impl BallNoise {
    pub fn new(dim: usize, radius: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("noise dimension must be positive".into()));
        }
        if !(radius.is_finite() && radius > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "noise radius must be positive and finite, got {radius}"
            )));
        }
        Ok(BallNoise { dim, radius })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// `n` independent draws, for reuse across evaluation points.
    pub fn draw<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Vector> {
        (0..n).map(|_| sample_uniform_ball(self, rng)).collect()
    }
}

/// Normalized Gaussian direction scaled by `radius·U^{1/dim}`.
pub fn sample_uniform_ball<R: Rng + ?Sized>(noise: &BallNoise, rng: &mut R) -> Vector {
    let n = noise.dim;
    loop {
        let g: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let len = g.iter().map(|c| c * c).sum::<f64>().sqrt();
        if len == 0.0 {
            continue;
        }
        let u: f64 = rng.random();
        let scale = noise.radius * u.powf(1.0 / n as f64) / len;
        return Vector::from_vec_unchecked(g.into_iter().map(|c| c * scale).collect());
    }
}

/// A Monte Carlo mean and its standard error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
}

/// Coordinatewise Monte Carlo means and standard errors.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorEstimate {
    pub mean: Vector,
    pub stderr: Vec<f64>,
}

/// Running mean/variance accumulator (Welford).
#[derive(Clone, Debug, Default)]
pub(crate) struct Moments {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Moments {
    pub(crate) fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub(crate) fn estimate(&self) -> Estimate {
        let stderr = if self.n > 1 {
            (self.m2 / (self.n - 1) as f64 / self.n as f64).sqrt()
        } else {
            0.0
        };
        Estimate {
            mean: self.mean,
            stderr,
        }
    }
}

fn check_query(f: &dyn Function, noise: &BallNoise, x: &[f64], n_mc: usize) -> Result<()> {
    check_dim(f.dim(), x.len())?;
    check_dim(f.dim(), noise.dim)?;
    check_finite(x, "point")?;
    if n_mc == 0 {
        return Err(Error::InvalidArgument("n_mc must be at least 1".into()));
    }
    Ok(())
}

/// Estimates `f_ε(x) = E f(x − v)` with `v` uniform on the noise ball.
pub fn mollified_value<R: Rng + ?Sized>(
    f: &dyn Function,
    noise: &BallNoise,
    x: &[f64],
    n_mc: usize,
    rng: &mut R,
) -> Result<Estimate> {
    check_query(f, noise, x, n_mc)?;
    Ok(mollified_value_with(f, x, &noise.draw(n_mc, rng)))
}

/// Mollified value from caller-supplied perturbations (common random numbers).
pub fn mollified_value_with(f: &dyn Function, x: &[f64], offsets: &[Vector]) -> Estimate {
    let mut m = Moments::default();
    let mut y = vec![0.0; x.len()];
    for v in offsets {
        for i in 0..x.len() {
            y[i] = x[i] - v[i];
        }
        m.push(f.value(&y));
    }
    m.estimate()
}

/// Estimates `∂f_ε(x) = E ∂f(x − v)`.
pub fn mollified_subgradient<R: Rng + ?Sized>(
    f: &dyn Function,
    noise: &BallNoise,
    x: &[f64],
    n_mc: usize,
    rng: &mut R,
) -> Result<VectorEstimate> {
    check_query(f, noise, x, n_mc)?;
    Ok(mollified_subgradient_with(f, x, &noise.draw(n_mc, rng)))
}

pub fn mollified_subgradient_with(f: &dyn Function, x: &[f64], offsets: &[Vector]) -> VectorEstimate {
    let n = x.len();
    let mut moments = vec![Moments::default(); n];
    let mut y = vec![0.0; n];
    for v in offsets {
        for i in 0..n {
            y[i] = x[i] - v[i];
        }
        let g = f.subgradient(&y);
        for (m, gi) in moments.iter_mut().zip(g.iter()) {
            m.push(*gi);
        }
    }
    let est: Vec<Estimate> = moments.iter().map(Moments::estimate).collect();
    VectorEstimate {
        mean: Vector::from_vec_unchecked(est.iter().map(|e| e.mean).collect()),
        stderr: est.iter().map(|e| e.stderr).collect(),
    }
}

/// Exact uniform mollification of `|·|` in one dimension: value and derivative.
pub fn smoothed_abs_oracle(eps: f64, x: f64) -> Result<(f64, f64)> {
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::InvalidArgument(format!("smoothing radius must be positive, got {eps}")));
    }
    if !x.is_finite() {
        return Err(Error::NonFinite { what: "point" });
    }
    let value = if x.abs() <= eps {
        x * x / (2.0 * eps) + eps / 2.0
    } else {
        x.abs()
    };
    Ok((value, (x / eps).clamp(-1.0, 1.0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ConvexBody;
    use crate::objectives::{make_l1, make_linear, make_quadratic};
    use crate::rng::rng_from_seed;

    fn v(c: &[f64]) -> Vector {
        Vector::new(c.to_vec()).unwrap()
    }

    fn abs_1d() -> crate::objectives::ConvexObjective {
        let body = ConvexBody::cube(v(&[-5.0]), v(&[5.0])).unwrap();
        make_l1(v(&[0.0]), &body).unwrap()
    }

    #[test]
    fn tiny_ball_samples_are_tiny() {
        let noise = BallNoise::new(3, 1e-12).unwrap();
        let mut rng = rng_from_seed(3);
        for _ in 0..100 {
            assert!(sample_uniform_ball(&noise, &mut rng).norm() <= 1e-12);
        }
    }

    #[test]
    fn ball_sample_moments() {
        let mut rng = rng_from_seed(4);
        let n = 100_000;
        let one = BallNoise::new(1, 1.0).unwrap();
        let mean_abs = (0..n).map(|_| sample_uniform_ball(&one, &mut rng)[0].abs()).sum::<f64>() / n as f64;
        assert!((mean_abs - 0.5).abs() < 0.01);
        let two = BallNoise::new(2, 1.0).unwrap();
        let inner = (0..n).filter(|_| sample_uniform_ball(&two, &mut rng).norm() <= 0.5).count();
        assert!((inner as f64 / n as f64 - 0.25).abs() < 0.01);
    }

    #[test]
    fn ball_sample_mean_is_zero() {
        let mut rng = rng_from_seed(5);
        let noise = BallNoise::new(3, 2.0).unwrap();
        let draws = noise.draw(100_000, &mut rng);
        for i in 0..3 {
            let mut m = Moments::default();
            for d in &draws {
                assert!(d.norm() <= 2.0);
                m.push(d[i]);
            }
            let e = m.estimate();
            assert!(e.mean.abs() <= 5.0 * e.stderr);
        }
    }

    #[test]
    fn mollified_value_examples() {
        let mut rng = rng_from_seed(6);
        let body = ConvexBody::unit_box(2);
        let lin = make_linear(v(&[1.0, -2.0]), &body).unwrap();
        let noise = BallNoise::new(2, 0.3).unwrap();
        let x = [0.4, 0.1];
        let e = mollified_value(lin.function().as_ref(), &noise, &x, 10_000, &mut rng).unwrap();
        assert!((e.mean - lin.value(&x).unwrap()).abs() <= 3.0 * e.stderr + 1e-12);

        let f = abs_1d();
        let noise = BallNoise::new(1, 1.0).unwrap();
        let e = mollified_value(f.function().as_ref(), &noise, &[0.0], 10_000, &mut rng).unwrap();
        let (exact, _) = smoothed_abs_oracle(1.0, 0.0).unwrap();
        assert!((e.mean - exact).abs() <= 3.0 * e.stderr);
    }

    #[test]
    fn mollified_subgradient_examples() {
        let mut rng = rng_from_seed(7);
        let f = abs_1d();
        let noise = BallNoise::new(1, 1.0).unwrap();
        for x in [0.0, 0.5] {
            let e = mollified_subgradient(f.function().as_ref(), &noise, &[x], 10_000, &mut rng).unwrap();
            let (_, d) = smoothed_abs_oracle(1.0, x).unwrap();
            assert!((e.mean[0] - d).abs() <= 3.0 * e.stderr[0], "x={x}: {e:?} vs {d}");
        }
        let body = ConvexBody::cube(v(&[-3.0, -3.0]), v(&[3.0, 3.0])).unwrap();
        let q = make_quadratic(v(&[0.2, 0.1]), &body).unwrap();
        let noise = BallNoise::new(2, 0.1).unwrap();
        let e = mollified_subgradient(q.function().as_ref(), &noise, &[1.0, -1.0], 10_000, &mut rng).unwrap();
        assert!((e.mean[0] - 0.8).abs() <= 3.0 * e.stderr[0]);
        assert!((e.mean[1] + 1.1).abs() <= 3.0 * e.stderr[1]);
    }

    #[test]
    fn smoothed_abs_oracle_examples() {
        assert_eq!(smoothed_abs_oracle(1.0, 0.0).unwrap(), (0.5, 0.0));
        assert_eq!(smoothed_abs_oracle(1.0, 2.0).unwrap(), (2.0, 1.0));
        assert!(smoothed_abs_oracle(0.0, 1.0).is_err());
        // derivative is (1/ε)-Lipschitz
        let eps = 0.25;
        for k in 0..100 {
            let a = -1.0 + 0.02 * k as f64;
            let b = a + 0.013;
            let (_, da) = smoothed_abs_oracle(eps, a).unwrap();
            let (_, db) = smoothed_abs_oracle(eps, b).unwrap();
            assert!((da - db).abs() <= (a - b).abs() / eps + 1e-15);
        }
    }

    #[test]
    fn rejects_zero_samples() {
        let f = abs_1d();
        let noise = BallNoise::new(1, 1.0).unwrap();
        let mut rng = rng_from_seed(8);
        assert!(mollified_value(f.function().as_ref(), &noise, &[0.0], 0, &mut rng).is_err());
        assert!(BallNoise::new(1, 0.0).is_err());
    }
}
