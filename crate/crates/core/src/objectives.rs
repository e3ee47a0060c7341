//! Convex objectives with a fixed subgradient selection, the stochastic test
//! problems, the penalized composite `f + 2G·ψ`, and supporting-plane
//! extensions.
//!
//! Objectives built here are defined on all of ℝᴺ, not only on their body:
//! SSGD evaluates subgradients at perturbed points that may leave the body, so
//! each test problem comes with a convex extension whose subgradients stay
//! within the advertised bound everywhere.

use std::fmt;
use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::ConvexBody;
use crate::vector::{check_dim, check_finite, distance, dot, norm, Vector};

/// Cap on the hyperplane subsets examined when locating exact optima on
/// halfspace bodies.
const VERTEX_ENUMERATION_LIMIT: usize = 2_000_000;

/// A convex function on ℝᴺ together with a deterministic subgradient choice.
pub trait Function: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    fn subgradient(&self, x: &[f64]) -> Vector;
}

#[derive(Clone, Debug, PartialEq)]
pub struct Optimum {
    pub point: Vector,
    pub value: f64,
}

/// A convex function, its subgradient bound `G`, an optional Lipschitz
/// constant of the gradient, and (when known) a minimizer on its body.
#[derive(Clone, Debug)]
pub struct ConvexObjective {
    func: Arc<dyn Function>,
    grad_bound: f64,
    lipschitz_grad: Option<f64>,
    optimum: Option<Optimum>,
}

impl ConvexObjective {
    pub fn new(
        func: Arc<dyn Function>,
        grad_bound: f64,
        lipschitz_grad: Option<f64>,
        optimum: Option<Optimum>,
    ) -> Result<Self> {
        if !(grad_bound.is_finite() && grad_bound > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "subgradient bound must be positive and finite, got {grad_bound}"
            )));
        }
        if let Some(l) = lipschitz_grad {
            if !(l.is_finite() && l >= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "gradient Lipschitz constant must be finite and nonnegative, got {l}"
                )));
            }
        }
        if let Some(opt) = &optimum {
            check_dim(func.dim(), opt.point.dim())?;
        }
        Ok(ConvexObjective {
            func,
            grad_bound,
            lipschitz_grad,
            optimum,
        })
    }

    pub fn dim(&self) -> usize {
        self.func.dim()
    }

    pub fn value(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        check_finite(x, "point")?;
        Ok(self.func.value(x))
    }

    pub fn subgradient(&self, x: &[f64]) -> Result<Vector> {
        check_dim(self.dim(), x.len())?;
        check_finite(x, "point")?;
        Ok(self.func.subgradient(x))
    }

    pub fn function(&self) -> &Arc<dyn Function> {
        &self.func
    }

    pub fn grad_bound(&self) -> f64 {
        self.grad_bound
    }

    pub fn lipschitz_grad(&self) -> Option<f64> {
        self.lipschitz_grad
    }

    pub fn optimum(&self) -> Option<&Optimum> {
        self.optimum.as_ref()
    }

    pub fn require_optimum(&self) -> Result<&Optimum> {
        self.optimum.as_ref().ok_or(Error::MissingData("optimum"))
    }

    pub fn with_optimum(mut self, optimum: Option<Optimum>) -> Result<Self> {
        if let Some(opt) = &optimum {
            check_dim(self.dim(), opt.point.dim())?;
        }
        self.optimum = optimum;
        Ok(self)
    }
}

/// A uniform finite mixture of convex functions whose average is `mean`.
#[derive(Clone, Debug)]
pub struct StochasticObjective {
    components: Vec<Arc<dyn Function>>,
    mean: ConvexObjective,
    grad_bound: f64,
}

impl StochasticObjective {
    pub fn new(
        components: Vec<Arc<dyn Function>>,
        mean: ConvexObjective,
        grad_bound: f64,
    ) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidArgument("sampler needs at least one component".into()));
        }
        for c in &components {
            check_dim(mean.dim(), c.dim())?;
        }
        if !(grad_bound.is_finite() && grad_bound > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "subgradient bound must be positive and finite, got {grad_bound}"
            )));
        }
        Ok(StochasticObjective {
            components,
            mean,
            grad_bound,
        })
    }

    /// The zero-variance sampler that always returns `f`.
    pub fn deterministic(f: ConvexObjective) -> Self {
        StochasticObjective {
            components: vec![f.func.clone()],
            grad_bound: f.grad_bound,
            mean: f,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> &dyn Function {
        let i = if self.components.len() == 1 {
            0
        } else {
            rng.random_range(0..self.components.len())
        };
        self.components[i].as_ref()
    }

    pub fn components(&self) -> &[Arc<dyn Function>] {
        &self.components
    }

    pub fn mean(&self) -> &ConvexObjective {
        &self.mean
    }

    pub fn grad_bound(&self) -> f64 {
        self.grad_bound
    }

    pub fn dim(&self) -> usize {
        self.mean.dim()
    }
}

fn check_body_point(body: &ConvexBody, a: &[f64]) -> Result<()> {
    check_dim(body.dim(), a.len())?;
    check_finite(a, "objective parameter")
}

/// Subgradient bounds below are exact suprema over the body (bounding-box
/// suprema for halfspace bodies); this only keeps them strictly positive.
fn positive(g: f64) -> f64 {
    g.max(1e-12)
}

/// `½‖u − a‖²` on the body, extended to ℝᴺ as
/// `½‖y − a‖² − ½·dist(y, C)²`, whose gradient `π(y) − a` is bounded by the
/// body's farthest distance from `a`.
#[derive(Debug)]
struct Quadratic {
    a: Vector,
    body: ConvexBody,
}

impl Function for Quadratic {
    fn dim(&self) -> usize {
        self.a.dim()
    }
    fn value(&self, x: &[f64]) -> f64 {
        let p = self.body.project_unchecked(x);
        let d2 = distance(x, &p).powi(2);
        0.5 * distance(x, &self.a).powi(2) - 0.5 * d2
    }
    fn subgradient(&self, x: &[f64]) -> Vector {
        let p = self.body.project_unchecked(x);
        Vector::from_vec_unchecked(p.iter().zip(self.a.iter()).map(|(pi, ai)| pi - ai).collect())
    }
}

pub fn make_quadratic(a: Vector, body: &ConvexBody) -> Result<ConvexObjective> {
    check_body_point(body, &a)?;
    let g = body.max_distance_from(&a)?;
    let point = body.project(&a)?;
    let value = 0.5 * distance(&point, &a).powi(2);
    ConvexObjective::new(
        Arc::new(Quadratic {
            a,
            body: body.clone(),
        }),
        positive(g),
        Some(1.0),
        Some(Optimum { point, value }),
    )
}

/// `Σ |uᵢ − aᵢ|` with subgradient `sign(uᵢ − aᵢ)`, zero at ties.
#[derive(Debug)]
struct L1 {
    a: Vector,
}

impl Function for L1 {
    fn dim(&self) -> usize {
        self.a.dim()
    }
    fn value(&self, x: &[f64]) -> f64 {
        x.iter().zip(self.a.iter()).map(|(xi, ai)| (xi - ai).abs()).sum()
    }
    fn subgradient(&self, x: &[f64]) -> Vector {
        Vector::from_vec_unchecked(x.iter().zip(self.a.iter()).map(|(xi, ai)| sign(xi - ai)).collect())
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn make_l1(a: Vector, body: &ConvexBody) -> Result<ConvexObjective> {
    check_body_point(body, &a)?;
    let n = a.dim();
    let func: Arc<dyn Function> = Arc::new(L1 { a: a.clone() });
    let optimum = l1_optimum(&a, body, func.as_ref());
    ConvexObjective::new(func, (n as f64).sqrt(), None, optimum)
}

fn l1_optimum(a: &Vector, body: &ConvexBody, f: &dyn Function) -> Option<Optimum> {
    let point = match body {
        ConvexBody::Box { .. } => body.project_unchecked(a),
        ConvexBody::Ball { center, radius } => {
            // u = a + w with w the ℓ1-smallest vector in the ball B(c − a, r):
            // w = soft(c − a, τ) where ‖clip(c − a, τ)‖ = r.
            let d: Vec<f64> = center.iter().zip(a.iter()).map(|(c, ai)| c - ai).collect();
            if norm(&d) <= *radius {
                a.clone()
            } else {
                let clip_norm = |tau: f64| norm(&d.iter().map(|di| di.clamp(-tau, tau)).collect::<Vec<_>>());
                let (mut lo, mut hi) = (0.0, d.iter().fold(0.0f64, |m, di| m.max(di.abs())));
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if clip_norm(mid) < *radius {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                let tau = 0.5 * (lo + hi);
                Vector::from_vec_unchecked(
                    a.iter()
                        .zip(&d)
                        .map(|(ai, di)| ai + di.signum() * (di.abs() - tau).max(0.0))
                        .collect(),
                )
            }
        }
        ConvexBody::Simplex { dim, scale } => {
            let b: Vec<f64> = a.iter().map(|ai| ai.max(0.0)).collect();
            let total: f64 = b.iter().sum();
            if total > *scale {
                Vector::from_vec_unchecked(b.iter().map(|bi| bi * scale / total).collect())
            } else {
                let shift = (scale - total) / *dim as f64;
                Vector::from_vec_unchecked(b.iter().map(|bi| bi + shift).collect())
            }
        }
        ConvexBody::Halfspaces(_) => {
            let kinks: Vec<(Vec<f64>, f64)> = (0..a.dim()).map(|i| (Vector::basis(a.dim(), i).into_inner(), a[i])).collect();
            return vertex_minimize(body, &kinks, f);
        }
    };
    let value = f.value(&point);
    Some(Optimum { point, value })
}

/// Exact minimum of a convex piecewise-linear `f` over a halfspace body,
/// given the hyperplanes separating its linear pieces.
fn vertex_minimize(body: &ConvexBody, kinks: &[(Vec<f64>, f64)], f: &dyn Function) -> Option<Optimum> {
    let ConvexBody::Halfspaces(h) = body else {
        return None;
    };
    h.arrangement_vertices(kinks, VERTEX_ENUMERATION_LIMIT)?
        .into_iter()
        .map(|p| {
            let value = f.value(&p);
            Optimum { point: p, value }
        })
        .min_by(|a, b| a.value.total_cmp(&b.value))
}

/// `⟨w, u⟩`.
#[derive(Debug)]
struct Linear {
    w: Vector,
}

impl Function for Linear {
    fn dim(&self) -> usize {
        self.w.dim()
    }
    fn value(&self, x: &[f64]) -> f64 {
        dot(&self.w, x)
    }
    fn subgradient(&self, _x: &[f64]) -> Vector {
        self.w.clone()
    }
}

/// The linear objective `⟨w, u⟩`, with its minimizer on the body.
pub fn make_linear(w: Vector, body: &ConvexBody) -> Result<ConvexObjective> {
    check_body_point(body, &w)?;
    let func: Arc<dyn Function> = Arc::new(Linear { w: w.clone() });
    let point = match body {
        ConvexBody::Ball { center, radius } => {
            let n = w.norm();
            if n == 0.0 {
                center.clone()
            } else {
                center.add_scaled(-radius / n, &w)
            }
        }
        ConvexBody::Box { lower, upper } => Vector::from_vec_unchecked(
            w.iter()
                .zip(lower.iter().zip(upper.iter()))
                .map(|(wi, (l, u))| if *wi > 0.0 { *l } else if *wi < 0.0 { *u } else { 0.5 * (l + u) })
                .collect(),
        ),
        ConvexBody::Simplex { dim, scale } => {
            let i = (0..*dim).min_by(|&i, &j| w[i].total_cmp(&w[j])).unwrap_or(0);
            Vector::basis(*dim, i).scaled(*scale)
        }
        ConvexBody::Halfspaces(_) => match vertex_minimize(body, &[], func.as_ref()) {
            Some(o) => o.point,
            None => return ConvexObjective::new(func, positive(w.norm()), Some(0.0), None),
        },
    };
    let value = func.value(&point);
    ConvexObjective::new(func, w.norm().max(1e-12), Some(0.0), Some(Optimum { point, value }))
}

/// `½(⟨x, u⟩ − y)²` while `⟨x, u⟩` stays in the range the body allows, and
/// continued by its tangent lines outside that range.
#[derive(Debug)]
struct LeastSquaresTerm {
    x: Vector,
    y: f64,
    lo: f64,
    hi: f64,
}

impl LeastSquaresTerm {
    fn scalar(&self, s: f64) -> (f64, f64) {
        let c = s.clamp(self.lo, self.hi);
        let r = c - self.y;
        (0.5 * r * r + r * (s - c), r)
    }
}

impl Function for LeastSquaresTerm {
    fn dim(&self) -> usize {
        self.x.dim()
    }
    fn value(&self, u: &[f64]) -> f64 {
        self.scalar(dot(&self.x, u)).0
    }
    fn subgradient(&self, u: &[f64]) -> Vector {
        self.x.scaled(self.scalar(dot(&self.x, u)).1)
    }
}

/// Uniform average of functions.
#[derive(Debug)]
struct Average {
    parts: Vec<Arc<dyn Function>>,
}

impl Function for Average {
    fn dim(&self) -> usize {
        self.parts[0].dim()
    }
    fn value(&self, x: &[f64]) -> f64 {
        self.parts.iter().map(|p| p.value(x)).sum::<f64>() / self.parts.len() as f64
    }
    fn subgradient(&self, x: &[f64]) -> Vector {
        let mut acc = vec![0.0; x.len()];
        for p in &self.parts {
            for (a, g) in acc.iter_mut().zip(p.subgradient(x).iter()) {
                *a += g;
            }
        }
        let m = self.parts.len() as f64;
        Vector::from_vec_unchecked(acc.into_iter().map(|a| a / m).collect())
    }
}

/// Least-squares regression over a finite dataset, sampled one row at a time.
pub fn make_finite_dataset_regression(
    xs: Vec<Vector>,
    ys: Vec<f64>,
    body: &ConvexBody,
) -> Result<StochasticObjective> {
    if xs.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    if xs.len() != ys.len() {
        return Err(Error::InvalidArgument(format!(
            "dataset has {} rows but {} targets",
            xs.len(),
            ys.len()
        )));
    }
    check_finite(&ys, "dataset targets")?;
    let mut parts: Vec<Arc<dyn Function>> = Vec::with_capacity(xs.len());
    let mut g: f64 = 0.0;
    let mut lipschitz = 0.0;
    for (x, y) in xs.into_iter().zip(ys) {
        check_dim(body.dim(), x.dim())?;
        let (lo, hi) = body.support_range(&x)?;
        g = g.max(x.norm() * (lo - y).abs().max((hi - y).abs()));
        lipschitz += dot(&x, &x);
        parts.push(Arc::new(LeastSquaresTerm { x, y, lo, hi }));
    }
    lipschitz /= parts.len() as f64;
    let mean_fn = Arc::new(Average {
        parts: parts.clone(),
    });
    let optimum = smooth_minimize(mean_fn.as_ref(), body, lipschitz);
    let grad_bound = positive(g);
    let mean = ConvexObjective::new(mean_fn, grad_bound, Some(lipschitz), Some(optimum))?;
    StochasticObjective::new(parts, mean, grad_bound)
}

/// Accelerated projected gradient descent with restarts, run to stationarity.
fn smooth_minimize(f: &dyn Function, body: &ConvexBody, lipschitz: f64) -> Optimum {
    let step = 1.0 / lipschitz.max(1e-12);
    let mut x = body.reference_point();
    if lipschitz > 0.0 {
        let mut y = x.clone();
        let mut t: f64 = 1.0;
        let mut prev_value = f.value(&x);
        for _ in 0..200_000 {
            let g = f.subgradient(&y);
            let next = body.project_unchecked(&y.add_scaled(-step, &g));
            let value = f.value(&next);
            let moved = distance(&next, &x);
            if value > prev_value {
                // restart momentum
                t = 1.0;
                y = x.clone();
                continue;
            }
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let beta = (t - 1.0) / t_next;
            y = Vector::from_vec_unchecked(
                next.iter().zip(x.iter()).map(|(n, o)| n + beta * (n - o)).collect(),
            );
            x = next;
            t = t_next;
            prev_value = value;
            if moved <= 1e-15 * (1.0 + x.norm()) {
                break;
            }
        }
    }
    let value = f.value(&x);
    Optimum { point: x, value }
}

/// `weight·|uᵢ − aᵢ|`.
#[derive(Debug)]
struct CoordinateAbs {
    dim: usize,
    index: usize,
    target: f64,
    weight: f64,
}

impl Function for CoordinateAbs {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, x: &[f64]) -> f64 {
        self.weight * (x[self.index] - self.target).abs()
    }
    fn subgradient(&self, x: &[f64]) -> Vector {
        let mut g = vec![0.0; self.dim];
        g[self.index] = self.weight * sign(x[self.index] - self.target);
        Vector::from_vec_unchecked(g)
    }
}

/// Draws a coordinate `i` uniformly and returns `N·|uᵢ − aᵢ|`; the mean is
/// `‖u − a‖₁`.
pub fn make_stochastic_l1(a: Vector, body: &ConvexBody) -> Result<StochasticObjective> {
    let mean = make_l1(a.clone(), body)?;
    let n = a.dim();
    let components = (0..n)
        .map(|i| {
            Arc::new(CoordinateAbs {
                dim: n,
                index: i,
                target: a[i],
                weight: n as f64,
            }) as Arc<dyn Function>
        })
        .collect();
    StochasticObjective::new(components, mean, n as f64)
}

/// `f + coef·dist(·, C)`.
#[derive(Debug)]
pub struct Penalized {
    inner: Arc<dyn Function>,
    body: ConvexBody,
    coef: f64,
}

impl Penalized {
    pub fn new(inner: Arc<dyn Function>, body: ConvexBody, coef: f64) -> Self {
        Penalized { inner, body, coef }
    }
}

impl Function for Penalized {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn value(&self, x: &[f64]) -> f64 {
        self.inner.value(x) + self.coef * self.body.distance_unchecked(x)
    }
    fn subgradient(&self, x: &[f64]) -> Vector {
        let g = self.inner.subgradient(x);
        g.add_scaled(self.coef, &self.body.gauge_subgradient_unchecked(x))
    }
}

/// `h = f + 2G·ψ_C` with bound `3G`. Its unconstrained minimizers are the
/// minimizers of `f` on the body, so the optimum is inherited.
pub fn penalized(f: &ConvexObjective, body: &ConvexBody) -> Result<ConvexObjective> {
    check_dim(body.dim(), f.dim())?;
    let g = f.grad_bound();
    ConvexObjective::new(
        Arc::new(Penalized::new(f.func.clone(), body.clone(), 2.0 * g)),
        3.0 * g,
        None,
        f.optimum.clone(),
    )
}

/// Supporting-plane extension `max_k f(x_k) + ⟨∂f(x_k), y − x_k⟩` over a
/// fixed set of anchor points in the body.
#[derive(Debug, Clone)]
pub struct ConvexExtension {
    planes: Vec<(f64, Vector)>,
}

impl ConvexExtension {
    /// Anchors are the first `anchors` points of the Halton sequence on the
    /// body's bounding box inflated to twice its width, projected onto the
    /// body so that the boundary is covered as well as the interior.
    pub fn new(f: &ConvexObjective, body: &ConvexBody, anchors: usize) -> Result<Self> {
        check_dim(body.dim(), f.dim())?;
        if anchors == 0 {
            return Err(Error::InvalidArgument("extension needs at least one anchor".into()));
        }
        let planes = halton_points(body, anchors)
            .into_iter()
            .map(|x| {
                let g = f.func.subgradient(&x);
                // store the plane as (offset, slope): f(x) − ⟨g, x⟩ + ⟨g, y⟩
                (f.func.value(&x) - dot(&g, &x), g)
            })
            .collect();
        Ok(ConvexExtension { planes })
    }

    pub fn value(&self, y: &[f64]) -> f64 {
        self.planes
            .iter()
            .map(|(c, g)| c + dot(g, y))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

pub fn convex_extension(
    f: &ConvexObjective,
    body: &ConvexBody,
    anchors: usize,
    y: &[f64],
) -> Result<f64> {
    check_dim(body.dim(), y.len())?;
    check_finite(y, "point")?;
    Ok(ConvexExtension::new(f, body, anchors)?.value(y))
}

/// First `count` Halton points on the bounding box inflated to twice its
/// width, projected onto the body.
pub fn halton_points(body: &ConvexBody, count: usize) -> Vec<Vector> {
    let n = body.dim();
    let primes = first_primes(n);
    let (lower, upper) = body.bounding_box();
    (1..=count as u64)
        .map(|k| {
            let x: Vec<f64> = (0..n)
                .map(|i| {
                    let w = upper[i] - lower[i];
                    lower[i] - 0.5 * w + radical_inverse(k, primes[i]) * 2.0 * w
                })
                .collect();
            body.project_unchecked(&x)
        })
        .collect()
}

fn radical_inverse(mut k: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while k > 0 {
        r += (k % base) as f64 * f;
        k /= base;
        f *= inv;
    }
    r
}

fn first_primes(n: usize) -> Vec<u64> {
    let mut primes = Vec::with_capacity(n);
    let mut c = 2u64;
    while primes.len() < n {
        if primes.iter().take_while(|&&p| p * p <= c).all(|p| c % p != 0) {
            primes.push(c);
        }
        c += 1;
    }
    primes
}
