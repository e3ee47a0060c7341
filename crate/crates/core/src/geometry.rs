//! Compact convex bodies: exact (or Dykstra-iterated) Euclidean projections,
//! the distance gauge used for penalization, support vectors, local norms and
//! diameters.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;
use crate::vector::{check_dim, check_finite, distance, dot, norm, Vector};

/// Points within this distance of the boundary count as boundary points.
pub const BOUNDARY_TOL: f64 = 1e-9;
/// Stopping tolerance for Dykstra's alternating projections.
pub const DYKSTRA_TOL: f64 = 1e-12;
pub const DYKSTRA_MAX_ITER: usize = 10_000;
/// Membership tolerance used when certifying local-norm candidates on the
/// simplex, whose sphere points are only feasible up to rounding. Other bodies
/// use exact membership.
pub const LOCAL_NORM_FEASIBILITY_TOL: f64 = 1e-12;

/// Constraints this close to tight after Dykstra seed the exact finish.
const POLISH_ACTIVE_TOL: f64 = 1e-6;
const LOCAL_NORM_REFINE_CANDIDATES: usize = 10;
const LOCAL_NORM_BISECTION_STEPS: usize = 48;
const LOCAL_NORM_SEED: u64 = 0x10ca_1a0e_5eed;

/// One constraint `⟨normal, x⟩ ≤ offset` with a unit normal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Halfspace {
    pub normal: Vector,
    pub offset: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HalfspaceIntersection {
    constraints: Vec<Halfspace>,
    lower: Vector,
    upper: Vector,
    interior_point: Vector,
}

impl HalfspaceIntersection {
    pub fn constraints(&self) -> &[Halfspace] {
        &self.constraints
    }

    pub fn bounding_box(&self) -> (&Vector, &Vector) {
        (&self.lower, &self.upper)
    }

    pub fn interior_point(&self) -> &Vector {
        &self.interior_point
    }

    /// Largest violation over all constraints and box facets; `≤ 0` iff feasible.
    fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst = f64::NEG_INFINITY;
        for h in &self.constraints {
            worst = worst.max(dot(&h.normal, x) - h.offset);
        }
        for i in 0..x.len() {
            worst = worst.max(self.lower[i] - x[i]).max(x[i] - self.upper[i]);
        }
        worst
    }

    fn dykstra(&self, x: &[f64]) -> Vector {
        let n = x.len();
        let sets = self.constraints.len() + 1;
        let mut cur = x.to_vec();
        let mut increments = vec![vec![0.0; n]; sets];
        let mut shifted = vec![0.0; n];
        for _ in 0..DYKSTRA_MAX_ITER {
            // the iterate can repeat across a sweep while the increments still
            // move, so convergence is judged on both
            let mut moved = 0.0;
            for (k, inc) in increments.iter_mut().enumerate() {
                for i in 0..n {
                    shifted[i] = cur[i] + inc[i];
                }
                if k < self.constraints.len() {
                    let h = &self.constraints[k];
                    let excess = dot(&h.normal, &shifted) - h.offset;
                    for i in 0..n {
                        cur[i] = shifted[i] - excess.max(0.0) * h.normal[i];
                    }
                } else {
                    for i in 0..n {
                        cur[i] = shifted[i].clamp(self.lower[i], self.upper[i]);
                    }
                }
                for i in 0..n {
                    let next = shifted[i] - cur[i];
                    moved += (next - inc[i]).abs();
                    inc[i] = next;
                }
            }
            if moved <= DYKSTRA_TOL {
                break;
            }
        }
        match self.polish(x, &cur) {
            Some(exact) => Vector::from_vec_unchecked(exact),
            None => Vector::from_vec_unchecked(cur),
        }
    }

    /// Feasible vertices of the arrangement formed by the constraints, the
    /// box facets and the `extra` hyperplanes `⟨a, x⟩ = b`. A convex
    /// piecewise-linear function whose pieces are separated by `extra`
    /// attains its minimum over the body at one of them. Returns `None` when
    /// the enumeration would exceed `max_subsets` systems.
    pub fn arrangement_vertices(&self, extra: &[(Vec<f64>, f64)], max_subsets: usize) -> Option<Vec<Vector>> {
        let n = self.lower.dim();
        let mut planes = self.rows();
        for (a, b) in extra {
            if a.len() != n {
                return None;
            }
            planes.push((a.clone(), *b));
        }
        let h = planes.len();
        if binomial(h, n) > max_subsets as f64 {
            return None;
        }
        let mut out: Vec<Vector> = Vec::new();
        let mut idx: Vec<usize> = (0..n).collect();
        loop {
            if let Some(x) = solve_planes(&planes, &idx) {
                let scale = 1.0 + norm(&x);
                if self.max_violation(&x) <= 1e-9 * scale {
                    let p = if self.max_violation(&x) <= 0.0 { x } else { self.dykstra(&x).into_inner() };
                    out.push(Vector::from_vec_unchecked(p));
                }
            }
            // next n-subset in lexicographic order
            let mut k = n;
            loop {
                if k == 0 {
                    return Some(out);
                }
                k -= 1;
                if idx[k] < h - n + k {
                    break;
                }
            }
            idx[k] += 1;
            for j in k + 1..n {
                idx[j] = idx[j - 1] + 1;
            }
            if idx[n - 1] >= h {
                return Some(out);
            }
        }
    }

    /// Constraints followed by the box facets, as `⟨a, x⟩ ≤ b` rows.
    fn rows(&self) -> Vec<(Vec<f64>, f64)> {
        let n = self.lower.dim();
        let mut rows: Vec<(Vec<f64>, f64)> = self
            .constraints
            .iter()
            .map(|h| (h.normal.to_vec(), h.offset))
            .collect();
        for i in 0..n {
            let e = Vector::basis(n, i);
            rows.push((e.scaled(-1.0).into_inner(), -self.lower[i]));
            rows.push((e.into_inner(), self.upper[i]));
        }
        rows
    }

    /// Exact finish for Dykstra, whose convergence is only linear near sharp
    /// corners: solve the projection onto the constraints nearly active at
    /// `approx` as equalities and accept the result if it satisfies the KKT
    /// conditions (feasible, nonnegative multipliers).
    fn polish(&self, x: &[f64], approx: &[f64]) -> Option<Vec<f64>> {
        let n = x.len();
        let rows = self.rows();
        let scale = 1.0 + norm(x);
        let mut active: Vec<usize> = (0..rows.len())
            .filter(|&k| dot(&rows[k].0, approx) - rows[k].1 >= -POLISH_ACTIVE_TOL * scale)
            .collect();
        for _ in 0..=rows.len() {
            let basis = independent_rows(&rows, &active);
            let lambda = solve_gram(&rows, &basis, x)?;
            let mut y = x.to_vec();
            for (&k, l) in basis.iter().zip(&lambda) {
                for i in 0..n {
                    y[i] -= l * rows[k].0[i];
                }
            }
            let negative = basis
                .iter()
                .zip(&lambda)
                .filter(|(_, l)| **l < 0.0)
                .min_by(|a, b| a.1.total_cmp(b.1))
                .map(|(k, _)| *k);
            match negative {
                Some(k) => active.retain(|&j| j != k),
                None => {
                    return (self.max_violation(&y) <= 1e-12 * scale).then_some(y);
                }
            }
        }
        None
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Intersection point of the selected hyperplanes, if they are independent.
fn solve_planes(planes: &[(Vec<f64>, f64)], sel: &[usize]) -> Option<Vec<f64>> {
    let n = sel.len();
    let mut a: Vec<Vec<f64>> = sel
        .iter()
        .map(|&i| {
            let mut row = planes[i].0.clone();
            row.push(planes[i].1);
            row
        })
        .collect();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
        if a[p][c].abs() < 1e-12 {
            return None;
        }
        a.swap(c, p);
        for r in 0..n {
            if r != c {
                let f = a[r][c] / a[c][c];
                for k in c..=n {
                    a[r][k] -= f * a[c][k];
                }
            }
        }
    }
    Some((0..n).map(|i| a[i][n] / a[i][i]).collect())
}

/// Greedy subset of `candidates` whose rows are linearly independent.
fn independent_rows(rows: &[(Vec<f64>, f64)], candidates: &[usize]) -> Vec<usize> {
    let mut q: Vec<Vec<f64>> = Vec::new();
    let mut kept = Vec::new();
    for &k in candidates {
        let mut r = rows[k].0.clone();
        for b in &q {
            let c = dot(&r, b);
            for (ri, bi) in r.iter_mut().zip(b) {
                *ri -= c * bi;
            }
        }
        let len = norm(&r);
        if len > 1e-10 {
            q.push(r.iter().map(|c| c / len).collect());
            kept.push(k);
        }
    }
    kept
}

/// Multipliers `λ` with `(A Aᵀ) λ = A x − b` over the selected rows, by
/// Gaussian elimination with partial pivoting.
fn solve_gram(rows: &[(Vec<f64>, f64)], sel: &[usize], x: &[f64]) -> Option<Vec<f64>> {
    let m = sel.len();
    let mut a: Vec<Vec<f64>> = sel
        .iter()
        .map(|&i| {
            let mut row: Vec<f64> = sel.iter().map(|&j| dot(&rows[i].0, &rows[j].0)).collect();
            row.push(dot(&rows[i].0, x) - rows[i].1);
            row
        })
        .collect();
    for c in 0..m {
        let p = (c..m).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
        if a[p][c].abs() < 1e-14 {
            return None;
        }
        a.swap(c, p);
        for r in 0..m {
            if r != c {
                let f = a[r][c] / a[c][c];
                for k in c..=m {
                    a[r][k] -= f * a[c][k];
                }
            }
        }
    }
    Some((0..m).map(|i| a[i][m] / a[i][i]).collect())
}

/// A compact convex subset of ℝᴺ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BodySpec", into = "BodySpec")]
pub enum ConvexBody {
    Ball { center: Vector, radius: f64 },
    Box { lower: Vector, upper: Vector },
    /// `{x ∈ ℝ^dim : x ≥ 0, Σ xᵢ = scale}`
    Simplex { dim: usize, scale: f64 },
    Halfspaces(HalfspaceIntersection),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum BodySpec {
    Ball {
        center: Vector,
        radius: f64,
    },
    Box {
        lower: Vector,
        upper: Vector,
    },
    Simplex {
        dim: usize,
        scale: f64,
    },
    Halfspaces {
        constraints: Vec<Halfspace>,
        bounding_box: BoxSpec,
        interior_point: Vector,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSpec {
    pub lower: Vector,
    pub upper: Vector,
}

impl TryFrom<BodySpec> for ConvexBody {
    type Error = Error;
    fn try_from(spec: BodySpec) -> Result<Self> {
        match spec {
            BodySpec::Ball { center, radius } => ConvexBody::ball(center, radius),
            BodySpec::Box { lower, upper } => ConvexBody::cube(lower, upper),
            BodySpec::Simplex { dim, scale } => ConvexBody::simplex(dim, scale),
            BodySpec::Halfspaces {
                constraints,
                bounding_box,
                interior_point,
            } => ConvexBody::halfspaces(
                constraints,
                bounding_box.lower,
                bounding_box.upper,
                interior_point,
            ),
        }
    }
}

impl From<ConvexBody> for BodySpec {
    fn from(body: ConvexBody) -> Self {
        match body {
            ConvexBody::Ball { center, radius } => BodySpec::Ball { center, radius },
            ConvexBody::Box { lower, upper } => BodySpec::Box { lower, upper },
            ConvexBody::Simplex { dim, scale } => BodySpec::Simplex { dim, scale },
            ConvexBody::Halfspaces(h) => BodySpec::Halfspaces {
                constraints: h.constraints,
                bounding_box: BoxSpec {
                    lower: h.lower,
                    upper: h.upper,
                },
                interior_point: h.interior_point,
            },
        }
    }
}

/// Arguments of a local-norm evaluation `‖u‖_C(p; r)`.
#[derive(Clone, Debug)]
pub struct LocalNormQuery {
    pub p: Vector,
    pub u: Vector,
    pub r: f64,
    pub samples: usize,
}

impl ConvexBody {
    pub fn ball(center: Vector, radius: f64) -> Result<Self> {
        if !(radius.is_finite() && radius > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "ball radius must be positive and finite, got {radius}"
            )));
        }
        if center.dim() == 0 {
            return Err(Error::InvalidArgument("ball center has dimension 0".into()));
        }
        Ok(ConvexBody::Ball { center, radius })
    }

    /// Axis-aligned box `[lower, upper]`.
    pub fn cube(lower: Vector, upper: Vector) -> Result<Self> {
        check_dim(lower.dim(), upper.dim())?;
        if lower.dim() == 0 {
            return Err(Error::InvalidArgument("box has dimension 0".into()));
        }
        if lower.iter().zip(upper.iter()).any(|(l, u)| l > u) {
            return Err(Error::InvalidArgument(
                "box requires lower <= upper coordinatewise".into(),
            ));
        }
        Ok(ConvexBody::Box { lower, upper })
    }

    pub fn unit_box(dim: usize) -> Self {
        ConvexBody::Box {
            lower: Vector::zeros(dim),
            upper: Vector::from_vec_unchecked(vec![1.0; dim]),
        }
    }

    pub fn simplex(dim: usize, scale: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("simplex has dimension 0".into()));
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "simplex scale must be positive and finite, got {scale}"
            )));
        }
        Ok(ConvexBody::Simplex { dim, scale })
    }

    /// Intersection of halfspaces with a bounding box. Normals are rescaled to
    /// unit length; `interior_point` must satisfy every constraint.
    pub fn halfspaces(
        constraints: Vec<Halfspace>,
        lower: Vector,
        upper: Vector,
        interior_point: Vector,
    ) -> Result<Self> {
        let ConvexBody::Box { lower, upper } = ConvexBody::cube(lower, upper)? else {
            unreachable!()
        };
        let dim = lower.dim();
        check_dim(dim, interior_point.dim())?;
        let mut normalized = Vec::with_capacity(constraints.len());
        for h in constraints {
            check_dim(dim, h.normal.dim())?;
            let n = h.normal.norm();
            if n == 0.0 || !h.offset.is_finite() {
                return Err(Error::InvalidArgument(
                    "halfspace normal must be nonzero with a finite offset".into(),
                ));
            }
            normalized.push(Halfspace {
                normal: h.normal.scaled(1.0 / n),
                offset: h.offset / n,
            });
        }
        let body = HalfspaceIntersection {
            constraints: normalized,
            lower,
            upper,
            interior_point,
        };
        if body.max_violation(&body.interior_point) > 0.0 {
            return Err(Error::InvalidArgument(
                "interior point does not certify a nonempty intersection".into(),
            ));
        }
        Ok(ConvexBody::Halfspaces(body))
    }

    pub fn dim(&self) -> usize {
        match self {
            ConvexBody::Ball { center, .. } => center.dim(),
            ConvexBody::Box { lower, .. } => lower.dim(),
            ConvexBody::Simplex { dim, .. } => *dim,
            ConvexBody::Halfspaces(h) => h.lower.dim(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            ConvexBody::Ball { .. } => "ball",
            ConvexBody::Box { .. } => "box",
            ConvexBody::Simplex { .. } => "simplex",
            ConvexBody::Halfspaces(_) => "halfspaces",
        }
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        check_dim(self.dim(), x.len())?;
        check_finite(x, "point")
    }

    /// A fixed member of the body: ball center, box midpoint, simplex
    /// barycenter, or the certified interior point.
    pub fn reference_point(&self) -> Vector {
        match self {
            ConvexBody::Ball { center, .. } => center.clone(),
            ConvexBody::Box { lower, upper } => (lower + upper).scaled(0.5),
            ConvexBody::Simplex { dim, scale } => {
                Vector::from_vec_unchecked(vec![scale / *dim as f64; *dim])
            }
            ConvexBody::Halfspaces(h) => h.interior_point.clone(),
        }
    }

    /// Smallest axis-aligned box containing the body.
    pub fn bounding_box(&self) -> (Vector, Vector) {
        match self {
            ConvexBody::Ball { center, radius } => (
                Vector::from_vec_unchecked(center.iter().map(|c| c - radius).collect()),
                Vector::from_vec_unchecked(center.iter().map(|c| c + radius).collect()),
            ),
            ConvexBody::Box { lower, upper } => (lower.clone(), upper.clone()),
            ConvexBody::Simplex { dim, scale } => (
                Vector::zeros(*dim),
                Vector::from_vec_unchecked(vec![*scale; *dim]),
            ),
            ConvexBody::Halfspaces(h) => (h.lower.clone(), h.upper.clone()),
        }
    }

    /// Euclidean projection onto the body.
    pub fn project(&self, x: &[f64]) -> Result<Vector> {
        self.check_input(x)?;
        Ok(self.project_unchecked(x))
    }

    pub(crate) fn project_unchecked(&self, x: &[f64]) -> Vector {
        match self {
            ConvexBody::Ball { center, radius } => {
                let d = distance(x, center);
                if d <= *radius {
                    Vector::from_vec_unchecked(x.to_vec())
                } else {
                    let s = radius / d;
                    Vector::from_vec_unchecked(
                        x.iter()
                            .zip(center.iter())
                            .map(|(xi, ci)| ci + (xi - ci) * s)
                            .collect(),
                    )
                }
            }
            ConvexBody::Box { lower, upper } => Vector::from_vec_unchecked(
                x.iter()
                    .zip(lower.iter().zip(upper.iter()))
                    .map(|(xi, (l, u))| xi.clamp(*l, *u))
                    .collect(),
            ),
            ConvexBody::Simplex { scale, .. } => project_simplex(x, *scale),
            ConvexBody::Halfspaces(h) => {
                if h.max_violation(x) <= 0.0 {
                    Vector::from_vec_unchecked(x.to_vec())
                } else {
                    h.dykstra(x)
                }
            }
        }
    }

    pub fn distance_to_set(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        Ok(self.distance_unchecked(x))
    }

    pub(crate) fn distance_unchecked(&self, x: &[f64]) -> f64 {
        distance(x, &self.project_unchecked(x))
    }

    /// `distance_to_set(x) ≤ tol`.
    pub fn membership(&self, x: &[f64], tol: f64) -> Result<bool> {
        self.check_input(x)?;
        Ok(self.contains_unchecked(x, tol))
    }

    pub(crate) fn contains_unchecked(&self, x: &[f64], tol: f64) -> bool {
        if let ConvexBody::Halfspaces(h) = self {
            // dist(x, C) is at least the violation of any single constraint.
            let v = h.max_violation(x);
            if v <= 0.0 {
                return true;
            }
            if v > tol {
                return false;
            }
        }
        self.distance_unchecked(x) <= tol
    }

    /// The penalization gauge ψ_C. For a compact convex body the supremum of
    /// support-plane affine functions equals the Euclidean distance to the body.
    pub fn gauge_value(&self, x: &[f64]) -> Result<f64> {
        self.distance_to_set(x)
    }

    /// Chosen subgradient of ψ_C: the unit outward direction `(x − π(x)) / ‖x − π(x)‖`
    /// outside the body, zero on it.
    pub fn gauge_subgradient(&self, x: &[f64]) -> Result<Vector> {
        self.check_input(x)?;
        Ok(self.gauge_subgradient_unchecked(x))
    }

    pub(crate) fn gauge_subgradient_unchecked(&self, x: &[f64]) -> Vector {
        let p = self.project_unchecked(x);
        let d = distance(x, &p);
        if d > BOUNDARY_TOL {
            Vector::from_vec_unchecked(x.iter().zip(p.iter()).map(|(a, b)| (a - b) / d).collect())
        } else {
            Vector::zeros(x.len())
        }
    }

    /// A unit outward normal at a boundary point. At corners the active facet
    /// normals are averaged and renormalized.
    pub fn support_vector(&self, x: &[f64]) -> Result<Vector> {
        self.check_input(x)?;
        let dist = self.distance_unchecked(x);
        if dist > BOUNDARY_TOL {
            return Err(Error::NotOnBoundary { distance: dist });
        }
        let n = x.len();
        let interior = || Error::NotOnBoundary { distance: 0.0 };
        match self {
            ConvexBody::Ball { center, radius } => {
                let d = distance(x, center);
                if d < radius - BOUNDARY_TOL {
                    return Err(interior());
                }
                Ok(Vector::from_vec_unchecked(
                    x.iter().zip(center.iter()).map(|(a, c)| (a - c) / d).collect(),
                ))
            }
            ConvexBody::Box { lower, upper } => {
                let active = box_active_normals(x, lower, upper);
                average_normals(n, active).ok_or_else(interior)
            }
            ConvexBody::Simplex { dim, .. } => {
                let active: Vec<Vector> = (0..*dim)
                    .filter(|&i| x[i] <= BOUNDARY_TOL)
                    .map(|i| Vector::basis(n, i).scaled(-1.0))
                    .collect();
                // The simplex has empty interior in ℝᴺ; in its relative
                // interior the all-ones direction is a support vector.
                Ok(average_normals(n, active).unwrap_or_else(|| {
                    Vector::from_vec_unchecked(vec![1.0 / (n as f64).sqrt(); n])
                }))
            }
            ConvexBody::Halfspaces(h) => {
                let mut active: Vec<Vector> = h
                    .constraints
                    .iter()
                    .filter(|c| dot(&c.normal, x) >= c.offset - BOUNDARY_TOL)
                    .map(|c| c.normal.clone())
                    .collect();
                active.extend(box_active_normals(x, &h.lower, &h.upper));
                average_normals(n, active).ok_or_else(interior)
            }
        }
    }

    /// Upper bound on the distance between two members.
    pub fn diameter(&self) -> f64 {
        match self {
            ConvexBody::Ball { radius, .. } => 2.0 * radius,
            ConvexBody::Box { lower, upper } => distance(lower, upper),
            // Exact for dim ≥ 2; the one-point simplex reports the same bound.
            ConvexBody::Simplex { scale, .. } => scale * std::f64::consts::SQRT_2,
            ConvexBody::Halfspaces(h) => distance(&h.lower, &h.upper),
        }
    }

    /// `sup_{x ∈ C} ‖x − a‖`, exact except for halfspace bodies where the
    /// bounding box is used.
    pub fn max_distance_from(&self, a: &[f64]) -> Result<f64> {
        self.check_input(a)?;
        Ok(match self {
            ConvexBody::Ball { center, radius } => distance(center, a) + radius,
            ConvexBody::Box { lower, upper } => box_max_distance(lower, upper, a),
            ConvexBody::Simplex { dim, scale } => (0..*dim)
                .map(|i| {
                    let mut v = vec![0.0; *dim];
                    v[i] = *scale;
                    distance(&v, a)
                })
                .fold(0.0, f64::max),
            ConvexBody::Halfspaces(h) => box_max_distance(&h.lower, &h.upper, a),
        })
    }

    /// `(min, max)` of `⟨w, x⟩` over the body (bounding box for halfspace bodies).
    pub fn support_range(&self, w: &[f64]) -> Result<(f64, f64)> {
        self.check_input(w)?;
        Ok(match self {
            ConvexBody::Ball { center, radius } => {
                let c = dot(w, center);
                let s = radius * norm(w);
                (c - s, c + s)
            }
            ConvexBody::Box { lower, upper } => box_support_range(lower, upper, w),
            ConvexBody::Simplex { scale, .. } => {
                let lo = w.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                (scale * lo, scale * hi)
            }
            ConvexBody::Halfspaces(h) => box_support_range(&h.lower, &h.upper, w),
        })
    }

    /// Certified lower estimate of the local norm
    /// `sup { max(⟨u, v − p⟩ / r, 0) : v ∈ C, ‖v − p‖ = r }`.
    ///
    /// Candidate sphere directions come from seeded Gaussian sampling, from
    /// radial rescaling of projected samples, and from `u` itself; every
    /// candidate point `p + r·d` is accepted only if it passes the membership
    /// test. The best candidates are then refined by bisection along the great
    /// circle towards `u` and by small random tangent moves. Returns 0 when no
    /// feasible point on the sphere is found.
    pub fn local_norm(&self, q: &LocalNormQuery) -> Result<f64> {
        let n = self.dim();
        check_dim(n, q.p.dim())?;
        check_dim(n, q.u.dim())?;
        if !(q.r.is_finite() && q.r > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "local norm scale must be positive, got {}",
                q.r
            )));
        }
        if q.samples == 0 {
            return Err(Error::InvalidArgument("local norm needs at least one sample".into()));
        }
        if !self.contains_unchecked(&q.p, BOUNDARY_TOL) {
            return Err(Error::NotInBody("local norm base point".into()));
        }
        let unorm = q.u.norm();
        if unorm == 0.0 {
            return Ok(0.0);
        }
        let uhat = q.u.scaled(1.0 / unorm);
        let mut search = SphereSearch {
            body: self,
            p: &q.p,
            r: q.r,
            uhat: &uhat,
        };
        let best = search.run(q.samples);
        Ok((unorm * best).clamp(0.0, unorm))
    }
}

struct SphereSearch<'a> {
    body: &'a ConvexBody,
    p: &'a [f64],
    r: f64,
    uhat: &'a [f64],
}

impl SphereSearch<'_> {
    fn feasible(&self, d: &[f64]) -> bool {
        let v: Vec<f64> = self.p.iter().zip(d).map(|(pi, di)| pi + self.r * di).collect();
        let tol = match self.body {
            ConvexBody::Simplex { scale, .. } => LOCAL_NORM_FEASIBILITY_TOL * scale.max(1.0),
            _ => 0.0,
        };
        self.body.contains_unchecked(&v, tol)
    }

    fn score(&self, d: &[f64]) -> f64 {
        dot(self.uhat, d)
    }

    /// Direction from `p` to the projection of `p + scale·d`, if nonzero.
    fn projected_direction(&self, d: &[f64], scale: f64) -> Option<Vec<f64>> {
        let y: Vec<f64> = self.p.iter().zip(d).map(|(pi, di)| pi + scale * di).collect();
        let w = self.body.project_unchecked(&y);
        let delta: Vec<f64> = w.iter().zip(self.p).map(|(a, b)| a - b).collect();
        unit(&delta)
    }

    fn run(&mut self, samples: usize) -> f64 {
        let n = self.p.len();
        let mut rng = rng_from_seed(LOCAL_NORM_SEED);
        let mut pool: Vec<(f64, Vec<f64>)> = Vec::new();
        let mut consider = |d: Vec<f64>, this: &Self| {
            if this.feasible(&d) {
                pool.push((this.score(&d), d));
            }
        };
        let uhat = self.uhat.to_vec();
        consider(uhat.clone(), self);
        let proj_u = self.projected_direction(&uhat, self.r);
        if let Some(d) = proj_u.clone() {
            consider(d, self);
        }
        for _ in 0..samples {
            let g: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            let Some(d) = unit(&g) else { continue };
            if let Some(pd) = self.projected_direction(&d, self.r) {
                consider(pd, self);
            }
            consider(d, self);
        }
        if pool.is_empty() {
            return 0.0;
        }
        pool.sort_by(|a, b| b.0.total_cmp(&a.0));
        pool.truncate(LOCAL_NORM_REFINE_CANDIDATES);

        let mut targets = vec![uhat];
        targets.extend(proj_u);
        let mut best = pool[0].0;
        for (_, start) in pool {
            let mut d = start;
            let mut s = self.score(&d);
            for t in &targets {
                let cand = self.bisect_towards(&d, t);
                let cs = self.score(&cand);
                if cs > s {
                    d = cand;
                    s = cs;
                }
            }
            let mut step = 0.1;
            while step > 1e-5 {
                let mut improved = false;
                for _ in 0..4 {
                    let g: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
                    let moved: Vec<f64> = d.iter().zip(&g).map(|(a, b)| a + step * b).collect();
                    let Some(moved) = unit(&moved) else { continue };
                    if !self.feasible(&moved) {
                        continue;
                    }
                    let cand = self.bisect_towards(&moved, self.uhat);
                    let cs = self.score(&cand);
                    if cs > s {
                        d = cand;
                        s = cs;
                        improved = true;
                    }
                }
                if !improved {
                    step *= 0.5;
                }
            }
            best = best.max(s);
        }
        best.max(0.0)
    }

    /// Walks from the feasible direction `from` along the normalized chord to
    /// `target`, returning the farthest feasible direction found by bisection.
    fn bisect_towards(&self, from: &[f64], target: &[f64]) -> Vec<f64> {
        let lerp = |lambda: f64| -> Option<Vec<f64>> {
            let v: Vec<f64> = from
                .iter()
                .zip(target)
                .map(|(a, b)| (1.0 - lambda) * a + lambda * b)
                .collect();
            unit(&v)
        };
        if let Some(t) = lerp(1.0) {
            if self.feasible(&t) {
                return t;
            }
        }
        let (mut lo, mut hi) = (0.0, 1.0);
        let mut best = from.to_vec();
        for _ in 0..LOCAL_NORM_BISECTION_STEPS {
            let mid = 0.5 * (lo + hi);
            match lerp(mid) {
                Some(d) if self.feasible(&d) => {
                    lo = mid;
                    best = d;
                }
                _ => hi = mid,
            }
        }
        best
    }
}

fn unit(v: &[f64]) -> Option<Vec<f64>> {
    let n = norm(v);
    if n > 1e-300 && n.is_finite() {
        Some(v.iter().map(|c| c / n).collect())
    } else {
        None
    }
}

fn box_active_normals(x: &[f64], lower: &[f64], upper: &[f64]) -> Vec<Vector> {
    let n = x.len();
    let mut active = Vec::new();
    for i in 0..n {
        if x[i] <= lower[i] + BOUNDARY_TOL {
            active.push(Vector::basis(n, i).scaled(-1.0));
        }
        if x[i] >= upper[i] - BOUNDARY_TOL {
            active.push(Vector::basis(n, i));
        }
    }
    active
}

fn average_normals(n: usize, active: Vec<Vector>) -> Option<Vector> {
    let first = active.first()?.clone();
    let mut sum = vec![0.0; n];
    for v in &active {
        for (s, c) in sum.iter_mut().zip(v.iter()) {
            *s += c;
        }
    }
    Some(unit(&sum).map(Vector::from_vec_unchecked).unwrap_or(first))
}

fn box_max_distance(lower: &[f64], upper: &[f64], a: &[f64]) -> f64 {
    lower
        .iter()
        .zip(upper)
        .zip(a)
        .map(|((l, u), ai)| {
            let m = (l - ai).abs().max((u - ai).abs());
            m * m
        })
        .sum::<f64>()
        .sqrt()
}

fn box_support_range(lower: &[f64], upper: &[f64], w: &[f64]) -> (f64, f64) {
    let mut lo = 0.0;
    let mut hi = 0.0;
    for ((l, u), wi) in lower.iter().zip(upper).zip(w) {
        let (a, b) = (wi * l, wi * u);
        lo += a.min(b);
        hi += a.max(b);
    }
    (lo, hi)
}

/// Sort-and-threshold projection onto `{x ≥ 0, Σx = scale}`.
fn project_simplex(x: &[f64], scale: f64) -> Vector {
    let sum: f64 = x.iter().sum();
    if x.iter().all(|&c| c >= 0.0) && (sum - scale).abs() <= 1e-15 * scale.max(1.0) {
        return Vector::from_vec_unchecked(x.to_vec());
    }
    let mut sorted = x.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (j, &mu) in sorted.iter().enumerate() {
        cumulative += mu;
        let t = (cumulative - scale) / (j + 1) as f64;
        if mu - t > 0.0 {
            theta = t;
        }
    }
    Vector::from_vec_unchecked(x.iter().map(|&c| (c - theta).max(0.0)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(c: &[f64]) -> Vector {
        Vector::new(c.to_vec()).unwrap()
    }

    fn unit_ball(n: usize) -> ConvexBody {
        ConvexBody::ball(Vector::zeros(n), 1.0).unwrap()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        distance(a, b) <= tol
    }

    #[test]
    fn project_examples() {
        assert_eq!(unit_ball(2).project(&[2.0, 0.0]).unwrap().as_slice(), &[1.0, 0.0]);
        let b = ConvexBody::unit_box(2);
        assert_eq!(b.project(&[-0.5, 0.5]).unwrap().as_slice(), &[0.0, 0.5]);
        let s = ConvexBody::simplex(2, 1.0).unwrap();
        assert!(close(&s.project(&[1.0, 1.0]).unwrap(), &[0.5, 0.5], 1e-12));
    }

    #[test]
    fn simplex_projection_matches_grid_oracle() {
        // brute force over the segment {(t, 1 - t)} at spacing 1e-3
        let x = [1.0, 1.0];
        let mut best = (f64::INFINITY, [0.0, 0.0]);
        for k in 0..=1000 {
            let t = k as f64 * 1e-3;
            let y = [t, 1.0 - t];
            let d = distance(&x, &y);
            if d < best.0 {
                best = (d, y);
            }
        }
        let s = ConvexBody::simplex(2, 1.0).unwrap();
        assert!(close(&s.project(&x).unwrap(), &best.1, 1e-9));
    }

    #[test]
    fn project_rejects_bad_input() {
        let b = unit_ball(2);
        assert!(matches!(
            b.project(&[1.0, 2.0, 3.0]),
            Err(Error::DimensionMismatch { expected: 2, found: 3 })
        ));
        assert!(matches!(b.project(&[f64::NAN, 0.0]), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn membership_examples() {
        assert!(unit_ball(2).membership(&[0.5, 0.0], 0.0).unwrap());
        assert!(!unit_ball(2).membership(&[1.0 + 1e-6, 0.0], 1e-9).unwrap());
        assert!(ConvexBody::unit_box(2).membership(&[1.0, 1.0], 0.0).unwrap());
        assert!(unit_ball(2).membership(&[1.0], 0.0).is_err());
    }

    #[test]
    fn distance_examples() {
        assert_eq!(unit_ball(2).distance_to_set(&[3.0, 0.0]).unwrap(), 2.0);
        assert_eq!(unit_ball(2).distance_to_set(&[0.3, -0.2]).unwrap(), 0.0);
        let d = ConvexBody::unit_box(2).distance_to_set(&[2.0, 2.0]).unwrap();
        assert!((d - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn gauge_examples() {
        let b = ConvexBody::unit_box(2);
        assert_eq!(b.gauge_value(&[0.2, 0.9]).unwrap(), 0.0);
        assert_eq!(unit_ball(2).gauge_value(&[2.0, 0.0]).unwrap(), 1.0);
        assert_eq!(b.gauge_value(&[2.0, 0.5]).unwrap(), 1.0);
    }

    #[test]
    fn gauge_matches_sampled_support_planes_on_box() {
        // sup over 10⁴ boundary points x' with support vectors v' of ⟨v', x − x'⟩
        let b = ConvexBody::unit_box(2);
        let x = [2.0, 0.5];
        let mut sup: f64 = 0.0;
        for k in 0..10_000 {
            let t = (k % 2500) as f64 / 2499.0;
            let xp = match k / 2500 {
                0 => [t, 0.0],
                1 => [1.0, t],
                2 => [t, 1.0],
                _ => [0.0, t],
            };
            let sv = b.support_vector(&xp).unwrap();
            sup = sup.max(sv.dot(&[x[0] - xp[0], x[1] - xp[1]]));
        }
        assert!((sup - 1.0).abs() < 1e-12);
        assert_eq!(b.gauge_value(&x).unwrap(), 1.0);
    }

    #[test]
    fn gauge_subgradient_examples() {
        assert_eq!(unit_ball(2).gauge_subgradient(&[2.0, 0.0]).unwrap().as_slice(), &[1.0, 0.0]);
        assert_eq!(unit_ball(2).gauge_subgradient(&[0.1, 0.2]).unwrap().as_slice(), &[0.0, 0.0]);
        let g = ConvexBody::unit_box(2).gauge_subgradient(&[2.0, 2.0]).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!(close(&g, &[h, h], 1e-15));
        // on the boundary
        assert_eq!(unit_ball(2).gauge_subgradient(&[1.0, 0.0]).unwrap().as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn support_vector_examples() {
        assert_eq!(unit_ball(2).support_vector(&[1.0, 0.0]).unwrap().as_slice(), &[1.0, 0.0]);
        let b = ConvexBody::unit_box(2);
        assert_eq!(b.support_vector(&[0.5, 1.0]).unwrap().as_slice(), &[0.0, 1.0]);
        let corner = b.support_vector(&[1.0, 1.0]).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!(close(&corner, &[h, h], 1e-15));
        // grid enumeration: sup over y ∈ grid(C) of ⟨v, y − x⟩ ≤ 0
        let mut sup = f64::NEG_INFINITY;
        for i in 0..=100 {
            for j in 0..=100 {
                let y = [i as f64 / 100.0, j as f64 / 100.0];
                sup = sup.max(corner.dot(&[y[0] - 1.0, y[1] - 1.0]));
            }
        }
        assert!(sup <= 0.0);
    }

    #[test]
    fn support_vector_rejects_interior_and_exterior() {
        let b = ConvexBody::unit_box(2);
        assert!(matches!(b.support_vector(&[0.5, 0.5]), Err(Error::NotOnBoundary { .. })));
        assert!(matches!(b.support_vector(&[1.5, 0.5]), Err(Error::NotOnBoundary { .. })));
        let msg = b.support_vector(&[0.5, 0.5]).unwrap_err().to_string();
        assert!(msg.contains("interior or exterior point"));
    }

    #[test]
    fn simplex_support_vectors_are_valid() {
        let s = ConvexBody::simplex(3, 1.0).unwrap();
        for x in [[1.0, 0.0, 0.0], [0.5, 0.5, 0.0], [0.2, 0.3, 0.5]] {
            let sv = s.support_vector(&x).unwrap();
            assert!((sv.norm() - 1.0).abs() < 1e-12);
            for y in [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]] {
                let diff: Vec<f64> = y.iter().zip(&x).map(|(a, b)| a - b).collect();
                assert!(sv.dot(&diff) <= 1e-12);
            }
        }
    }

    fn lnq(p: &[f64], u: &[f64], r: f64) -> LocalNormQuery {
        LocalNormQuery {
            p: v(p),
            u: v(u),
            r,
            samples: 256,
        }
    }

    #[test]
    fn local_norm_examples() {
        let ball = unit_ball(2);
        assert!((ball.local_norm(&lnq(&[0.0, 0.0], &[1.0, 0.0], 0.5)).unwrap() - 1.0).abs() < 1e-12);
        let b = ConvexBody::unit_box(2);
        assert_eq!(b.local_norm(&lnq(&[0.0, 0.0], &[-1.0, 0.0], 0.1)).unwrap(), 0.0);
    }

    #[test]
    fn local_norm_matches_arc_enumeration() {
        let b = ConvexBody::unit_box(2);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let (p, u, r) = ([0.0, 0.0], [h, -h], 0.1);
        // dense enumeration of the sphere at 1e-4 angular resolution
        let steps = (2.0 * std::f64::consts::PI / 1e-4) as usize;
        let mut oracle: f64 = 0.0;
        for k in 0..steps {
            let th = k as f64 * 1e-4;
            let pt = [p[0] + r * th.cos(), p[1] + r * th.sin()];
            if b.membership(&pt, 1e-12).unwrap() {
                oracle = oracle.max((u[0] * (pt[0] - p[0]) + u[1] * (pt[1] - p[1])) / r);
            }
        }
        assert!((oracle - h).abs() < 1e-9);
        let est = b.local_norm(&lnq(&p, &u, r)).unwrap();
        assert!((est - oracle).abs() < 1e-6, "estimate {est} vs oracle {oracle}");
    }

    #[test]
    fn local_norm_errors() {
        let b = ConvexBody::unit_box(2);
        assert!(b.local_norm(&lnq(&[0.5, 0.5], &[1.0, 0.0], 0.0)).is_err());
        assert!(b.local_norm(&lnq(&[0.5, 0.5], &[1.0, 0.0], -1.0)).is_err());
        assert!(matches!(
            b.local_norm(&lnq(&[1.5, 0.5], &[1.0, 0.0], 0.1)),
            Err(Error::NotInBody(_))
        ));
    }

    #[test]
    fn local_norm_on_simplex_finds_in_plane_directions() {
        // the simplex has empty interior, so only projected candidates are feasible
        let s = ConvexBody::simplex(2, 1.0).unwrap();
        let est = s
            .local_norm(&lnq(&[0.5, 0.5], &[1.0, -1.0], 0.1))
            .unwrap();
        assert!((est - 2f64.sqrt()).abs() < 1e-9, "{est}");
    }

    #[test]
    fn diameter_examples() {
        assert_eq!(unit_ball(2).diameter(), 2.0);
        assert!((ConvexBody::unit_box(3).diameter() - 3f64.sqrt()).abs() < 1e-15);
        assert!((ConvexBody::simplex(2, 1.0).unwrap().diameter() - 2f64.sqrt()).abs() < 1e-15);
    }

    fn triangle() -> ConvexBody {
        // {x ∈ [0,1]² : x₁ + x₂ ≤ 1}
        ConvexBody::halfspaces(
            vec![Halfspace {
                normal: v(&[1.0, 1.0]),
                offset: 1.0,
            }],
            v(&[0.0, 0.0]),
            v(&[1.0, 1.0]),
            v(&[0.25, 0.25]),
        )
        .unwrap()
    }

    #[test]
    fn dykstra_does_not_stop_at_a_repeated_corner() {
        // the first two sweeps both land on the box corner (-1, -1), which
        // violates the halfspace
        let body = ConvexBody::halfspaces(
            vec![Halfspace {
                normal: v(&[-0.9238133579975549, 0.382843152720904]),
                offset: 0.12130573411870184,
            }],
            v(&[-1.0, -1.0]),
            v(&[1.0, 1.0]),
            v(&[0.0, 0.0]),
        )
        .unwrap();
        let x = [-1.9, -3.0];
        let p = body.project(&x).unwrap();
        assert!(body.membership(&p, 1e-12).unwrap(), "{p:?}");
        // the projection lies on the bottom facet where the halfspace cuts it
        let corner_x = -(0.12130573411870184 + 0.382843152720904) / 0.9238133579975549;
        assert!((p[0] - corner_x).abs() < 1e-9 && (p[1] + 1.0).abs() < 1e-12, "{p:?}");
    }

    #[test]
    fn halfspace_projection_by_dykstra() {
        let t = triangle();
        let p = t.project(&[1.0, 1.0]).unwrap();
        assert!(close(&p, &[0.5, 0.5], 1e-9), "{p:?}");
        let p = t.project(&[2.0, -1.0]).unwrap();
        assert!(close(&p, &[1.0, 0.0], 1e-9), "{p:?}");
        assert_eq!(t.project(&[0.1, 0.2]).unwrap().as_slice(), &[0.1, 0.2]);
        assert!(t.membership(&t.project(&[3.0, 5.0]).unwrap(), 1e-9).unwrap());
        let sv = t.support_vector(&[0.5, 0.5]).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!(close(&sv, &[h, h], 1e-12));
        assert!((t.diameter() - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn halfspaces_require_certified_interior_point() {
        let bad = ConvexBody::halfspaces(
            vec![Halfspace {
                normal: v(&[1.0, 0.0]),
                offset: -1.0,
            }],
            v(&[0.0, 0.0]),
            v(&[1.0, 1.0]),
            v(&[0.5, 0.5]),
        );
        assert!(bad.is_err());
    }

    #[test]
    fn body_json_round_trip() {
        let json = r#"{"type":"halfspaces","constraints":[{"normal":[2.0,2.0],"offset":2.0}],
            "bounding_box":{"lower":[0.0,0.0],"upper":[1.0,1.0]},"interior_point":[0.25,0.25]}"#;
        let body: ConvexBody = serde_json::from_str(json).unwrap();
        assert_eq!(body, triangle());
        let ball: ConvexBody = serde_json::from_str(r#"{"type":"ball","center":[0,0],"radius":1}"#).unwrap();
        assert_eq!(ball, unit_ball(2));
        assert!(serde_json::from_str::<ConvexBody>(r#"{"type":"ball","center":[0],"radius":-1}"#).is_err());
        assert!(serde_json::from_str::<ConvexBody>(r#"{"type":"box","lower":[1],"upper":[0]}"#).is_err());
        let s = serde_json::to_string(&ConvexBody::simplex(3, 2.0).unwrap()).unwrap();
        assert_eq!(s, r#"{"type":"simplex","dim":3,"scale":2.0}"#);
    }
}
