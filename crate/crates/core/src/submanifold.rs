//! Parametrized submanifolds, their Riemannian normal spaces, the normal
//! exponential map and sampled certification of tubular radii.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::numerics::{central_difference, condition_estimate, smallest_singular_value, Predicate, SmoothMap};
use crate::riemannian::{exp_map, MetricField};

/// Projections shorter than this (in the metric norm) are skipped when seeding Gram–Schmidt.
pub const SEED_SKIP_THRESHOLD: f64 = 1e-8;
/// Smallest singular value of the parametrization jacobian below which it counts as rank deficient.
pub const RANK_THRESHOLD: f64 = 1e-8;
pub const MAX_HALVINGS: u32 = 20;
pub const MAX_CONDITION: f64 = 1e6;

/// A full-rank parametrization `u ↦ p(u)` of an embedded submanifold of coordinate space.
#[derive(Clone)]
pub struct ParametrizedSubmanifold {
    name: String,
    map: SmoothMap,
    param_domain: Predicate,
}

impl fmt::Debug for ParametrizedSubmanifold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ParametrizedSubmanifold")
            .field("name", &self.name)
            .field("param_dim", &self.param_dim())
            .field("ambient_dim", &self.ambient_dim())
            .finish()
    }
}

impl ParametrizedSubmanifold {
    pub fn new<P>(name: impl Into<String>, map: SmoothMap, param_domain: P) -> Self
    where
        P: Fn(&DVector<f64>) -> bool + Send + Sync + 'static,
    {
        assert!(
            map.domain_dim() < map.codomain_dim(),
            "submanifold must have positive codimension"
        );
        Self {
            name: name.into(),
            map,
            param_domain: Arc::new(param_domain),
        }
    }

    /// A single point `{p}` (`k = 0`).
    pub fn point(p: DVector<f64>) -> Self {
        let n = p.len();
        let q = p.clone();
        let map = SmoothMap::new(0, n, move |_| q.clone()).with_jacobian(move |_| DMatrix::zeros(n, 0));
        Self::new("point", map, |_| true)
    }

    /// The affine line `u ↦ origin + u·direction`.
    pub fn affine_line(origin: DVector<f64>, direction: DVector<f64>) -> Self {
        let n = origin.len();
        let d = direction.clone();
        let map = SmoothMap::new(1, n, move |u| &origin + &direction * u[0])
            .with_jacobian(move |_| DMatrix::from_column_slice(n, 1, d.as_slice()));
        Self::new("affine-line", map, |_| true)
    }

    /// The `x`-axis of the plane.
    pub fn x_axis() -> Self {
        let mut s = Self::affine_line(DVector::zeros(2), DVector::from_vec(vec![1.0, 0.0]));
        s.name = "x-axis".into();
        s
    }

    /// Circle of radius `r` about the origin, parametrized by angle on `(lo, hi)`.
    pub fn circle(r: f64, lo: f64, hi: f64) -> Self {
        let map = SmoothMap::new(1, 2, move |u| DVector::from_vec(vec![r * u[0].cos(), r * u[0].sin()]))
            .with_jacobian(move |u| DMatrix::from_column_slice(2, 1, &[-r * u[0].sin(), r * u[0].cos()]));
        Self::new("circle", map, move |u| u[0] > lo && u[0] < hi)
    }

    /// Helix `(r cos u, r sin u, c u)` for `u ∈ (lo, hi)`.
    pub fn helix(r: f64, c: f64, lo: f64, hi: f64) -> Self {
        let map = SmoothMap::new(1, 3, move |u| {
            DVector::from_vec(vec![r * u[0].cos(), r * u[0].sin(), c * u[0]])
        })
        .with_jacobian(move |u| DMatrix::from_column_slice(3, 1, &[-r * u[0].sin(), r * u[0].cos(), c]));
        Self::new("helix", map, move |u| u[0] > lo && u[0] < hi)
    }

    /// Equator `θ = π/2` of the round-sphere chart `(θ, φ)`, parametrized by longitude.
    pub fn sphere_equator(lo: f64, hi: f64) -> Self {
        let map = SmoothMap::new(1, 2, |u| DVector::from_vec(vec![PI / 2.0, u[0]]))
            .with_jacobian(|_| DMatrix::from_column_slice(2, 1, &[0.0, 1.0]));
        Self::new("sphere-equator", map, move |u| u[0] > lo && u[0] < hi)
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn param_dim(&self) -> usize {
        self.map.domain_dim()
    }

    pub fn ambient_dim(&self) -> usize {
        self.map.codomain_dim()
    }

    pub fn codim(&self) -> usize {
        self.ambient_dim() - self.param_dim()
    }

    pub fn map(&self) -> &SmoothMap {
        &self.map
    }

    pub fn in_param_domain(&self, u: &DVector<f64>) -> bool {
        u.len() == self.param_dim() && (self.param_domain)(u)
    }

    pub fn param_predicate(&self) -> Predicate {
        self.param_domain.clone()
    }

    fn check_param(&self, u: &DVector<f64>) -> Result<()> {
        if !self.in_param_domain(u) {
            return Err(Error::NotInDomain(format!(
                "parameter {:?} outside {} domain",
                u.as_slice(),
                self.name
            )));
        }
        Ok(())
    }

    pub fn point_at(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_param(u)?;
        self.map.eval(u)
    }

    /// Jacobian `J(u)`, `n × k`; its columns span `T_{p(u)}N`.
    pub fn tangent(&self, u: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_param(u)?;
        if self.param_dim() == 0 {
            return Ok(DMatrix::zeros(self.ambient_dim(), 0));
        }
        self.map.jacobian(u)
    }

    fn full_rank_tangent(&self, u: &DVector<f64>) -> Result<DMatrix<f64>> {
        let j = self.tangent(u)?;
        if j.ncols() > 0 {
            let s = smallest_singular_value(&j);
            if !(s > RANK_THRESHOLD) {
                return Err(Error::RankDeficient { sigma_min: s });
            }
        }
        Ok(j)
    }

    /// Smallest singular value of `J(u)` over the grid; errors if any is below threshold.
    pub fn check_full_rank(&self, grid: &[DVector<f64>]) -> Result<f64> {
        let mut worst = f64::INFINITY;
        for u in grid {
            let j = self.full_rank_tangent(u)?;
            if j.ncols() > 0 {
                worst = worst.min(smallest_singular_value(&j));
            }
        }
        Ok(worst)
    }

    /// Pairwise spot check: grid points farther apart than `separation` must have
    /// images at least `1e-8` apart.
    pub fn check_injective(&self, grid: &[DVector<f64>], separation: f64) -> Result<()> {
        let images = grid.iter().map(|u| self.point_at(u)).collect::<Result<Vec<_>>>()?;
        for i in 0..grid.len() {
            for j in (i + 1)..grid.len() {
                if (&grid[i] - &grid[j]).norm() > separation && (&images[i] - &images[j]).norm() < 1e-8 {
                    return Err(Error::HypothesisFailure(format!(
                        "{} parametrization not injective: {:?} and {:?} collide",
                        self.name,
                        grid[i].as_slice(),
                        grid[j].as_slice()
                    )));
                }
            }
        }
        Ok(())
    }
}

/// A vector `w` at `p(u)` that is `g`-orthogonal to `T_{p(u)}N`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalVector {
    pub u: DVector<f64>,
    pub w: DVector<f64>,
}

/// Largest `|g(w, J_col)|` over the tangent columns.
pub fn tangent_pairing(g: &MetricField, n: &ParametrizedSubmanifold, nv: &NormalVector) -> Result<f64> {
    let p = n.point_at(&nv.u)?;
    let gm = g.at(&p)?;
    let j = n.tangent(&nv.u)?;
    let gw = &gm * &nv.w;
    Ok(j.column_iter().fold(0.0_f64, |m, c| m.max(c.dot(&gw).abs())))
}

/// Context for `g`-orthogonal projection onto the normal space at one base point.
struct NormalProjector {
    g: DMatrix<f64>,
    tangent: DMatrix<f64>,
    // (Jᵀ G J)⁻¹ Jᵀ G, mapping ambient vectors to tangent coordinates.
    to_tangent: DMatrix<f64>,
}

impl NormalProjector {
    fn new(metric: &MetricField, n: &ParametrizedSubmanifold, u: &DVector<f64>) -> Result<Self> {
        let p = n.point_at(u)?;
        let g = metric.at(&p)?;
        let tangent = n.full_rank_tangent(u)?;
        let to_tangent = if tangent.ncols() == 0 {
            DMatrix::zeros(0, g.nrows())
        } else {
            let gram = tangent.transpose() * &g * &tangent;
            let inv = gram.try_inverse().ok_or(Error::RankDeficient { sigma_min: 0.0 })?;
            inv * tangent.transpose() * &g
        };
        Ok(Self { g, tangent, to_tangent })
    }

    fn project(&self, a: &DVector<f64>) -> DVector<f64> {
        if self.tangent.ncols() == 0 {
            return a.clone();
        }
        a - &self.tangent * (&self.to_tangent * a)
    }

    fn inner(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        a.dot(&(&self.g * b))
    }

    /// Gram–Schmidt over projected standard basis vectors, fixed index order.
    fn orthonormal_basis(&self) -> Result<Vec<DVector<f64>>> {
        let n = self.g.nrows();
        let r = n - self.tangent.ncols();
        let mut basis: Vec<DVector<f64>> = Vec::with_capacity(r);
        for i in 0..n {
            if basis.len() == r {
                break;
            }
            let mut a = self.project(&DVector::from_fn(n, |j, _| if i == j { 1.0 } else { 0.0 }));
            for _ in 0..2 {
                for b in &basis {
                    let c = self.inner(&a, b);
                    a -= b * c;
                }
            }
            let len = self.inner(&a, &a).max(0.0).sqrt();
            if len < SEED_SKIP_THRESHOLD {
                continue;
            }
            basis.push(a / len);
        }
        if basis.len() < r {
            return Err(Error::RankDeficient { sigma_min: 0.0 });
        }
        Ok(basis)
    }
}

/// `g`-orthonormal basis of `Λ_{p(u)}N`.
pub fn normal_space_basis(g: &MetricField, n: &ParametrizedSubmanifold, u: &DVector<f64>) -> Result<Vec<NormalVector>> {
    let proj = NormalProjector::new(g, n, u)?;
    Ok(proj
        .orthonormal_basis()?
        .into_iter()
        .map(|w| NormalVector { u: u.clone(), w })
        .collect())
}

/// The normal basis as the columns of an `n × (n−k)` matrix.
pub fn normal_frame(g: &MetricField, n: &ParametrizedSubmanifold, u: &DVector<f64>) -> Result<DMatrix<f64>> {
    let basis = normal_space_basis(g, n, u)?;
    let cols: Vec<DVector<f64>> = basis.into_iter().map(|nv| nv.w).collect();
    Ok(DMatrix::from_columns(&cols))
}

/// `u`-derivatives of the normal frame, one `n × (n−k)` matrix per parameter.
pub fn normal_frame_derivatives(
    g: &MetricField,
    n: &ParametrizedSubmanifold,
    u: &DVector<f64>,
    h: f64,
) -> Result<Vec<DMatrix<f64>>> {
    let rows = n.ambient_dim() * n.codim();
    let flat = central_difference(
        |v| normal_frame(g, n, v).map(|f| DVector::from_column_slice(f.as_slice())),
        u,
        h,
        rows,
    )?;
    Ok((0..n.param_dim())
        .map(|i| DMatrix::from_column_slice(n.ambient_dim(), n.codim(), flat.column(i).as_slice()))
        .collect())
}

/// `g`-orthogonal projection of `a` onto `Λ_{p(u)}N`, the representative of `a + T_pN`.
pub fn normal_representative(
    g: &MetricField,
    n: &ParametrizedSubmanifold,
    u: &DVector<f64>,
    a: &DVector<f64>,
) -> Result<NormalVector> {
    let proj = NormalProjector::new(g, n, u)?;
    Ok(NormalVector {
        u: u.clone(),
        w: proj.project(a),
    })
}

/// The normal exponential map `E(u, w) = exp_{p(u)}(w)`.
pub fn normal_exponential(g: &MetricField, n: &ParametrizedSubmanifold, nv: &NormalVector) -> Result<DVector<f64>> {
    let p = n.point_at(&nv.u)?;
    exp_map(g, &p, &nv.w)
}

type RadiusFn = dyn Fn(&DVector<f64>) -> f64 + Send + Sync;

/// Sampled values of a positive radius function `δ` on a parameter grid.
#[derive(Clone)]
pub struct RadiusFunction {
    pub grid: Vec<DVector<f64>>,
    pub values: Vec<f64>,
    delta: Arc<RadiusFn>,
}

impl fmt::Debug for RadiusFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RadiusFunction")
            .field("grid_len", &self.grid.len())
            .field("min", &self.min())
            .finish()
    }
}

impl RadiusFunction {
    pub fn constant(delta: f64, grid: Vec<DVector<f64>>) -> Self {
        assert!(delta > 0.0, "radius must be positive");
        let values = vec![delta; grid.len()];
        Self {
            grid,
            values,
            delta: Arc::new(move |_| delta),
        }
    }

    pub fn from_fn<F>(f: F, grid: Vec<DVector<f64>>) -> Self
    where
        F: Fn(&DVector<f64>) -> f64 + Send + Sync + 'static,
    {
        let values: Vec<f64> = grid.iter().map(&f).collect();
        assert!(values.iter().all(|&d| d > 0.0), "radius must be positive on the grid");
        Self {
            grid,
            values,
            delta: Arc::new(f),
        }
    }

    pub fn eval(&self, u: &DVector<f64>) -> f64 {
        (self.delta)(u)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Fiber sample pattern in `R^r`: fractions of the unit ball, including the boundary sphere.
pub fn fiber_pattern(r: usize) -> Vec<DVector<f64>> {
    let fractions = [0.25, 0.5, 0.75, 1.0];
    let mut out = vec![DVector::zeros(r)];
    if r == 0 {
        return out;
    }
    let mut dirs: Vec<DVector<f64>> = Vec::new();
    for i in 0..r {
        for s in [1.0, -1.0] {
            let mut d = DVector::zeros(r);
            d[i] = s;
            dirs.push(d);
        }
    }
    for i in 0..r {
        for j in (i + 1)..r {
            for (si, sj) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
                let mut d = DVector::zeros(r);
                d[i] = si / 2f64.sqrt();
                d[j] = sj / 2f64.sqrt();
                dirs.push(d);
            }
        }
    }
    for f in fractions {
        for d in &dirs {
            out.push(d * f);
        }
    }
    out
}

fn stacked(u: &DVector<f64>, c: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(u.len() + c.len(), u.iter().chain(c.iter()).copied())
}

fn certify_radius(g: &MetricField, n: &ParametrizedSubmanifold, grid: &[DVector<f64>], delta: f64) -> Result<bool> {
    let k = n.param_dim();
    let r = n.codim();
    let pattern = fiber_pattern(r);
    // (u, c) ↦ E(u, F(u)·c), fiber coordinates in the g-orthonormal frame.
    let tube_map = |z: &DVector<f64>| -> Result<DVector<f64>> {
        let u = z.rows(0, k).into_owned();
        let c = z.rows(k, r).into_owned();
        let frame = normal_frame(g, n, &u)?;
        normal_exponential(g, n, &NormalVector { u, w: frame * c })
    };
    let mut params = Vec::new();
    let mut images = Vec::new();
    for u in grid {
        // A focal point between samples flips the sign of det DE along its ray.
        let mut base_sign = 0.0;
        for c in &pattern {
            let z = stacked(u, &(c * delta));
            let x = match tube_map(&z) {
                Ok(x) => x,
                Err(e) if e.is_domain_like() => return Ok(false),
                Err(e) => return Err(e),
            };
            let jac = match central_difference(tube_map, &z, 1e-6 * delta.max(1e-3), n.ambient_dim()) {
                Ok(j) => j,
                Err(e) if e.is_domain_like() => return Ok(false),
                Err(e) => return Err(e),
            };
            if !(condition_estimate(&jac) < MAX_CONDITION) {
                return Ok(false);
            }
            let sign = jac.determinant().signum();
            if base_sign == 0.0 {
                base_sign = sign;
            } else if sign != base_sign {
                return Ok(false);
            }
            params.push(z);
            images.push(x);
        }
    }
    // Local mesh: the largest nearest-neighbour distance in (u, c) space.
    let mut mesh = 0.0_f64;
    for i in 0..params.len() {
        let nearest = (0..params.len())
            .filter(|&j| j != i)
            .map(|j| (&params[i] - &params[j]).norm())
            .filter(|&d| d > 0.0)
            .fold(f64::INFINITY, f64::min);
        if nearest.is_finite() {
            mesh = mesh.max(nearest);
        }
    }
    let scale = images.iter().map(|x| x.amax()).fold(1.0_f64, f64::max);
    for i in 0..params.len() {
        for j in (i + 1)..params.len() {
            if (&params[i] - &params[j]).norm() > mesh * 1.000001 && (&images[i] - &images[j]).norm() <= 1e-8 * scale {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Largest `δ = delta0·2^{−m}`, `m ≤ 20`, for which the closed sampled tube
/// `{(u, w) : |w|_g ≤ δ}` maps under `E` with jacobian condition below `1e6`
/// and without sampled collisions.
pub fn tubular_radius_estimate(
    g: &MetricField,
    n: &ParametrizedSubmanifold,
    grid: &[DVector<f64>],
    delta0: f64,
) -> Result<RadiusFunction> {
    assert!(delta0 > 0.0, "delta0 must be positive");
    let mut delta = delta0;
    for _ in 0..=MAX_HALVINGS {
        if certify_radius(g, n, grid, delta)? {
            return Ok(RadiusFunction::constant(delta, grid.to_vec()));
        }
        delta *= 0.5;
    }
    Err(Error::NoValidRadius { halvings: MAX_HALVINGS })
}

/// Evenly spaced parameter grid on a box, `counts[i]` points along axis `i`, endpoints included.
pub fn uniform_grid(lo: &[f64], hi: &[f64], counts: &[usize]) -> Vec<DVector<f64>> {
    let k = lo.len();
    if k == 0 {
        return vec![DVector::zeros(0)];
    }
    let mut out = vec![Vec::new()];
    for i in 0..k {
        let m = counts[i].max(1);
        let mut next = Vec::new();
        for prefix in &out {
            for j in 0..m {
                let t = if m == 1 { 0.5 } else { j as f64 / (m - 1) as f64 };
                let mut p: Vec<f64> = prefix.clone();
                p.push(lo[i] + t * (hi[i] - lo[i]));
                next.push(p);
            }
        }
        out = next;
    }
    out.into_iter().map(DVector::from_vec).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::max_abs_diff;
    use std::f64::consts::FRAC_PI_2;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(xs)
    }

    #[test]
    fn x_axis_normal_is_vertical() {
        let g = MetricField::euclidean(2);
        let b = normal_space_basis(&g, &SubM::x_axis(), &v(&[0.7])).unwrap();
        assert_eq!(b.len(), 1);
        assert!((&b[0].w - v(&[0.0, 1.0])).norm() < 1e-14);
    }

    use ParametrizedSubmanifold as SubM;

    #[test]
    fn circle_normal_is_radial() {
        let g = MetricField::euclidean(2);
        let c = SubM::circle(1.0, -1.5, 1.5);
        for th in [-1.2, -0.3, 0.0, 0.9, 1.4] {
            let b = normal_space_basis(&g, &c, &v(&[th])).unwrap();
            assert!((&b[0].w - v(&[th.cos(), th.sin()])).norm() < 1e-12, "θ = {th}");
        }
    }

    #[test]
    fn basis_is_orthonormal_under_a_curved_metric() {
        let g = MetricField::new(
            "tilted",
            3,
            |x| {
                let a = DMatrix::from_row_slice(3, 3, &[1.0, 0.3 * x[0], 0.0, 0.0, 1.0, 0.2, 0.1, 0.0, 1.0]);
                a.transpose() * a
            },
            |_| true,
        );
        let h = SubM::helix(1.0, 0.5, -2.0, 2.0);
        for u in [-1.0, 0.0, 0.8] {
            let b = normal_space_basis(&g, &h, &v(&[u])).unwrap();
            assert_eq!(b.len(), 2);
            for i in 0..2 {
                assert!(tangent_pairing(&g, &h, &b[i]).unwrap() < 1e-10);
                for j in 0..2 {
                    let ip = g.inner(&h.point_at(&v(&[u])).unwrap(), &b[i].w, &b[j].w).unwrap();
                    let target = if i == j { 1.0 } else { 0.0 };
                    assert!((ip - target).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn representative_kills_tangents() {
        let g = MetricField::euclidean(2);
        let c = SubM::circle(1.0, -1.5, 1.5);
        let u = v(&[0.0]);
        let r = normal_representative(&g, &c, &u, &v(&[1.0, 1.0])).unwrap();
        assert!((r.w - v(&[1.0, 0.0])).norm() < 1e-14);
        let t = normal_representative(&g, &c, &u, &v(&[0.0, 3.0])).unwrap();
        assert!(t.w.norm() < 1e-14);
        let already = normal_representative(&g, &c, &u, &v(&[0.4, 0.0])).unwrap();
        assert!((already.w - v(&[0.4, 0.0])).norm() < 1e-12);
    }

    #[test]
    fn normal_exponential_examples() {
        let g = MetricField::euclidean(2);
        let x = SubM::x_axis();
        let out = normal_exponential(
            &g,
            &x,
            &NormalVector {
                u: v(&[0.3]),
                w: v(&[0.0, 0.8]),
            },
        )
        .unwrap();
        assert!((out - v(&[0.3, 0.8])).norm() < 1e-12);
        let c = SubM::circle(1.0, -1.5, 1.5);
        for (th, s) in [(0.4_f64, -0.5), (1.0, 2.0), (-0.7, 0.0)] {
            let w = v(&[th.cos(), th.sin()]) * s;
            let out = normal_exponential(&g, &c, &NormalVector { u: v(&[th]), w }).unwrap();
            assert!((out - v(&[th.cos(), th.sin()]) * (1.0 + s)).norm() < 1e-12);
        }
    }

    #[test]
    fn point_submanifold_has_full_normal_space() {
        let g = MetricField::euclidean(2);
        let pt = SubM::point(v(&[0.0, 0.0]));
        let f = normal_frame(&g, &pt, &DVector::zeros(0)).unwrap();
        assert!(max_abs_diff(&f, &DMatrix::identity(2, 2)) < 1e-15);
    }

    #[test]
    fn flat_line_admits_any_radius() {
        let g = MetricField::euclidean(2);
        let grid = uniform_grid(&[-1.0], &[1.0], &[9]);
        let d = tubular_radius_estimate(&g, &SubM::x_axis(), &grid, 10.0).unwrap();
        assert_eq!(d.min(), 10.0);
    }

    #[test]
    fn circle_radius_stays_below_focal_distance() {
        let g = MetricField::euclidean(2);
        let grid = uniform_grid(&[-1.2], &[1.2], &[13]);
        let d = tubular_radius_estimate(&g, &SubM::circle(1.0, -1.5, 1.5), &grid, 2.0).unwrap();
        assert!(d.min() < 1.0 && d.min() > 0.0, "δ = {}", d.min());
    }

    #[test]
    fn focal_point_between_samples_is_caught() {
        // At δ = 3 and 1.5 no sample lands on the focal circle c = −1; the determinant sign does.
        let g = MetricField::euclidean(2);
        let grid = uniform_grid(&[-1.2], &[1.2], &[5]);
        for delta0 in [3.0, 1.5] {
            let d = tubular_radius_estimate(&g, &SubM::circle(1.0, -1.5, 1.5), &grid, delta0).unwrap();
            assert_eq!(d.min(), 0.75, "δ0 = {delta0}");
        }
        let helix = SubM::helix(1.0, 0.5, -1.5, 1.5);
        let grid3 = uniform_grid(&[-1.0], &[1.0], &[5]);
        let d = tubular_radius_estimate(&MetricField::euclidean(3), &helix, &grid3, 4.0).unwrap();
        assert!(d.min() < 1.25, "δ = {}", d.min());
    }

    #[test]
    fn sphere_equator_radius_below_quarter_circle() {
        let g = MetricField::round_sphere_chart();
        let grid = uniform_grid(&[-1.0], &[1.0], &[7]);
        let d = tubular_radius_estimate(&g, &SubM::sphere_equator(-2.0, 2.0), &grid, 3.0).unwrap();
        assert!(d.min() < FRAC_PI_2 && d.min() > 0.5, "δ = {}", d.min());
    }

    #[test]
    fn rank_deficient_parametrization() {
        let bad = SubM::new(
            "cusp",
            SmoothMap::new(1, 2, |u| v(&[u[0].powi(3), u[0].powi(2)]))
                .with_jacobian(|u| DMatrix::from_column_slice(2, 1, &[3.0 * u[0] * u[0], 2.0 * u[0]])),
            |_| true,
        );
        let g = MetricField::euclidean(2);
        assert!(matches!(
            normal_space_basis(&g, &bad, &v(&[0.0])),
            Err(Error::RankDeficient { .. })
        ));
        assert!(bad.check_full_rank(&[v(&[0.0])]).is_err());
    }

    #[test]
    fn full_circle_is_not_injective_beyond_one_period() {
        let c = SubM::circle(1.0, -10.0, 10.0);
        let grid = uniform_grid(&[0.0], &[2.0 * PI], &[9]);
        assert!(c.check_injective(&grid, 0.1).is_err());
        let arc = uniform_grid(&[0.0], &[PI], &[9]);
        assert!(c.check_injective(&arc, 0.1).is_ok());
    }
}
