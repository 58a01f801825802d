//! Metric fields on coordinate regions, Christoffel symbols, geodesics and
//! the Riemannian exponential map.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::numerics::{central_difference, integrate, OdeOptions, Predicate, SmoothMap, Trajectory, DEFAULT_FD_STEP};

/// Local error tolerance used by `exp_map` and friends unless overridden.
pub const DEFAULT_GEODESIC_TOL: f64 = 1e-11;

type MetricFn = dyn Fn(&DVector<f64>) -> Result<DMatrix<f64>> + Send + Sync;
/// `x ↦ (g(x), [∂_l g(x)])`.
pub type JetFn = dyn Fn(&DVector<f64>) -> Result<(DMatrix<f64>, Vec<DMatrix<f64>>)> + Send + Sync;
/// Closed-form `(p, v) ↦ exp_p(v)`.
pub type ExpFn = dyn Fn(&DVector<f64>, &DVector<f64>) -> Result<DVector<f64>> + Send + Sync;

/// A symmetric positive-definite matrix field `x ↦ g(x)` on an open coordinate region.
#[derive(Clone)]
pub struct MetricField {
    name: String,
    dim: usize,
    g: Arc<MetricFn>,
    domain: Predicate,
    fd_step: f64,
    geodesic_tol: f64,
    jet: Option<Arc<JetFn>>,
    exponential: Option<Arc<ExpFn>>,
}

impl fmt::Debug for MetricField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MetricField")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("fd_step", &self.fd_step)
            .field("geodesic_tol", &self.geodesic_tol)
            .finish()
    }
}

impl MetricField {
    pub fn new<G, D>(name: impl Into<String>, dim: usize, g: G, domain: D) -> Self
    where
        G: Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
        D: Fn(&DVector<f64>) -> bool + Send + Sync + 'static,
    {
        Self::fallible(name, dim, move |x| Ok(g(x)), Arc::new(domain))
    }

    pub fn fallible<G>(name: impl Into<String>, dim: usize, g: G, domain: Predicate) -> Self
    where
        G: Fn(&DVector<f64>) -> Result<DMatrix<f64>> + Send + Sync + 'static,
    {
        Self {
            name: name.into(),
            dim,
            g: Arc::new(g),
            domain,
            fd_step: DEFAULT_FD_STEP,
            geodesic_tol: DEFAULT_GEODESIC_TOL,
            jet: None,
            exponential: None,
        }
    }

    pub fn euclidean(dim: usize) -> Self {
        Self::constant("euclidean", DMatrix::identity(dim, dim))
    }

    /// Constant metric `A` on all of `R^n`; geodesics are straight lines.
    pub fn constant(name: impl Into<String>, a: DMatrix<f64>) -> Self {
        let dim = a.nrows();
        Self::new(name, dim, move |_| a.clone(), |_| true).with_exponential(|p, v| Ok(p + v))
    }

    /// Polar coordinates `(r, θ)` on `r > 0`: `diag(1, r²)`.
    pub fn polar() -> Self {
        Self::new(
            "polar",
            2,
            |x| DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, x[0] * x[0]])),
            |x| x[0] > 0.0,
        )
    }

    /// Round unit sphere in colatitude/longitude `(θ, φ)`, `0 < θ < π`: `diag(1, sin²θ)`.
    pub fn round_sphere_chart() -> Self {
        Self::new(
            "round-sphere",
            2,
            |x| {
                let s = x[0].sin();
                DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, s * s]))
            },
            |x| x[0] > 0.0 && x[0] < std::f64::consts::PI,
        )
        .with_exponential(sphere_chart_exp)
    }

    pub fn with_fd_step(mut self, h: f64) -> Self {
        assert!(h > 0.0);
        self.fd_step = h;
        self
    }

    pub fn with_geodesic_tol(mut self, tol: f64) -> Self {
        assert!(tol > 0.0);
        self.geodesic_tol = tol;
        self
    }

    /// Supplies `g` and its first partials together, replacing per-partial finite differences.
    pub fn with_jet<J>(mut self, jet: J) -> Self
    where
        J: Fn(&DVector<f64>) -> Result<(DMatrix<f64>, Vec<DMatrix<f64>>)> + Send + Sync + 'static,
    {
        self.jet = Some(Arc::new(jet));
        self
    }

    /// Closed-form exponential map used by [`exp_map`]; integrated geodesics are unaffected.
    pub fn with_exponential<E>(mut self, exp: E) -> Self
    where
        E: Fn(&DVector<f64>, &DVector<f64>) -> Result<DVector<f64>> + Send + Sync + 'static,
    {
        self.exponential = Some(Arc::new(exp));
        self
    }

    pub fn has_closed_form_exponential(&self) -> bool {
        self.exponential.is_some()
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn fd_step(&self) -> f64 {
        self.fd_step
    }

    pub fn geodesic_tol(&self) -> f64 {
        self.geodesic_tol
    }

    pub fn domain(&self) -> Predicate {
        self.domain.clone()
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        x.len() == self.dim && (self.domain)(x)
    }

    /// `g(x)`; fails outside the domain.
    pub fn at(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        if x.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                got: x.len(),
            });
        }
        if !(self.domain)(x) {
            return Err(Error::NotInDomain(format!(
                "{} metric at {:?}",
                self.name,
                x.as_slice()
            )));
        }
        (self.g)(x)
    }

    pub fn inner(&self, x: &DVector<f64>, a: &DVector<f64>, b: &DVector<f64>) -> Result<f64> {
        Ok(a.dot(&(self.at(x)? * b)))
    }

    pub fn norm(&self, x: &DVector<f64>, v: &DVector<f64>) -> Result<f64> {
        Ok(self.inner(x, v, v)?.max(0.0).sqrt())
    }

    /// Central-difference partials `∂_l g` for `l = 0..n`.
    pub fn derivatives(&self, x: &DVector<f64>) -> Result<Vec<DMatrix<f64>>> {
        let h = self.fd_step;
        let n = self.dim;
        let mut out = Vec::with_capacity(n);
        let mut probe = x.clone();
        for l in 0..n {
            probe[l] = x[l] + h;
            if !(self.domain)(&probe) {
                return Err(Error::DomainMargin { step: h });
            }
            let gp = self.at(&probe)?;
            probe[l] = x[l] - h;
            if !(self.domain)(&probe) {
                return Err(Error::DomainMargin { step: h });
            }
            let gm = self.at(&probe)?;
            probe[l] = x[l];
            out.push((gp - gm) / (2.0 * h));
        }
        Ok(out)
    }

    /// `g(x)` together with `∂_l g(x)`.
    pub fn jet(&self, x: &DVector<f64>) -> Result<(DMatrix<f64>, Vec<DMatrix<f64>>)> {
        match &self.jet {
            Some(jet) => {
                self.at(x)?;
                jet(x)
            }
            None => Ok((self.at(x)?, self.derivatives(x)?)),
        }
    }

    /// Flattened matrix-valued map `x ↦ vec(g(x))` (column major).
    pub fn as_map(&self) -> SmoothMap {
        let me = self.clone();
        let dom = self.domain.clone();
        SmoothMap::fallible(self.dim, self.dim * self.dim, move |x| {
            let g = me.at(x)?;
            Ok(DVector::from_column_slice(g.as_slice()))
        })
        .with_domain(move |x| dom(x))
        .with_fd_step(self.fd_step)
    }

    /// Spot check of symmetry (1e-12) and positive definiteness on sample points.
    /// Returns the smallest eigenvalue seen.
    pub fn check_positive_definite(&self, samples: &[DVector<f64>]) -> Result<f64> {
        let mut min_eig = f64::INFINITY;
        for x in samples {
            let g = self.at(x)?;
            let asym = (&g - g.transpose()).amax();
            if asym > 1e-12 {
                return Err(Error::HypothesisFailure(format!(
                    "{} metric not symmetric at {:?} (asymmetry {asym:e})",
                    self.name,
                    x.as_slice()
                )));
            }
            let eig = g.symmetric_eigenvalues().min();
            if eig.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
                return Err(Error::SingularMetric);
            }
            min_eig = min_eig.min(eig);
        }
        Ok(min_eig)
    }

    /// Checks positive definiteness on `samples` and returns `self` on success.
    pub fn validated(self, samples: &[DVector<f64>]) -> Result<Self> {
        self.check_positive_definite(samples)?;
        Ok(self)
    }
}

/// Great-circle exponential in the `(θ, φ)` chart. Arcs passing within `1e-3` of a
/// pole are integrated numerically instead.
fn sphere_chart_exp(p: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
    let (th, ph) = (p[0], p[1]);
    let (st, ct, sp, cp) = (th.sin(), th.cos(), ph.sin(), ph.cos());
    let base = [st * cp, st * sp, ct];
    let e_th = [ct * cp, ct * sp, -st];
    let e_ph = [-sp, cp, 0.0];
    let w: Vec<f64> = (0..3).map(|i| v[0] * e_th[i] + v[1] * st * e_ph[i]).collect();
    let len = w.iter().map(|c| c * c).sum::<f64>().sqrt();
    if len == 0.0 {
        return Ok(p.clone());
    }
    let dir: Vec<f64> = w.iter().map(|c| c / len).collect();
    let at = |s: f64| -> [f64; 3] {
        let (c, sn) = (s.cos(), s.sin());
        [0, 1, 2].map(|i| c * base[i] + sn * dir[i])
    };
    // Height z(s) = a cos s + b sin s peaks at s = atan2(b, a) + kπ.
    let (a, b) = (base[2], dir[2]);
    let mut z_max = a.abs().max(at(len)[2].abs());
    let mut s = b.atan2(a).rem_euclid(std::f64::consts::PI);
    while s <= len {
        z_max = z_max.max(at(s)[2].abs());
        s += std::f64::consts::PI;
    }
    let rho_min = (1.0 - z_max * z_max).max(0.0).sqrt();
    if rho_min < 1e-3 {
        let g = MetricField::round_sphere_chart();
        let tr = geodesic(&g, p, v, 1.0, g.geodesic_tol())?;
        if !tr.reached(1.0) {
            return Err(Error::NotInDomain("geodesic reaches a pole".into()));
        }
        return Ok(tr.point(tr.len() - 1, 2));
    }
    // Longitude moves at most len / rho_min per unit parameter; unwrap in sub-radian steps.
    let steps = (len / rho_min).ceil() as usize + 1;
    let mut phi = ph;
    for i in 1..=steps {
        let q = at(len * i as f64 / steps as f64);
        let raw = q[1].atan2(q[0]);
        phi += (raw - phi + std::f64::consts::PI).rem_euclid(2.0 * std::f64::consts::PI) - std::f64::consts::PI;
    }
    let end = at(len);
    let theta = end[2].clamp(-1.0, 1.0).acos();
    Ok(DVector::from_vec(vec![theta, phi]))
}

/// Christoffel symbols of the second kind at one point; `symbols[k][(i, j)] = Γ^k_{ij}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Christoffel {
    pub symbols: Vec<DMatrix<f64>>,
}

impl Christoffel {
    pub fn get(&self, k: usize, i: usize, j: usize) -> f64 {
        self.symbols[k][(i, j)]
    }

    pub fn dim(&self) -> usize {
        self.symbols.len()
    }

    /// `a^k = Γ^k_{ij} v^i v^j`.
    pub fn contract(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.dim(), self.symbols.iter().map(|s| v.dot(&(s * v))))
    }
}

fn cholesky_of(g: DMatrix<f64>) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    g.cholesky().ok_or(Error::SingularMetric)
}

/// Levi-Civita Christoffel symbols, `½ g^{kl}(∂_i g_{jl} + ∂_j g_{il} − ∂_l g_{ij})`.
pub fn christoffel(g: &MetricField, x: &DVector<f64>) -> Result<Christoffel> {
    let n = g.dim();
    let (gx, dg) = g.jet(x)?;
    let chol = cholesky_of(gx)?;
    let mut first = vec![DMatrix::zeros(n, n); n];
    for (l, fl) in first.iter_mut().enumerate() {
        for i in 0..n {
            for j in 0..n {
                fl[(i, j)] = 0.5 * (dg[i][(j, l)] + dg[j][(i, l)] - dg[l][(i, j)]);
            }
        }
    }
    let mut symbols = vec![DMatrix::zeros(n, n); n];
    for i in 0..n {
        for j in 0..n {
            let lowered = DVector::from_iterator(n, first.iter().map(|fl| fl[(i, j)]));
            let raised = chol.solve(&lowered);
            for k in 0..n {
                symbols[k][(i, j)] = raised[k];
            }
        }
    }
    Ok(Christoffel { symbols })
}

/// `−Γ^k_{ij}(x) v^i v^j`, assembled from the first-kind contraction without
/// materialising the full symbol array.
pub fn geodesic_acceleration(g: &MetricField, x: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
    let (gx, dg) = g.jet(x)?;
    let chol = cholesky_of(gx)?;
    let n = g.dim();
    // (Σ_i v^i ∂_i g) v
    let mut directional = DMatrix::<f64>::zeros(n, n);
    for (i, d) in dg.iter().enumerate() {
        directional += d * v[i];
    }
    let mut lowered = &directional * v;
    for (l, d) in dg.iter().enumerate() {
        lowered[l] -= 0.5 * v.dot(&(d * v));
    }
    Ok(-chol.solve(&lowered))
}

fn geodesic_options(tol: f64, stops: &[f64]) -> OdeOptions {
    OdeOptions::new(tol).with_stops(stops)
}

/// Integrates `ẍ^k + Γ^k_{ij} ẋ^i ẋ^j = 0` from `(p, v)`; states are `(x, ẋ)`.
/// A trajectory that leaves the metric's domain is returned truncated with
/// `domain_exit` set.
pub fn geodesic(g: &MetricField, p: &DVector<f64>, v: &DVector<f64>, t_end: f64, tol: f64) -> Result<Trajectory> {
    geodesic_with_stops(g, p, v, t_end, tol, &[])
}

pub fn geodesic_with_stops(
    g: &MetricField,
    p: &DVector<f64>,
    v: &DVector<f64>,
    t_end: f64,
    tol: f64,
    stops: &[f64],
) -> Result<Trajectory> {
    let n = g.dim();
    if p.len() != n || v.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: p.len().max(v.len()),
        });
    }
    if !g.contains(p) {
        return Err(Error::NotInDomain(format!("geodesic base point {:?}", p.as_slice())));
    }
    if v.iter().any(|c| !c.is_finite()) {
        return Err(Error::DomainError("non-finite initial velocity".into()));
    }
    let mut y0 = DVector::zeros(2 * n);
    y0.rows_mut(0, n).copy_from(p);
    y0.rows_mut(n, n).copy_from(v);
    let rhs = |y: &DVector<f64>| -> Result<DVector<f64>> {
        let x = y.rows(0, n).into_owned();
        let xd = y.rows(n, n).into_owned();
        let acc = geodesic_acceleration(g, &x, &xd)?;
        let mut out = DVector::zeros(2 * n);
        out.rows_mut(0, n).copy_from(&xd);
        out.rows_mut(n, n).copy_from(&acc);
        Ok(out)
    };
    let inside = |y: &DVector<f64>| g.contains(&y.rows(0, n).into_owned());
    match integrate(rhs, inside, &y0, t_end, &geodesic_options(tol, stops)) {
        Ok(tr) => Ok(tr),
        Err(Error::DomainExit { partial, .. }) => Ok(*partial),
        Err(e) => Err(e),
    }
}

/// `exp_p(v) = γ_v(1)`.
pub fn exp_map(g: &MetricField, p: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
    if let Some(exp) = &g.exponential {
        if !g.contains(p) {
            return Err(Error::NotInDomain(format!("geodesic base point {:?}", p.as_slice())));
        }
        let q = exp(p, v)?;
        if !g.contains(&q) || q.iter().any(|c| !c.is_finite()) {
            return Err(Error::NotInDomain(format!(
                "exp of {:?} at {:?}",
                v.as_slice(),
                p.as_slice()
            )));
        }
        return Ok(q);
    }
    let tr = geodesic(g, p, v, 1.0, g.geodesic_tol())?;
    if !tr.reached(1.0) {
        return Err(Error::NotInDomain(format!(
            "velocity {:?} at {:?}: geodesic leaves the domain at t = {}",
            v.as_slice(),
            p.as_slice(),
            tr.last_time()
        )));
    }
    Ok(tr.point(tr.len() - 1, g.dim()))
}

/// Points `γ_v(t)` for each requested `t` in `[0, 1]`, from a single integration.
pub fn geodesic_points(g: &MetricField, p: &DVector<f64>, v: &DVector<f64>, ts: &[f64]) -> Result<Vec<DVector<f64>>> {
    let t_end = ts.iter().copied().fold(0.0, f64::max);
    let tr = geodesic_with_stops(g, p, v, t_end, g.geodesic_tol(), ts)?;
    if !tr.reached(t_end) {
        return Err(Error::NotInDomain(format!(
            "geodesic from {:?} leaves the domain at t = {}",
            p.as_slice(),
            tr.last_time()
        )));
    }
    ts.iter()
        .map(|&t| {
            tr.state_at(t)
                .map(|s| s.rows(0, g.dim()).into_owned())
                .ok_or_else(|| Error::NotInDomain(format!("no state recorded at t = {t}")))
        })
        .collect()
}

/// Central-difference jacobian of `v ↦ exp_p(v)` at `v = 0`.
pub fn exp_differential_at_zero(g: &MetricField, p: &DVector<f64>) -> Result<DMatrix<f64>> {
    let n = g.dim();
    let h = DEFAULT_FD_STEP;
    let zero = DVector::zeros(n);
    central_difference(
        |v| {
            exp_map(g, p, v).map_err(|e| match e {
                Error::NotInDomain(_) => Error::DomainMargin { step: h },
                other => other,
            })
        },
        &zero,
        h,
        n,
    )
}

/// Largest relative deviation of `|γ'(t)|_g` from its initial value.
pub fn speed_drift(g: &MetricField, tr: &Trajectory) -> Result<f64> {
    let n = g.dim();
    let speed = |i: usize| g.norm(&tr.point(i, n), &tr.velocity(i, n));
    let s0 = speed(0)?;
    let mut worst = 0.0_f64;
    for i in 1..tr.len() {
        let s = speed(i)?;
        let dev = if s0 > 0.0 { (s - s0).abs() / s0 } else { s.abs() };
        worst = worst.max(dev);
    }
    Ok(worst)
}

/// Operational membership test for `𝒟_p`: the geodesic must exist on `[0, max_time]`.
#[derive(Debug, Clone, Copy)]
pub struct GeodesicDomainPolicy {
    pub max_time: f64,
}

impl Default for GeodesicDomainPolicy {
    fn default() -> Self {
        Self { max_time: 1.0 }
    }
}

impl GeodesicDomainPolicy {
    pub fn accepts(&self, g: &MetricField, p: &DVector<f64>, v: &DVector<f64>) -> bool {
        matches!(
            geodesic(g, p, v, self.max_time, g.geodesic_tol()),
            Ok(tr) if tr.reached(self.max_time)
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::max_abs_diff;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(xs)
    }

    #[test]
    fn euclidean_christoffel_vanishes() {
        let g = MetricField::euclidean(3);
        let c = christoffel(&g, &v(&[0.3, -2.0, 7.0])).unwrap();
        assert!(c.symbols.iter().all(|m| m.amax() == 0.0));
    }

    #[test]
    fn polar_christoffel_matches_hand_derivation() {
        // Γ^r_{θθ} = −r, Γ^θ_{rθ} = Γ^θ_{θr} = 1/r, everything else zero.
        let g = MetricField::polar();
        for r in [0.5, 1.0, 2.5] {
            let c = christoffel(&g, &v(&[r, 0.7])).unwrap();
            let mut expected = vec![DMatrix::zeros(2, 2); 2];
            expected[0][(1, 1)] = -r;
            expected[1][(0, 1)] = 1.0 / r;
            expected[1][(1, 0)] = 1.0 / r;
            for (got, want) in c.symbols.iter().zip(&expected) {
                assert!(max_abs_diff(got, want) < 1e-8, "r = {r}");
            }
        }
    }

    #[test]
    fn christoffel_is_symmetric_in_lower_indices() {
        let g = MetricField::new(
            "skew",
            3,
            |x| {
                let a = DMatrix::from_row_slice(
                    3,
                    3,
                    &[1.0, x[0] * 0.3, 0.0, 0.2 * x[1], 1.0, x[2].sin() * 0.1, 0.0, 0.0, 1.0],
                );
                &a * a.transpose() + DMatrix::identity(3, 3)
            },
            |_| true,
        );
        let c = christoffel(&g, &v(&[0.4, -0.3, 1.1])).unwrap();
        for s in &c.symbols {
            assert!(max_abs_diff(s, &s.transpose()) < 1e-10);
        }
    }

    #[test]
    fn contraction_agrees_with_full_symbols() {
        let g = MetricField::round_sphere_chart();
        let x = v(&[1.1, 0.4]);
        let vel = v(&[0.3, -0.8]);
        let full = christoffel(&g, &x).unwrap().contract(&vel);
        let fast = geodesic_acceleration(&g, &x, &vel).unwrap();
        assert!((full + fast).norm() < 1e-12);
    }

    #[test]
    fn euclidean_geodesic_is_a_line() {
        let g = MetricField::euclidean(2);
        let tr = geodesic(&g, &v(&[0.0, 0.0]), &v(&[1.0, 1.0]), 2.0, 1e-10).unwrap();
        assert!((tr.point(tr.len() - 1, 2) - v(&[2.0, 2.0])).norm() < 1e-12);
    }

    #[test]
    fn equator_is_a_great_circle() {
        let g = MetricField::round_sphere_chart();
        let tr = geodesic(&g, &v(&[FRAC_PI_2, 0.0]), &v(&[0.0, 1.0]), 1.0, 1e-11).unwrap();
        assert!((tr.point(tr.len() - 1, 2) - v(&[FRAC_PI_2, 1.0])).norm() < 1e-7);
    }

    #[test]
    fn speed_is_conserved() {
        let g = MetricField::round_sphere_chart();
        let tr = geodesic(&g, &v(&[1.0, 0.2]), &v(&[0.4, 0.9]), 2.0, 1e-11).unwrap();
        assert!(speed_drift(&g, &tr).unwrap() < 1e-6);
        let p = MetricField::polar();
        let tr = geodesic(&p, &v(&[1.0, 0.0]), &v(&[0.1, 0.5]), 1.0, 1e-11).unwrap();
        assert!(speed_drift(&p, &tr).unwrap() < 1e-6);
    }

    #[test]
    fn exp_of_zero_and_euclidean_exp() {
        let g = MetricField::round_sphere_chart();
        let p = v(&[1.0, 0.5]);
        assert_eq!(exp_map(&g, &p, &v(&[0.0, 0.0])).unwrap(), p);
        let e = MetricField::euclidean(2);
        let out = exp_map(&e, &v(&[1.0, -1.0]), &v(&[0.5, 2.0])).unwrap();
        assert!((out - v(&[1.5, 1.0])).norm() < 1e-12);
    }

    #[test]
    fn rescaling_matches_geodesic_samples() {
        let g = MetricField::round_sphere_chart();
        let p = v(&[1.2, 0.0]);
        let vel = v(&[0.5, 0.7]);
        let ts = [0.25, 0.5, 0.75];
        let along = geodesic_points(&g, &p, &vel, &ts).unwrap();
        for (t, q) in ts.iter().zip(&along) {
            let direct = exp_map(&g, &p, &(&vel * *t)).unwrap();
            assert!((direct - q).norm() < 1e-8, "t = {t}");
        }
    }

    #[test]
    fn sphere_closed_form_matches_integration() {
        let g = MetricField::round_sphere_chart();
        let cases = [
            (v(&[1.2, 0.0]), v(&[0.5, 0.7])),
            (v(&[0.4, 2.0]), v(&[0.3, 5.0])),
            (v(&[2.9, -1.0]), v(&[-0.1, 4.0])),
            (v(&[0.5, 0.0]), v(&[-0.4995, 0.0])),
        ];
        for (p, vel) in cases {
            let tr = geodesic(&g, &p, &vel, 1.0, 1e-12).unwrap();
            let integrated = tr.point(tr.len() - 1, 2);
            let closed = exp_map(&g, &p, &vel).unwrap();
            assert!((closed - integrated).norm() < 1e-8, "{p:?} {vel:?}");
        }
        // Straight over the pole: the chart cannot follow.
        assert!(exp_map(&g, &v(&[0.5, 0.0]), &v(&[-1.0, 0.0])).is_err());
    }

    #[test]
    fn exp_differential_is_identity() {
        let e = MetricField::euclidean(2);
        let d = exp_differential_at_zero(&e, &v(&[3.0, 1.0])).unwrap();
        assert!(max_abs_diff(&d, &DMatrix::identity(2, 2)) < 1e-10);
        let s = MetricField::round_sphere_chart();
        let d = exp_differential_at_zero(&s, &v(&[FRAC_PI_2, 0.0])).unwrap();
        assert!(max_abs_diff(&d, &DMatrix::identity(2, 2)) < 1e-5);
        let p = MetricField::polar();
        let d = exp_differential_at_zero(&p, &v(&[1.0, 0.0])).unwrap();
        assert!(max_abs_diff(&d, &DMatrix::identity(2, 2)) < 1e-5);
    }

    #[test]
    fn leaving_the_chart_is_not_in_domain() {
        let g = MetricField::round_sphere_chart();
        // Meridian geodesic from the equator of length 2 crosses the pole at θ = 0.
        let err = exp_map(&g, &v(&[FRAC_PI_2, 0.0]), &v(&[-2.0, 0.0])).unwrap_err();
        assert!(matches!(err, Error::NotInDomain(_)));
        let policy = GeodesicDomainPolicy::default();
        assert!(!policy.accepts(&g, &v(&[FRAC_PI_2, 0.0]), &v(&[-2.0, 0.0])));
        assert!(policy.accepts(&g, &v(&[FRAC_PI_2, 0.0]), &v(&[-1.0, 0.0])));
        let tr = geodesic(&g, &v(&[FRAC_PI_2, 0.0]), &v(&[-2.0, 0.0]), 1.0, 1e-10).unwrap();
        assert!(tr.domain_exit && tr.last_time() < PI / 4.0 + 1e-3);
    }

    #[test]
    fn non_positive_metric_is_rejected() {
        let bad = MetricField::new("indefinite", 2, |_| DMatrix::from_diagonal(&v(&[1.0, -1.0])), |_| true);
        assert!(bad.check_positive_definite(&[v(&[0.0, 0.0])]).is_err());
        assert!(MetricField::polar()
            .validated(&[v(&[1.0, 0.0]), v(&[2.0, 1.0])])
            .is_ok());
    }
}
