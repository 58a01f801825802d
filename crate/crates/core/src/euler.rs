//! Euler and Euler-like vector fields, pushforwards of the Euler field through
//! tubular embeddings, and recovery of an embedding from an Euler-like field.

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::embedding::{EmbeddingInverse, TubularEmbedding};
use crate::error::{Error, Result};
use crate::numerics::{integrate, max_abs, OdeOptions, SmoothMap};
use crate::riemannian::MetricField;
use crate::submanifold::{normal_frame, ParametrizedSubmanifold};

/// Default bound on `‖X(p)‖` for a field to count as vanishing on `N`.
pub const VANISHING_TOL: f64 = 1e-6;
/// Default bound on the normal leak of `A·J`.
pub const TANGENT_LEAK_TOL: f64 = 1e-6;
/// Local error tolerance for flows in [`reconstruct_embedding`].
pub const FLOW_TOL: f64 = 1e-13;

/// A smooth vector field on an ambient coordinate region.
#[derive(Clone)]
pub struct VectorFieldOracle {
    map: SmoothMap,
}

impl fmt::Debug for VectorFieldOracle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VectorFieldOracle").field("map", &self.map).finish()
    }
}

impl VectorFieldOracle {
    pub fn new(map: SmoothMap) -> Result<Self> {
        if map.domain_dim() != map.codomain_dim() {
            return Err(Error::Dimension {
                expected: map.domain_dim(),
                got: map.codomain_dim(),
            });
        }
        Ok(Self { map })
    }

    /// `λ·Σ xⁱ ∂ᵢ` on `R^n`, the Euler field of `R^n → {0}` scaled by `λ`.
    pub fn scaled_euler(n: usize, lambda: f64) -> Self {
        Self {
            map: SmoothMap::linear(DMatrix::identity(n, n) * lambda),
        }
    }

    pub fn euler(n: usize) -> Self {
        Self::scaled_euler(n, 1.0)
    }

    pub fn constant(value: DVector<f64>) -> Self {
        let n = value.len();
        Self {
            map: SmoothMap::new(n, n, move |_| value.clone()).with_jacobian(move |_| DMatrix::zeros(n, n)),
        }
    }

    pub fn dim(&self) -> usize {
        self.map.domain_dim()
    }

    pub fn map(&self) -> &SmoothMap {
        &self.map
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        self.map.contains(x)
    }

    pub fn eval(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.map.eval(x)
    }

    pub fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.map.jacobian(x)
    }
}

/// Euler field of a vector space in linear coordinates: the fiber component at `x` is `x`.
pub fn euler_field(x: &DVector<f64>) -> DVector<f64> {
    x.clone()
}

/// `(max_u ‖X(p(u))‖ ≤ tol, max_u ‖X(p(u))‖)`. Grid points where `X` cannot be
/// evaluated count as an infinite residual.
pub fn vanishes_on_n(
    x: &VectorFieldOracle,
    n: &ParametrizedSubmanifold,
    grid: &[DVector<f64>],
    tol: f64,
) -> (bool, f64) {
    let residual = grid
        .iter()
        .map(|u| {
            n.point_at(u)
                .and_then(|p| x.eval(&p))
                .map(|val| val.norm())
                .unwrap_or(f64::INFINITY)
        })
        .fold(0.0_f64, f64::max);
    (residual <= tol, residual)
}

/// Matrix form of the linear approximation of `X` at `p(u)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearApproximation {
    pub u: DVector<f64>,
    /// Jacobian of `X` at `p(u)`.
    pub a: DMatrix<f64>,
    /// Quotient action on normal classes, in the reference metric's orthonormal normal frame.
    pub induced: DMatrix<f64>,
    /// Largest norm of the normal projection of `A·J` (zero when `X|_N = 0` exactly).
    pub tangent_leak: f64,
}

pub fn linear_approximation(
    x: &VectorFieldOracle,
    g_ref: &MetricField,
    n: &ParametrizedSubmanifold,
    u: &DVector<f64>,
) -> Result<LinearApproximation> {
    linear_approximation_with(x, g_ref, n, u, VANISHING_TOL)
}

pub fn linear_approximation_with(
    x: &VectorFieldOracle,
    g_ref: &MetricField,
    n: &ParametrizedSubmanifold,
    u: &DVector<f64>,
    tol: f64,
) -> Result<LinearApproximation> {
    let p = n.point_at(u)?;
    let residual = x.eval(&p)?.norm();
    if residual > tol {
        return Err(Error::NotVanishing { residual });
    }
    let a = x.jacobian(&p)?;
    let frame = normal_frame(g_ref, n, u)?;
    let gm = g_ref.at(&p)?;
    // Coordinates of the g-orthogonal normal projection in an orthonormal frame.
    let coords = frame.transpose() * &gm;
    let induced = &coords * &a * &frame;
    let leak = &coords * (&a * n.tangent(u)?);
    let tangent_leak = leak.column_iter().map(|c| c.norm()).fold(0.0, f64::max);
    Ok(LinearApproximation {
        u: u.clone(),
        a,
        induced,
        tangent_leak,
    })
}

/// Outcome of [`is_euler_like`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EulerLikeReport {
    pub euler_like: bool,
    /// `max_u ‖X(p(u))‖`.
    pub vanishing_residual: f64,
    /// `max_u ‖induced(u) − I‖_max`.
    pub linear_residual: f64,
}

impl EulerLikeReport {
    pub fn residual(&self) -> f64 {
        self.vanishing_residual.max(self.linear_residual)
    }
}

/// Checks `X|_N = 0` and `ν(X) = 𝓔` on the grid, both to `tol`.
pub fn is_euler_like(
    x: &VectorFieldOracle,
    g_ref: &MetricField,
    n: &ParametrizedSubmanifold,
    grid: &[DVector<f64>],
    tol: f64,
) -> EulerLikeReport {
    let (vanishes, vanishing_residual) = vanishes_on_n(x, n, grid, tol);
    let mut linear_residual = 0.0_f64;
    for u in grid {
        let dev = linear_approximation_with(x, g_ref, n, u, f64::INFINITY)
            .map(|la| {
                let r = la.induced.nrows();
                max_abs(&(la.induced - DMatrix::identity(r, r)))
            })
            .unwrap_or(f64::INFINITY);
        linear_residual = linear_residual.max(dev);
    }
    EulerLikeReport {
        euler_like: vanishes && linear_residual <= tol,
        vanishing_residual,
        linear_residual,
    }
}

/// `(ψ_*𝓔)_{ψ(u,c)} = dψ_{(u,c)}(0, c)`.
pub fn pushforward_euler(psi: &TubularEmbedding, u: &DVector<f64>, c: &DVector<f64>) -> Result<DVector<f64>> {
    let z = psi.join(u, c);
    let d = psi.map().jacobian(&z)?;
    Ok(d.columns(psi.param_dim(), psi.fiber_dim()) * c)
}

/// `ψ_*𝓔` as an ambient field, inverting `ψ` at each query point.
pub fn pushforward_field(psi: &TubularEmbedding, inverse: EmbeddingInverse) -> VectorFieldOracle {
    let n = psi.ambient_dim();
    let (me, inv) = (psi.clone(), inverse.clone());
    let map = SmoothMap::fallible(n, n, move |x| {
        let (u, c) = me.split(&inv.invert(x)?);
        pushforward_euler(&me, &u, &c)
    });
    let (me, inv) = (psi.clone(), inverse);
    let map = map.with_domain(move |x| inv.invert(x).map(|z| me.map().contains(&z)).unwrap_or(false));
    VectorFieldOracle { map }
}

/// `t = 2^{-1}, …, 2^{-12}`.
pub fn default_schedule() -> Vec<f64> {
    (1..=12).map(|m| 0.5_f64.powi(m)).collect()
}

/// Iterates and limit from [`reconstruct_embedding_trace`].
#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub limit: DVector<f64>,
    pub iterates: Vec<DVector<f64>>,
    /// `‖iterate_{i+1} − iterate_i‖`.
    pub increments: Vec<f64>,
}

/// `lim_{t→0⁺} Φ^X_{−ln t}(ψ₀(u, t·c))`.
pub fn reconstruct_embedding(
    x: &VectorFieldOracle,
    psi0: &TubularEmbedding,
    u: &DVector<f64>,
    c: &DVector<f64>,
    t_seq: &[f64],
    tol: f64,
) -> Result<DVector<f64>> {
    reconstruct_embedding_trace(x, psi0, u, c, t_seq, tol).map(|r| r.limit)
}

pub fn reconstruct_embedding_trace(
    x: &VectorFieldOracle,
    psi0: &TubularEmbedding,
    u: &DVector<f64>,
    c: &DVector<f64>,
    t_seq: &[f64],
    tol: f64,
) -> Result<Reconstruction> {
    if t_seq.len() < 3 || t_seq.windows(2).any(|w| !(w[1] < w[0])) || t_seq.iter().any(|&t| t <= 0.0) {
        return Err(Error::DomainError(
            "schedule must be ≥ 3 decreasing positive times".into(),
        ));
    }
    let field = |y: &DVector<f64>| x.eval(y);
    let inside = |y: &DVector<f64>| x.contains(y);
    let mut iterates = Vec::with_capacity(t_seq.len());
    for &t in t_seq {
        let start = psi0.eval(u, &(c * t))?;
        let duration = -t.ln();
        let end = match integrate(field, inside, &start, duration, &OdeOptions::new(FLOW_TOL)) {
            Ok(tr) => tr.last_state().clone(),
            Err(Error::DomainExit { t, .. }) => return Err(Error::FlowExit { t }),
            Err(e) if e.is_domain_like() => return Err(Error::FlowExit { t: 0.0 }),
            Err(e) => return Err(e),
        };
        iterates.push(end);
    }
    let increments: Vec<f64> = iterates.windows(2).map(|w| (&w[1] - &w[0]).norm()).collect();
    let scale = iterates.iter().map(|y| y.amax()).fold(1.0_f64, f64::max);
    // Below this the increments are integrator noise and need not decrease.
    let floor = 1e3 * FLOW_TOL * scale;
    let cauchy = increments.windows(2).all(|w| w[1] < w[0] || w[1] <= floor);
    let last = *increments.last().expect("at least two iterates");
    if !cauchy || last > tol {
        return Err(Error::NoConvergence {
            iterations: t_seq.len(),
            residual: last,
        });
    }
    let m = iterates.len();
    let limit = richardson(
        &iterates[m - 3],
        &iterates[m - 2],
        &iterates[m - 1],
        t_seq[m - 3],
        t_seq[m - 2],
        t_seq[m - 1],
    );
    Ok(Reconstruction {
        limit,
        iterates,
        increments,
    })
}

/// Eliminates the `t` and `t²` error terms of `y(t) = L + a t + b t² + …` from three samples.
fn richardson(y0: &DVector<f64>, y1: &DVector<f64>, y2: &DVector<f64>, t0: f64, t1: f64, t2: f64) -> DVector<f64> {
    // Lagrange extrapolation of the quadratic through (tᵢ, yᵢ) to t = 0.
    let l0 = t1 * t2 / ((t0 - t1) * (t0 - t2));
    let l1 = t0 * t2 / ((t1 - t0) * (t1 - t2));
    let l2 = t0 * t1 / ((t2 - t0) * (t2 - t1));
    y0 * l0 + y1 * l1 + y2 * l2
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::Bends;
    use crate::submanifold::{fiber_pattern, uniform_grid, RadiusFunction};

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(xs)
    }

    fn origin() -> ParametrizedSubmanifold {
        ParametrizedSubmanifold::point(v(&[0.0, 0.0]))
    }

    fn here() -> Vec<DVector<f64>> {
        vec![DVector::zeros(0)]
    }

    #[test]
    fn euler_field_is_the_identity() {
        assert_eq!(euler_field(&v(&[1.0, 2.0])), v(&[1.0, 2.0]));
        assert_eq!(euler_field(&v(&[0.0, 0.0])), v(&[0.0, 0.0]));
        let x = v(&[0.3, -1.7]);
        assert_eq!(euler_field(&(&x * 2.5)), euler_field(&x) * 2.5);
    }

    #[test]
    fn vanishing_examples() {
        assert_eq!(
            vanishes_on_n(&VectorFieldOracle::euler(2), &origin(), &here(), 1e-12),
            (true, 0.0)
        );
        let (ok, r) = vanishes_on_n(&VectorFieldOracle::constant(v(&[1.0, 0.0])), &origin(), &here(), 1e-12);
        assert!(!ok);
        assert_eq!(r, 1.0);
    }

    #[test]
    fn linear_approximation_examples() {
        let g = MetricField::euclidean(2);
        let id = linear_approximation(&VectorFieldOracle::euler(2), &g, &origin(), &DVector::zeros(0)).unwrap();
        assert_eq!(id.induced, DMatrix::identity(2, 2));
        let two = linear_approximation(
            &VectorFieldOracle::scaled_euler(2, 2.0),
            &g,
            &origin(),
            &DVector::zeros(0),
        )
        .unwrap();
        assert_eq!(two.induced, DMatrix::identity(2, 2) * 2.0);
        let quad = VectorFieldOracle::new(SmoothMap::new(2, 2, |x| {
            v(&[x[0] + x[0] * x[1], x[1] + 3.0 * x[0] * x[0]])
        }))
        .unwrap();
        let la = linear_approximation(&quad, &g, &origin(), &DVector::zeros(0)).unwrap();
        assert!(max_abs(&(la.induced - DMatrix::identity(2, 2))) < 1e-6);
        assert!(matches!(
            linear_approximation(
                &VectorFieldOracle::constant(v(&[1.0, 0.0])),
                &g,
                &origin(),
                &DVector::zeros(0)
            ),
            Err(Error::NotVanishing { .. })
        ));
    }

    #[test]
    fn euler_like_examples() {
        let g = MetricField::euclidean(2);
        let ok = is_euler_like(&VectorFieldOracle::euler(2), &g, &origin(), &here(), 1e-9);
        assert!(ok.euler_like);
        assert_eq!(ok.residual(), 0.0);
        let bad = is_euler_like(&VectorFieldOracle::scaled_euler(2, 2.0), &g, &origin(), &here(), 1e-9);
        assert!(!bad.euler_like);
        assert_eq!(bad.linear_residual, 1.0);
    }

    fn fiber_bend() -> TubularEmbedding {
        // ψ(u, w) = (u, w + 0.1 w²) over the x-axis.
        let map = SmoothMap::new(2, 2, |z| v(&[z[0], z[1] + 0.1 * z[1] * z[1]]))
            .with_jacobian(|z| DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0 + 0.2 * z[1]]));
        TubularEmbedding::new(ParametrizedSubmanifold::x_axis(), MetricField::euclidean(2), map).unwrap()
    }

    #[test]
    fn pushforward_examples() {
        let flat = TubularEmbedding::new(
            ParametrizedSubmanifold::x_axis(),
            MetricField::euclidean(2),
            SmoothMap::identity(2),
        )
        .unwrap();
        assert_eq!(
            pushforward_euler(&flat, &v(&[0.7]), &v(&[0.3])).unwrap(),
            v(&[0.0, 0.3])
        );
        assert_eq!(
            pushforward_euler(&flat, &v(&[0.7]), &v(&[0.0])).unwrap(),
            v(&[0.0, 0.0])
        );
        let bent = pushforward_euler(&fiber_bend(), &v(&[0.0]), &v(&[0.5])).unwrap();
        assert!((bent - v(&[0.0, 0.55])).norm() < 1e-15);
    }

    #[test]
    fn pushforward_field_of_bent_circle_is_euler_like() {
        let n = ParametrizedSubmanifold::circle(1.0, -1.5, 1.5);
        let g = MetricField::euclidean(2);
        let grid = uniform_grid(&[-1.2], &[1.2], &[9]);
        let delta = RadiusFunction::constant(0.5, grid.clone());
        let psi = TubularEmbedding::normal_offset(
            n.clone(),
            g.clone(),
            Bends {
                tangent: 0.1,
                ..Bends::default()
            },
        )
        .unwrap();
        let x = pushforward_field(&psi, psi.inverse_table(&grid, &fiber_pattern(1), &delta).unwrap());
        let report = is_euler_like(&x, &g, &n, &grid, 1e-5);
        assert!(report.euler_like, "{report:?}");
        let la = linear_approximation(&x, &g, &n, &v(&[0.4])).unwrap();
        assert!(la.tangent_leak <= TANGENT_LEAK_TOL);
    }

    #[test]
    fn euler_flow_reconstructs_identity() {
        let psi0 = TubularEmbedding::new(origin(), MetricField::euclidean(2), SmoothMap::identity(2)).unwrap();
        let out = reconstruct_embedding(
            &VectorFieldOracle::euler(2),
            &psi0,
            &DVector::zeros(0),
            &v(&[0.3, -0.2]),
            &default_schedule(),
            1e-6,
        )
        .unwrap();
        let err = (out - v(&[0.3, -0.2])).norm();
        assert!(err < 1e-8, "{err:e}");
    }

    #[test]
    fn quadratic_point_embedding_is_recovered() {
        let psi_map = SmoothMap::new(2, 2, |z| v(&[z[0] + 0.1 * z[0] * z[0], z[1]]))
            .with_jacobian(|z| DMatrix::from_row_slice(2, 2, &[1.0 + 0.2 * z[0], 0.0, 0.0, 1.0]));
        let psi = TubularEmbedding::new(origin(), MetricField::euclidean(2), psi_map.clone()).unwrap();
        let seeds: Vec<_> = fiber_pattern(2).iter().map(|d| d * 0.8).collect();
        let x = pushforward_field(&psi, EmbeddingInverse::from_samples(psi_map, &seeds).unwrap());
        let psi0 = TubularEmbedding::new(origin(), MetricField::euclidean(2), SmoothMap::identity(2)).unwrap();
        for w in [v(&[0.5, 0.0]), v(&[-0.3, 0.4]), v(&[0.1, -0.45])] {
            let out = reconstruct_embedding(&x, &psi0, &DVector::zeros(0), &w, &default_schedule(), 1e-4).unwrap();
            let expected = psi.eval(&DVector::zeros(0), &w).unwrap();
            assert!((out - expected).norm() < 1e-4);
        }
    }

    #[test]
    fn doubled_euler_is_not_reconstructed() {
        let psi0 = TubularEmbedding::new(origin(), MetricField::euclidean(2), SmoothMap::identity(2)).unwrap();
        let r = reconstruct_embedding(
            &VectorFieldOracle::scaled_euler(2, 2.0),
            &psi0,
            &DVector::zeros(0),
            &v(&[0.3, 0.1]),
            &default_schedule(),
            1e-4,
        );
        assert!(matches!(r, Err(Error::NoConvergence { .. })));
    }

    #[test]
    fn richardson_is_exact_for_quadratics() {
        let y = |t: f64| v(&[1.0 + 2.0 * t - 3.0 * t * t]);
        let l = richardson(&y(0.25), &y(0.125), &y(0.0625), 0.25, 0.125, 0.0625);
        assert!((l[0] - 1.0).abs() < 1e-14);
    }
}
