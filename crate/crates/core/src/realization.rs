//! Realizing a tubular neighborhood embedding as a normal exponential map.
//!
//! Given `ψ` and a background metric `g̃`, the reference embedding
//! `φ(u, c) = Ẽ(F(u)c)` and the diffeomorphism `χ = φ ∘ ψ⁻¹` produce the pullback
//! metric `g = χ*g̃`, whose normal exponential map reproduces `ψ`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::embedding::{EmbeddingInverse, TubularEmbedding, INVERSE_TOL};
use crate::error::{Error, Result};
use crate::numerics::{max_abs, solve_inverse_with, solve_linear, FdOrder, NewtonOptions, SmoothMap};
use crate::riemannian::{exp_map, geodesic_points, MetricField};
use crate::submanifold::{
    normal_exponential, normal_frame, normal_representative, ParametrizedSubmanifold, RadiusFunction,
};

/// Finite-difference step for derivatives of composed (pullback) metrics. Larger
/// than the default because the metric already contains one differentiation.
pub const PULLBACK_FD_STEP: f64 = 1e-4;
/// Step of the five-point stencil differentiating the reference embedding.
pub const REFERENCE_FD_STEP: f64 = 1e-3;

/// `φ(u, c) = Ẽ(u, F(u)c)` on `|c| < δ(u)`.
pub fn reference_embedding(
    g_bg: &MetricField,
    n: &ParametrizedSubmanifold,
    delta: &RadiusFunction,
) -> Result<TubularEmbedding> {
    let k = n.param_dim();
    let dim = n.ambient_dim();
    let (metric, sub, radius) = (g_bg.clone(), n.clone(), delta.clone());
    let map = SmoothMap::fallible(dim, dim, move |z| {
        let u = z.rows(0, k).into_owned();
        let c = z.rows(k, dim - k).into_owned();
        let frame = normal_frame(&metric, &sub, &u)?;
        normal_exponential(&metric, &sub, &crate::submanifold::NormalVector { u, w: frame * c })
    });
    let sub = n.clone();
    let map = map
        .with_fd_step(REFERENCE_FD_STEP)
        .with_fd_order(FdOrder::Fourth)
        .with_domain(move |z| {
            let u = z.rows(0, k).into_owned();
            sub.in_param_domain(&u) && z.rows(k, dim - k).norm() < radius.eval(&u)
        });
    TubularEmbedding::new(n.clone(), g_bg.clone(), map)
}

/// `χ = φ ∘ ψ⁻¹` on the image under `ψ` of `φ`'s domain.
#[derive(Clone)]
pub struct Chi {
    psi: TubularEmbedding,
    phi: TubularEmbedding,
    inverse: EmbeddingInverse,
}

impl fmt::Debug for Chi {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Chi").field("inverse", &self.inverse).finish()
    }
}

impl Chi {
    pub fn psi(&self) -> &TubularEmbedding {
        &self.psi
    }

    pub fn phi(&self) -> &TubularEmbedding {
        &self.phi
    }

    /// `ψ⁻¹(x)`, rejected unless it lies in `φ`'s domain.
    pub fn preimage(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let z = self.inverse.invert(x)?;
        if !self.phi.map().contains(&z) {
            return Err(Error::NotInDomain(format!(
                "{:?} lies outside the certified tube",
                x.as_slice()
            )));
        }
        Ok(z)
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        self.preimage(x).is_ok()
    }

    pub fn eval(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.phi.map().eval(&self.preimage(x)?)
    }

    fn jacobian_at_preimage(&self, z: &DVector<f64>) -> Result<DMatrix<f64>> {
        let dphi = self.phi.map().jacobian(z)?;
        let dpsi = self.psi.map().jacobian(z)?;
        // Dχ = Dφ · Dψ⁻¹, solved row-wise through Dψᵀ.
        let lu = dpsi.transpose().lu();
        let mut out = DMatrix::zeros(dphi.nrows(), dphi.ncols());
        for i in 0..dphi.nrows() {
            let row = dphi.row(i).transpose();
            let solved = lu.solve(&row).ok_or(Error::SingularJacobian {
                condition: f64::INFINITY,
            })?;
            out.set_row(i, &solved.transpose());
        }
        Ok(out)
    }

    /// `Dχ(x) = Dφ(z)·Dψ(z)⁻¹`, `z = ψ⁻¹(x)`.
    pub fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.jacobian_at_preimage(&self.preimage(x)?)
    }

    pub fn as_map(&self) -> SmoothMap {
        let n = self.psi.ambient_dim();
        let (a, b, c) = (self.clone(), self.clone(), self.clone());
        SmoothMap::fallible(n, n, move |x| a.eval(x))
            .with_fallible_jacobian(move |x| b.jacobian(x))
            .with_domain(move |x| c.contains(x))
    }

    fn metric_at_preimage(&self, g_bg: &MetricField, z: &DVector<f64>) -> Result<DMatrix<f64>> {
        let d = self.jacobian_at_preimage(z)?;
        let y = self.phi.map().eval(z)?;
        congruence(&d, &g_bg.at(&y)?)
    }

    /// `χ*g̃` with central-difference partials. The stencil preimages are
    /// seeded from the linearization of `ψ` at the centre.
    pub fn pullback(&self, g_bg: &MetricField) -> MetricField {
        let h = PULLBACK_FD_STEP;
        let (me, bg) = (self.clone(), g_bg.clone());
        let (jet_me, jet_bg) = (self.clone(), g_bg.clone());
        let dom = self.clone();
        MetricField::fallible(
            format!("pullback({})", g_bg.name()),
            g_bg.dim(),
            move |x| me.metric_at_preimage(&bg, &me.preimage(x)?),
            Arc::new(move |x| dom.contains(x)),
        )
        .with_fd_step(h)
        .with_geodesic_tol(g_bg.geodesic_tol())
        .with_jet(move |x| jet_me.pullback_jet(&jet_bg, x, h))
    }

    fn pullback_jet(&self, g_bg: &MetricField, x: &DVector<f64>, h: f64) -> Result<(DMatrix<f64>, Vec<DMatrix<f64>>)> {
        let z0 = self.preimage(x)?;
        let g0 = self.metric_at_preimage(g_bg, &z0)?;
        let dpsi_inv = self
            .psi
            .map()
            .jacobian(&z0)?
            .try_inverse()
            .ok_or(Error::SingularJacobian {
                condition: f64::INFINITY,
            })?;
        let n = x.len();
        let mut partials = Vec::with_capacity(n);
        for l in 0..n {
            let side = |sign: f64| -> Result<DMatrix<f64>> {
                let mut xs = x.clone();
                xs[l] += sign * h;
                let seed = &z0 + dpsi_inv.column(l) * (sign * h);
                let z = solve_inverse_with(self.psi.map(), &xs, &seed, &NewtonOptions::new(INVERSE_TOL))
                    .map_err(|_| Error::DomainMargin { step: h })?;
                if !self.phi.map().contains(&z) {
                    return Err(Error::DomainMargin { step: h });
                }
                self.metric_at_preimage(g_bg, &z)
            };
            let plus = side(1.0)?;
            let minus = side(-1.0)?;
            partials.push((plus - minus) / (2.0 * h));
        }
        Ok((g0, partials))
    }
}

fn congruence(d: &DMatrix<f64>, g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let out = d.transpose() * g * d;
    let sym = (&out + out.transpose()) * 0.5;
    if sym.clone().cholesky().is_none() {
        return Err(Error::SingularJacobian {
            condition: f64::INFINITY,
        });
    }
    Ok(sym)
}

/// Builds `χ = φ ∘ ψ⁻¹`. `inverse` seeds Newton for `ψ⁻¹`.
pub fn build_chi(psi: &TubularEmbedding, phi: &TubularEmbedding, inverse: EmbeddingInverse) -> Result<Chi> {
    if psi.ambient_dim() != phi.ambient_dim() || psi.param_dim() != phi.param_dim() {
        return Err(Error::Dimension {
            expected: psi.ambient_dim(),
            got: phi.ambient_dim(),
        });
    }
    Ok(Chi {
        psi: psi.clone(),
        phi: phi.clone(),
        inverse,
    })
}

/// `g(x) = Dχ(x)ᵀ g̃(χ(x)) Dχ(x)` for a generic map `χ`.
pub fn pullback_metric(chi: &SmoothMap, g_bg: &MetricField) -> MetricField {
    let map = chi.clone();
    let bg = g_bg.clone();
    let dom = chi.clone();
    MetricField::fallible(
        format!("pullback({})", g_bg.name()),
        g_bg.dim(),
        move |x| {
            let d = map.jacobian(x)?;
            let y = map.eval(x)?;
            congruence(&d, &bg.at(&y)?)
        },
        Arc::new(move |x| dom.contains(x)),
    )
    .with_fd_step(PULLBACK_FD_STEP)
    .with_geodesic_tol(g_bg.geodesic_tol())
}

/// `η_p`: tangent parts of `dχ_p(v) − v` for the normal frame vectors `v` of `metric`.
#[derive(Debug, Clone)]
pub struct CorrectionMap {
    pub u: DVector<f64>,
    /// Normal frame (columns) the map is expressed in.
    pub frame: DMatrix<f64>,
    /// Tangent basis `J(u)`.
    pub tangent: DMatrix<f64>,
    /// `k × r`: column `j` holds tangent coordinates of `η(frame_j)`.
    pub eta: DMatrix<f64>,
    /// Largest non-tangent remainder of `dχ(v) − v`.
    pub normal_residual: f64,
}

impl CorrectionMap {
    /// `η(v)` for `v = frame·c`, as an ambient vector.
    pub fn apply(&self, c: &DVector<f64>) -> DVector<f64> {
        &self.tangent * (&self.eta * c)
    }
}

pub fn correction_eta(
    chi: &SmoothMap,
    metric: &MetricField,
    n: &ParametrizedSubmanifold,
    u: &DVector<f64>,
) -> Result<CorrectionMap> {
    let p = n.point_at(u)?;
    let d = chi.jacobian(&p)?;
    let frame = normal_frame(metric, n, u)?;
    let tangent = n.tangent(u)?;
    let k = tangent.ncols();
    let r = frame.ncols();
    let mut eta = DMatrix::zeros(k, r);
    let mut worst = 0.0_f64;
    for j in 0..r {
        let v = frame.column(j).into_owned();
        let rem = &d * &v - &v;
        let coeffs = if k == 0 {
            DVector::zeros(0)
        } else {
            solve_linear(&(tangent.transpose() * &tangent), &(tangent.transpose() * &rem))?
        };
        let residual = (&rem - &tangent * &coeffs).norm();
        worst = worst.max(residual);
        eta.set_column(j, &coeffs);
    }
    if worst > 1e-6 {
        return Err(Error::DecompositionFailure { residual: worst });
    }
    Ok(CorrectionMap {
        u: u.clone(),
        frame,
        tangent,
        eta,
        normal_residual: worst,
    })
}

/// Max and mean of a set of non-negative residuals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualSummary {
    pub count: usize,
    pub max: f64,
    pub mean: f64,
}

impl ResidualSummary {
    pub fn from_values(values: &[f64]) -> Self {
        let count = values.len();
        let max = values.iter().copied().fold(0.0_f64, f64::max);
        // Sorted summation keeps the mean independent of evaluation order.
        let mut sorted = values.to_vec();
        sorted.sort_by(|a, b| a.total_cmp(b));
        let mean = if count == 0 {
            0.0
        } else {
            sorted.iter().sum::<f64>() / count as f64
        };
        Self { count, max, mean }
    }
}

/// `‖E(Ψ(u, c)) − ψ(u, c)‖` for each sample, `Ψ` being the `g`-orthogonal
/// representative of the class `[F̃(u)c]`.
pub fn verify_main_diagram(
    psi: &TubularEmbedding,
    g: &MetricField,
    delta: &RadiusFunction,
    samples: &[(DVector<f64>, DVector<f64>)],
) -> Result<(ResidualSummary, Vec<f64>)> {
    let n = psi.submanifold();
    let mut residuals = Vec::with_capacity(samples.len());
    for (u, c) in samples {
        if c.norm() >= delta.eval(u) {
            return Err(Error::NotInDomain(format!(
                "sample |w| = {} beyond δ = {}",
                c.norm(),
                delta.eval(u)
            )));
        }
        let class_rep = psi.frame(u)? * c;
        let nv = normal_representative(g, n, u, &class_rep)?;
        let image = normal_exponential(g, n, &nv)?;
        let target = psi.eval(u, c)?;
        residuals.push((image - target).norm());
    }
    Ok((ResidualSummary::from_values(&residuals), residuals))
}

/// `max_t ‖exp̃_p(t(v + η_p(v))) − χ(exp_p(t v))‖` for `v ∈ Λ_pN` of `g`.
pub fn isometry_geodesic_check(
    chi: &SmoothMap,
    g: &MetricField,
    g_bg: &MetricField,
    n: &ParametrizedSubmanifold,
    u: &DVector<f64>,
    v_normal: &DVector<f64>,
    t_samples: &[f64],
) -> Result<f64> {
    let p = n.point_at(u)?;
    let correction = correction_eta(chi, g, n, u)?;
    let gm = g.at(&p)?;
    let coords = correction.frame.transpose() * &gm * v_normal;
    let corrected = v_normal + correction.apply(&coords);
    let positive: Vec<f64> = t_samples.iter().copied().filter(|&t| t > 0.0).collect();
    let along = if positive.is_empty() {
        Vec::new()
    } else {
        geodesic_points(g, &p, v_normal, &positive)?
    };
    let mut worst = 0.0_f64;
    let mut next = along.iter();
    for &t in t_samples {
        let (lhs, rhs) = if t == 0.0 {
            (p.clone(), chi.eval(&p)?)
        } else {
            let q = next.next().expect("one point per positive sample");
            (exp_map(g_bg, &p, &(&corrected * t))?, chi.eval(q)?)
        };
        worst = worst.max((lhs - rhs).norm());
    }
    Ok(worst)
}

// Five-point Gauss–Legendre rule on [-1, 1].
const GL_NODES: [f64; 5] = [
    -0.906_179_845_938_664,
    -0.538_469_310_105_683,
    0.0,
    0.538_469_310_105_683,
    0.906_179_845_938_664,
];
const GL_WEIGHTS: [f64; 5] = [
    0.236_926_885_056_189,
    0.478_628_670_499_366,
    0.568_888_888_888_889,
    0.478_628_670_499_366,
    0.236_926_885_056_189,
];

/// Quadratic curve `x(s) = a + s·b + s²·c`, `s ∈ [0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticCurve {
    pub a: DVector<f64>,
    pub b: DVector<f64>,
    pub c: DVector<f64>,
}

impl QuadraticCurve {
    pub fn at(&self, s: f64) -> DVector<f64> {
        &self.a + &self.b * s + &self.c * (s * s)
    }

    pub fn velocity(&self, s: f64) -> DVector<f64> {
        &self.b + &self.c * (2.0 * s)
    }

    /// `∫ |x'(s)|_g ds` by composite Gauss–Legendre quadrature.
    pub fn length(&self, g: &MetricField, panels: usize) -> Result<f64> {
        let h = 1.0 / panels as f64;
        let mut total = 0.0;
        for i in 0..panels {
            let mid = (i as f64 + 0.5) * h;
            for (x, w) in GL_NODES.iter().zip(GL_WEIGHTS) {
                let s = mid + 0.5 * h * x;
                total += 0.5 * h * w * g.norm(&self.at(s), &self.velocity(s))?;
            }
        }
        Ok(total)
    }
}

/// Length of `map ∘ curve` in `g` from chord lengths with midpoint metrics,
/// Richardson-extrapolated from `m` and `2m` segments.
pub fn polyline_length(map: &SmoothMap, curve: &QuadraticCurve, g: &MetricField, m: usize) -> Result<f64> {
    let chords = |segments: usize| -> Result<f64> {
        let pts = (0..=segments)
            .map(|i| map.eval(&curve.at(i as f64 / segments as f64)))
            .collect::<Result<Vec<_>>>()?;
        let mut total = 0.0;
        for w in pts.windows(2) {
            let mid = (&w[0] + &w[1]) * 0.5;
            total += g.norm(&mid, &(&w[1] - &w[0]))?;
        }
        Ok(total)
    };
    let coarse = chords(m)?;
    let fine = chords(2 * m)?;
    Ok((4.0 * fine - coarse) / 3.0)
}

/// Relative discrepancy between the `g`-length of `curve` and the `g̃`-length of `χ ∘ curve`.
pub fn curve_length_discrepancy(
    chi: &SmoothMap,
    g: &MetricField,
    g_bg: &MetricField,
    curve: &QuadraticCurve,
) -> Result<f64> {
    let direct = curve.length(g, 8)?;
    let image = polyline_length(chi, curve, g_bg, 64)?;
    Ok((direct - image).abs() / direct.abs().max(f64::MIN_POSITIVE))
}

/// The metric `g = ψ_*(flat)` on `ψ(ball)` and how well `exp_p = ψ` holds for it.
#[derive(Debug, Clone)]
pub struct PointCase {
    pub metric: MetricField,
    /// `max ‖exp_p(v) − ψ(v)‖` over the sample vectors, read off the same
    /// integration as the trajectory check.
    pub max_residual: f64,
    /// `max ‖γ_v(t) − ψ(tv)‖` over the sample vectors and interior times.
    pub trajectory_residual: f64,
}

/// Times along each trajectory at which `γ_v(t) = ψ(tv)` is checked.
pub const POINT_CASE_TIMES: [f64; 8] = [0.125, 0.25, 0.375, 0.5, 0.625, 0.75, 0.875, 1.0];

/// Pushforward of the flat metric through `ψ : R^n → M` with `dψ₀ = I`, verified on `samples`.
/// The metric lives on `ψ(B(0, domain_radius))`.
pub fn point_case_metric(psi: &SmoothMap, domain_radius: f64, samples: &[DVector<f64>]) -> Result<PointCase> {
    let n = psi.domain_dim();
    let zero = DVector::zeros(n);
    let d0 = psi.jacobian(&zero)?;
    let dev = max_abs(&(d0 - DMatrix::identity(n, n)));
    if dev > 1e-6 {
        return Err(Error::HypothesisFailure(format!(
            "dψ₀ differs from the identity by {dev:e}"
        )));
    }
    let base = psi.eval(&zero)?;
    let radius = domain_radius;
    let point = ParametrizedSubmanifold::point(base.clone());
    let flat = MetricField::euclidean(n);
    let psi_emb = TubularEmbedding::new(point.clone(), flat.clone(), psi.clone())?;
    let ball = SmoothMap::identity(n).with_domain(move |z| z.norm() < radius);
    let linear = TubularEmbedding::new(point, flat.clone(), ball)?;
    let seeds: Vec<DVector<f64>> = crate::submanifold::fiber_pattern(n)
        .into_iter()
        .flat_map(|d| [0.5, 1.0].map(|s| &d * (s * radius)))
        .filter(|z| z.norm() < radius)
        .collect();
    let inverse = EmbeddingInverse::from_samples(psi.clone(), &seeds)?;
    // g = (ψ⁻¹)*(flat): the pullback through χ = id ∘ ψ⁻¹.
    let chi = build_chi(&psi_emb, &linear, inverse)?;
    let metric = chi.pullback(&flat).with_name("flat-pushforward");

    let mut worst_end = 0.0_f64;
    let mut worst_traj = 0.0_f64;
    for v in samples {
        let pts = geodesic_points(&metric, &base, v, &POINT_CASE_TIMES)?;
        for (t, q) in POINT_CASE_TIMES.iter().zip(pts) {
            let err = (q - psi.eval(&(v * *t))?).norm();
            worst_traj = worst_traj.max(err);
            if *t == 1.0 {
                worst_end = worst_end.max(err);
            }
        }
    }
    Ok(PointCase {
        metric,
        max_residual: worst_end,
        trajectory_residual: worst_traj,
    })
}
