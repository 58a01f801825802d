//! Tubular neighborhood embeddings `ψ : ν_N ⊇ tube → M` in normal-frame coordinates.
//!
//! Abstract normal-bundle points are written `(u, c)`: `u` a parameter of `N`, `c`
//! coordinates of the class `[F(u)·c] ∈ T_pM / T_pN`, where `F(u)` is the
//! orthonormal normal frame of a fixed *frame metric* (the background metric `g̃`).

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::numerics::{max_abs, solve_inverse_with, NewtonOptions, SmoothMap};
use crate::riemannian::MetricField;
use crate::submanifold::{normal_frame, normal_frame_derivatives, ParametrizedSubmanifold, RadiusFunction};

/// Newton tolerance for inverting embeddings.
pub const INVERSE_TOL: f64 = 1e-12;

/// Quadratic bends added to the straight normal offset `p(u) + F(u)c`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Bends {
    /// Coefficient of `|c|²·t̂(u)` (unit tangent of the first parameter).
    pub tangent: f64,
    /// Coefficient of `c₁²·F(u)e_last`.
    pub normal: f64,
    /// Coefficient of `c₁²·e₁` (fixed ambient direction).
    pub ambient: f64,
}

#[derive(Clone)]
pub struct TubularEmbedding {
    submanifold: ParametrizedSubmanifold,
    frame_metric: MetricField,
    map: SmoothMap,
}

impl fmt::Debug for TubularEmbedding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TubularEmbedding")
            .field("submanifold", &self.submanifold)
            .field("frame_metric", &self.frame_metric.name())
            .field("map", &self.map)
            .finish()
    }
}

impl TubularEmbedding {
    /// Wraps a map `(u, c) ∈ R^{k+r} → R^n`.
    pub fn new(submanifold: ParametrizedSubmanifold, frame_metric: MetricField, map: SmoothMap) -> Result<Self> {
        let n = submanifold.ambient_dim();
        if map.domain_dim() != n || map.codomain_dim() != n {
            return Err(Error::Dimension {
                expected: n,
                got: map.domain_dim(),
            });
        }
        if frame_metric.dim() != n {
            return Err(Error::Dimension {
                expected: n,
                got: frame_metric.dim(),
            });
        }
        Ok(Self {
            submanifold,
            frame_metric,
            map,
        })
    }

    /// `ψ(u, c) = p(u) + F(u)c + bends`, with an analytic fiber jacobian and
    /// finite-difference derivatives of the frame along `u`.
    pub fn normal_offset(
        submanifold: ParametrizedSubmanifold,
        frame_metric: MetricField,
        bends: Bends,
    ) -> Result<Self> {
        let k = submanifold.param_dim();
        let n = submanifold.ambient_dim();
        let r = n - k;
        let parts = Arc::new(OffsetParts {
            submanifold: submanifold.clone(),
            metric: frame_metric.clone(),
            bends,
        });
        let eval_parts = parts.clone();
        let map =
            SmoothMap::fallible(n, n, move |z| eval_parts.eval(z)).with_fallible_jacobian(move |z| parts.jacobian(z));
        let n_pred = submanifold.param_predicate();
        let map = map.with_domain(move |z| n_pred(&z.rows(0, k).into_owned()) && z.len() == k + r);
        Self::new(submanifold, frame_metric, map)
    }

    pub fn submanifold(&self) -> &ParametrizedSubmanifold {
        &self.submanifold
    }

    pub fn frame_metric(&self) -> &MetricField {
        &self.frame_metric
    }

    pub fn map(&self) -> &SmoothMap {
        &self.map
    }

    pub fn param_dim(&self) -> usize {
        self.submanifold.param_dim()
    }

    pub fn fiber_dim(&self) -> usize {
        self.submanifold.codim()
    }

    pub fn ambient_dim(&self) -> usize {
        self.submanifold.ambient_dim()
    }

    pub fn join(&self, u: &DVector<f64>, c: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(u.len() + c.len(), u.iter().chain(c.iter()).copied())
    }

    pub fn split(&self, z: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let k = self.param_dim();
        (z.rows(0, k).into_owned(), z.rows(k, z.len() - k).into_owned())
    }

    pub fn eval(&self, u: &DVector<f64>, c: &DVector<f64>) -> Result<DVector<f64>> {
        self.map.eval(&self.join(u, c))
    }

    /// The frame `F(u)` identifying fiber coordinates with normal classes.
    pub fn frame(&self, u: &DVector<f64>) -> Result<DMatrix<f64>> {
        normal_frame(&self.frame_metric, &self.submanifold, u)
    }

    /// Max of `|ψ(u,0) − p(u)|` over the grid.
    pub fn zero_section_residual(&self, grid: &[DVector<f64>]) -> Result<f64> {
        let zero = DVector::zeros(self.fiber_dim());
        let mut worst = 0.0_f64;
        for u in grid {
            let d = self.eval(u, &zero)? - self.submanifold.point_at(u)?;
            worst = worst.max(d.amax());
        }
        Ok(worst)
    }

    /// Max deviation from the identity of the induced map on normal classes,
    /// `Fᵀ G (∂ψ/∂c)(u, 0)`, over the grid.
    pub fn linearization_residual(&self, grid: &[DVector<f64>]) -> Result<f64> {
        let k = self.param_dim();
        let r = self.fiber_dim();
        let zero = DVector::zeros(r);
        let mut worst = 0.0_f64;
        for u in grid {
            let jac = self.map.jacobian(&self.join(u, &zero))?;
            let fiber_block = jac.columns(k, r).into_owned();
            let frame = self.frame(u)?;
            let g = self.frame_metric.at(&self.submanifold.point_at(u)?)?;
            let induced = frame.transpose() * g * fiber_block;
            worst = worst.max(max_abs(&(induced - DMatrix::identity(r, r))));
        }
        Ok(worst)
    }

    /// Checks both defining properties: zero-section to `N` within 1e-10 and
    /// induced normal map equal to the identity within 1e-6.
    pub fn check_invariants(&self, grid: &[DVector<f64>]) -> Result<()> {
        let z = self.zero_section_residual(grid)?;
        if z > 1e-10 {
            return Err(Error::HypothesisFailure(format!(
                "embedding does not send the zero-section to N (residual {z:e})"
            )));
        }
        let l = self.linearization_residual(grid)?;
        if l > 1e-6 {
            return Err(Error::HypothesisFailure(format!(
                "embedding does not induce the identity on the normal bundle (residual {l:e})"
            )));
        }
        Ok(())
    }

    /// Forward table over `grid × pattern·delta(u)`, used to seed Newton inversion.
    pub fn inverse_table(
        &self,
        grid: &[DVector<f64>],
        pattern: &[DVector<f64>],
        delta: &RadiusFunction,
    ) -> Result<EmbeddingInverse> {
        let mut entries = Vec::with_capacity(grid.len() * pattern.len());
        for u in grid {
            let d = delta.eval(u);
            for c in pattern {
                let z = self.join(u, &(c * d));
                if let Ok(x) = self.map.eval(&z) {
                    entries.push((z, x));
                }
            }
        }
        if entries.is_empty() {
            return Err(Error::NotInDomain("empty inverse table".into()));
        }
        Ok(EmbeddingInverse {
            map: self.map.clone(),
            entries: Arc::new(entries),
        })
    }
}

struct OffsetParts {
    submanifold: ParametrizedSubmanifold,
    metric: MetricField,
    bends: Bends,
}

impl OffsetParts {
    fn unit_tangent(&self, u: &DVector<f64>, p: &DVector<f64>) -> Result<DVector<f64>> {
        let j = self.submanifold.tangent(u)?;
        let t = j.column(0).into_owned();
        let len = self.metric.norm(p, &t)?;
        Ok(t / len)
    }

    fn eval(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        let k = self.submanifold.param_dim();
        let n = self.submanifold.ambient_dim();
        let u = z.rows(0, k).into_owned();
        let c = z.rows(k, n - k).into_owned();
        let p = self.submanifold.point_at(&u)?;
        let frame = normal_frame(&self.metric, &self.submanifold, &u)?;
        let mut x = &p + &frame * &c;
        let b = self.bends;
        if b.tangent != 0.0 && k > 0 {
            x += self.unit_tangent(&u, &p)? * (b.tangent * c.norm_squared());
        }
        if b.normal != 0.0 && !c.is_empty() {
            x += frame.column(c.len() - 1) * (b.normal * c[0] * c[0]);
        }
        if b.ambient != 0.0 && !c.is_empty() {
            x[0] += b.ambient * c[0] * c[0];
        }
        Ok(x)
    }

    fn jacobian(&self, z: &DVector<f64>) -> Result<DMatrix<f64>> {
        let k = self.submanifold.param_dim();
        let n = self.submanifold.ambient_dim();
        let r = n - k;
        let u = z.rows(0, k).into_owned();
        let c = z.rows(k, r).into_owned();
        let p = self.submanifold.point_at(&u)?;
        let frame = normal_frame(&self.metric, &self.submanifold, &u)?;
        let b = self.bends;
        let mut jac = DMatrix::zeros(n, n);

        // Fiber block.
        let mut fiber = frame.clone();
        if b.tangent != 0.0 && k > 0 {
            let t = self.unit_tangent(&u, &p)?;
            fiber += &t * (2.0 * b.tangent * &c).transpose();
        }
        if b.normal != 0.0 && r > 0 {
            let mut col = fiber.column(0).into_owned();
            col += frame.column(r - 1) * (2.0 * b.normal * c[0]);
            fiber.set_column(0, &col);
        }
        if b.ambient != 0.0 && r > 0 {
            fiber[(0, 0)] += 2.0 * b.ambient * c[0];
        }
        jac.columns_mut(k, r).copy_from(&fiber);

        // Base block: J_p + (∂F)c + bend terms, frame and tangent derivatives by central differences.
        if k > 0 {
            let h = crate::numerics::DEFAULT_FD_STEP;
            let jp = self.submanifold.tangent(&u)?;
            let d_frame = normal_frame_derivatives(&self.metric, &self.submanifold, &u, h)?;
            for i in 0..k {
                let mut col = jp.column(i).into_owned() + &d_frame[i] * &c;
                if b.tangent != 0.0 {
                    let mut up = u.clone();
                    up[i] += h;
                    let mut um = u.clone();
                    um[i] -= h;
                    let tp = self.unit_tangent(&up, &self.submanifold.point_at(&up)?)?;
                    let tm = self.unit_tangent(&um, &self.submanifold.point_at(&um)?)?;
                    col += (tp - tm) / (2.0 * h) * (b.tangent * c.norm_squared());
                }
                if b.normal != 0.0 && r > 0 {
                    col += d_frame[i].column(r - 1) * (b.normal * c[0] * c[0]);
                }
                jac.set_column(i, &col);
            }
        }
        Ok(jac)
    }
}

/// Newton inversion of an embedding seeded from the nearest entry of a forward table.
#[derive(Clone)]
pub struct EmbeddingInverse {
    map: SmoothMap,
    entries: Arc<Vec<(DVector<f64>, DVector<f64>)>>,
}

impl fmt::Debug for EmbeddingInverse {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EmbeddingInverse")
            .field("entries", &self.entries.len())
            .finish()
    }
}

impl EmbeddingInverse {
    /// Table from explicit preimages `zs` of `map`; preimages outside the map's domain are dropped.
    pub fn from_samples(map: SmoothMap, zs: &[DVector<f64>]) -> Result<Self> {
        let entries: Vec<_> = zs
            .iter()
            .filter_map(|z| map.eval(z).ok().map(|x| (z.clone(), x)))
            .collect();
        if entries.is_empty() {
            return Err(Error::NotInDomain("empty inverse table".into()));
        }
        Ok(Self {
            map,
            entries: Arc::new(entries),
        })
    }

    pub fn map(&self) -> &SmoothMap {
        &self.map
    }

    pub fn seed(&self, x: &DVector<f64>) -> &DVector<f64> {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, (_, img)) in self.entries.iter().enumerate() {
            let d = (img - x).norm_squared();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        &self.entries[best].0
    }

    pub fn invert(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        solve_inverse_with(&self.map, x, self.seed(x), &NewtonOptions::new(INVERSE_TOL))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::submanifold::{fiber_pattern, uniform_grid};

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(xs)
    }

    #[test]
    fn bent_circle_embedding_formula() {
        let n = ParametrizedSubmanifold::circle(1.0, -1.5, 1.5);
        let psi = TubularEmbedding::normal_offset(
            n,
            MetricField::euclidean(2),
            Bends {
                tangent: 0.1,
                ..Bends::default()
            },
        )
        .unwrap();
        let (th, s) = (0.4_f64, 0.3);
        let expected = v(&[th.cos(), th.sin()]) * (1.0 + s) + v(&[-th.sin(), th.cos()]) * (0.1 * s * s);
        assert!((psi.eval(&v(&[th]), &v(&[s])).unwrap() - expected).norm() < 1e-14);
        let grid = uniform_grid(&[-1.0], &[1.0], &[5]);
        psi.check_invariants(&grid).unwrap();
    }

    #[test]
    fn analytic_jacobian_agrees_with_finite_differences() {
        let n = ParametrizedSubmanifold::helix(1.0, 0.5, -2.0, 2.0);
        let psi = TubularEmbedding::normal_offset(
            n,
            MetricField::euclidean(3),
            Bends {
                tangent: 0.1,
                normal: 0.05,
                ambient: 0.02,
            },
        )
        .unwrap();
        for z in [v(&[0.3, 0.1, -0.2]), v(&[-1.0, 0.2, 0.25]), v(&[0.0, 0.0, 0.0])] {
            let a = psi.map().jacobian(&z).unwrap();
            let f = psi.map().fd_jacobian(&z).unwrap();
            assert!((a - f).amax() < 1e-8);
        }
    }

    #[test]
    fn inverse_recovers_coordinates() {
        let n = ParametrizedSubmanifold::helix(1.0, 0.5, -2.0, 2.0);
        let psi = TubularEmbedding::normal_offset(
            n,
            MetricField::euclidean(3),
            Bends {
                tangent: 0.1,
                normal: 0.05,
                ambient: 0.0,
            },
        )
        .unwrap();
        let grid = uniform_grid(&[-1.0], &[1.0], &[9]);
        let delta = RadiusFunction::constant(0.5, grid.clone());
        let inv = psi.inverse_table(&grid, &fiber_pattern(2), &delta).unwrap();
        let z = v(&[0.37, -0.21, 0.3]);
        let x = psi.map().eval(&z).unwrap();
        assert!((inv.invert(&x).unwrap() - z).norm() < 1e-11);
    }

    #[test]
    fn scaled_fiber_is_not_a_tubular_embedding() {
        let n = ParametrizedSubmanifold::x_axis();
        let map = SmoothMap::new(2, 2, |z| v(&[z[0], 2.0 * z[1]]));
        let psi = TubularEmbedding::new(n, MetricField::euclidean(2), map).unwrap();
        assert!(psi.check_invariants(&[v(&[0.0])]).is_err());
    }
}
