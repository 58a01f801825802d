//! Radial profile functions and the fiberwise diffeomorphism `Φ : W → E` that
//! stretches a δ-disc bundle onto the whole vector bundle while fixing the
//! half-radius disc bundle, plus the resulting extension of maps.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::numerics::SmoothMap;

fn check_open_unit(t: f64, what: &str) -> Result<()> {
    if t.is_finite() && t.abs() < 1.0 {
        Ok(())
    } else {
        Err(Error::DomainError(format!("{what}({t}) needs |t| < 1")))
    }
}

/// `t / √(1 − t²)`, a bijection `(−1, 1) → R`.
pub fn phi_stereo(t: f64) -> Result<f64> {
    check_open_unit(t, "phi")?;
    Ok(t / (1.0 - t * t).sqrt())
}

fn flat(x: f64) -> f64 {
    if x > 0.0 {
        (-1.0 / x).exp()
    } else {
        0.0
    }
}

fn flat_prime(x: f64) -> f64 {
    if x > 0.0 {
        flat(x) / (x * x)
    } else {
        0.0
    }
}

/// Smooth step: 0 for `x ≤ 0`, 1 for `x ≥ 1`, strictly increasing between.
pub fn smoothstep(x: f64) -> f64 {
    let (a, b) = (flat(x), flat(1.0 - x));
    a / (a + b)
}

fn smoothstep_prime(x: f64) -> f64 {
    let (a, b) = (flat(x), flat(1.0 - x));
    let (da, db) = (flat_prime(x), -flat_prime(1.0 - x));
    let s = a + b;
    (da * s - a * (da + db)) / (s * s)
}

/// `S(4(|t| − ½))`: 0 on `|t| ≤ ½`, 1 on `|t| ≥ ¾`.
pub fn rho(t: f64) -> Result<f64> {
    check_open_unit(t, "rho")?;
    Ok(smoothstep(4.0 * (t.abs() - 0.5)))
}

/// `ρ(t)/√(1 − t²) + 1`.
pub fn eta(t: f64) -> Result<f64> {
    check_open_unit(t, "eta")?;
    Ok(rho(t)? / (1.0 - t * t).sqrt() + 1.0)
}

/// `σ(a)` and `σ'(a)` for `a ∈ [0, 1)`, given `g = 1 − a` separately so that
/// `1 − a² = g(1 + a)` keeps full precision near the endpoint.
fn profile(a: f64, g: f64) -> (f64, f64) {
    let one_minus = g * (1.0 + a);
    let root = one_minus.sqrt();
    let x = 4.0 * (a - 0.5);
    let (r, dr) = (smoothstep(x), 4.0 * smoothstep_prime(x));
    (a * (r / root + 1.0), 1.0 + dr * a / root + r / (one_minus * root))
}

/// `σ(t) = η(t)·t = ρ(t)φ(t) + t`.
pub fn sigma(t: f64) -> Result<f64> {
    check_open_unit(t, "sigma")?;
    let a = t.abs();
    Ok(profile(a, 1.0 - a).0.copysign(t))
}

/// `σ'(t) = 1 + ρ'(t)φ(t) + ρ(t)(1 − t²)^{-3/2}`.
pub fn sigma_prime(t: f64) -> Result<f64> {
    check_open_unit(t, "sigma'")?;
    let a = t.abs();
    Ok(profile(a, 1.0 - a).1)
}

/// A point `t` of `(−1, 1)` together with `gap = 1 − |t|`.
///
/// Near `±1` the gap carries digits that `t` itself cannot hold, which is what
/// makes `σ` invertible to full precision in `s` when `σ'` is large.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitInterior {
    pub t: f64,
    pub gap: f64,
}

impl UnitInterior {
    pub fn new(t: f64) -> Result<Self> {
        check_open_unit(t, "UnitInterior")?;
        Ok(Self { t, gap: 1.0 - t.abs() })
    }

    /// `σ(t)` computed from the gap.
    pub fn sigma(&self) -> f64 {
        profile(self.t.abs(), self.gap).0.copysign(self.t)
    }
}

/// `σ⁻¹(s)` in gap form. Identity on `|s| ≤ ½`; elsewhere geometric bisection
/// on the gap followed by safeguarded Newton steps.
pub fn sigma_inverse_interior(s: f64) -> UnitInterior {
    if s.is_nan() {
        return UnitInterior {
            t: f64::NAN,
            gap: f64::NAN,
        };
    }
    if s.abs() <= 0.5 {
        return UnitInterior {
            t: s,
            gap: 1.0 - s.abs(),
        };
    }
    let target = s.abs();
    // Decreasing in the gap.
    let f = |g: f64| profile(1.0 - g, g).0 - target;
    let (mut lo, mut hi) = (f64::MIN_POSITIVE, 0.5_f64);
    if f(lo) <= 0.0 {
        // |s| beyond what an f64 gap can resolve.
        return UnitInterior {
            t: (1.0 - lo).copysign(s),
            gap: lo,
        };
    }
    while hi > lo * (1.0 + 4.0 * f64::EPSILON) {
        let mid = (0.5 * (lo.ln() + hi.ln())).exp();
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut g = if f(lo).abs() <= f(hi).abs() { lo } else { hi };
    for _ in 0..3 {
        let r = f(g);
        let d = profile(1.0 - g, g).1;
        if r == 0.0 || !d.is_finite() {
            break;
        }
        let next = g + r / d;
        if !(next > 0.0 && next < 0.5) || f(next).abs() >= r.abs() {
            break;
        }
        g = next;
    }
    UnitInterior {
        t: (1.0 - g).copysign(s),
        gap: g,
    }
}

/// `σ⁻¹(s)`, rounded to the nearest representable point of `(−1, 1)`.
pub fn sigma_inverse(s: f64) -> f64 {
    sigma_inverse_interior(s).t
}

/// `τ(s) = σ⁻¹(s)/s`, with `τ = 1` on `|s| ≤ ½`.
pub fn tau(s: f64) -> f64 {
    if s.abs() <= 0.5 {
        1.0
    } else {
        sigma_inverse(s) / s
    }
}

/// Which disc bundle of a [`BundleRegion`] is meant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Disc {
    /// `|v| < δ(p)`.
    W,
    /// `|v| < δ(p)/2`.
    WPrime,
}

type FiberMetricFn = dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync;
type RadiusFn = dyn Fn(&DVector<f64>) -> f64 + Send + Sync;

/// A disc bundle in a trivial vector bundle `R^m × R^r` with a fiber metric.
#[derive(Clone)]
pub struct BundleRegion {
    base_dim: usize,
    rank: usize,
    fiber_metric: Arc<FiberMetricFn>,
    delta: Arc<RadiusFn>,
    pub which: Disc,
}

impl fmt::Debug for BundleRegion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BundleRegion")
            .field("base_dim", &self.base_dim)
            .field("rank", &self.rank)
            .field("which", &self.which)
            .finish()
    }
}

impl BundleRegion {
    pub fn new<G, D>(base_dim: usize, rank: usize, fiber_metric: G, delta: D, which: Disc) -> Self
    where
        G: Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
        D: Fn(&DVector<f64>) -> f64 + Send + Sync + 'static,
    {
        Self {
            base_dim,
            rank,
            fiber_metric: Arc::new(fiber_metric),
            delta: Arc::new(delta),
            which,
        }
    }

    /// Standard fiber metric and constant radius.
    pub fn euclidean(base_dim: usize, rank: usize, delta: f64) -> Self {
        Self::new(
            base_dim,
            rank,
            move |_| DMatrix::identity(rank, rank),
            move |_| delta,
            Disc::W,
        )
    }

    pub fn with_disc(mut self, which: Disc) -> Self {
        self.which = which;
        self
    }

    pub fn base_dim(&self) -> usize {
        self.base_dim
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn delta(&self, p: &DVector<f64>) -> f64 {
        (self.delta)(p)
    }

    /// `|v|_g` at the base point `p`.
    pub fn fiber_norm(&self, p: &DVector<f64>, v: &DVector<f64>) -> f64 {
        v.dot(&((self.fiber_metric)(p) * v)).max(0.0).sqrt()
    }

    pub fn radius(&self, p: &DVector<f64>) -> f64 {
        match self.which {
            Disc::W => self.delta(p),
            Disc::WPrime => 0.5 * self.delta(p),
        }
    }

    pub fn contains(&self, p: &DVector<f64>, v: &DVector<f64>) -> bool {
        self.fiber_norm(p, v) < self.radius(p)
    }

    pub fn join(&self, p: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(p.len() + v.len(), p.iter().chain(v.iter()).copied())
    }

    pub fn split(&self, x: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        (
            x.rows(0, self.base_dim).into_owned(),
            x.rows(self.base_dim, self.rank).into_owned(),
        )
    }
}

/// `Φ(p, v) = (p, η(|v|/δ(p))·v)` on `W`.
pub fn bundle_diffeo(
    region: &BundleRegion,
    p: &DVector<f64>,
    v: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let ratio = region.fiber_norm(p, v) / region.delta(p);
    if !(ratio < 1.0) {
        return Err(Error::DomainError(format!("|v|/δ = {ratio} outside W")));
    }
    Ok((p.clone(), v * eta(ratio)?))
}

/// `Φ⁻¹(p, v') = (p, τ(|v'|/δ(p))·v')`, defined on all of `E`.
pub fn bundle_diffeo_inverse(
    region: &BundleRegion,
    p: &DVector<f64>,
    v: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>) {
    let ratio = region.fiber_norm(p, v) / region.delta(p);
    (p.clone(), v * tau(ratio))
}

/// `F̃ = F ∘ Φ⁻¹` on the whole bundle; equal to `F` on `W′`. `F` takes `(p, v)` concatenated.
pub fn extend_map(f: &SmoothMap, region: &BundleRegion) -> Result<SmoothMap> {
    let dim = region.base_dim + region.rank;
    if f.domain_dim() != dim {
        return Err(Error::Dimension {
            expected: dim,
            got: f.domain_dim(),
        });
    }
    let (inner, reg) = (f.clone(), region.clone());
    Ok(SmoothMap::fallible(dim, f.codomain_dim(), move |x| {
        let (p, v) = reg.split(x);
        let (p, w) = bundle_diffeo_inverse(&reg, &p, &v);
        inner.eval(&reg.join(&p, &w))
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(xs)
    }

    #[test]
    fn phi_examples() {
        assert_eq!(phi_stereo(0.0).unwrap(), 0.0);
        assert!((phi_stereo(1.0 / 2f64.sqrt()).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(phi_stereo(-0.3).unwrap(), -phi_stereo(0.3).unwrap());
        assert!(phi_stereo(1.0).is_err());
        assert!(phi_stereo(-1.5).is_err());
    }

    #[test]
    fn rho_examples() {
        assert_eq!(rho(0.3).unwrap(), 0.0);
        assert_eq!(rho(0.5).unwrap(), 0.0);
        assert_eq!(rho(0.9).unwrap(), 1.0);
        assert_eq!(rho(0.75).unwrap(), 1.0);
        let r = rho(0.6).unwrap();
        assert!(r > 0.0 && r < 1.0);
        assert_eq!(r, rho(-0.6).unwrap());
        assert!(rho(1.0).is_err());
    }

    #[test]
    fn sigma_examples() {
        assert_eq!(sigma(0.25).unwrap(), 0.25);
        assert!(sigma(0.999).unwrap() > 20.0);
        assert!((sigma_inverse(sigma(0.8).unwrap()) - 0.8).abs() < 1e-12);
        assert_eq!(sigma_inverse(0.3), 0.3);
    }

    #[test]
    fn sigma_prime_matches_central_difference() {
        for t in [-0.9, -0.7, -0.55, 0.0, 0.52, 0.6, 0.74, 0.8, 0.95] {
            let h = 1e-6;
            let fd = (sigma(t + h).unwrap() - sigma(t - h).unwrap()) / (2.0 * h);
            let exact = sigma_prime(t).unwrap();
            assert!((fd - exact).abs() <= 1e-6 * exact, "t = {t}: {fd} vs {exact}");
        }
    }

    #[test]
    fn inverse_is_as_good_as_the_conditioning_allows() {
        // σ(σ⁻¹(s)) can only land within half a spacing of σ on the f64 grid of t.
        for s in [-1000.0, -37.5, -2.0, 0.75, 3.0, 12.0, 250.0, 999.0] {
            let t = sigma_inverse(s);
            let spacing = sigma_prime(t).unwrap() * f64::EPSILON * t.abs();
            let err = (sigma(t).unwrap() - s).abs();
            assert!(
                err <= 1e-12_f64.max(4.0 * spacing),
                "s = {s}: {err:e} vs spacing {spacing:e}"
            );
        }
    }

    #[test]
    fn gap_form_round_trip_is_exact_to_rounding_in_s() {
        let mut worst = 0.0_f64;
        for i in 0..=20_000 {
            let s = -1000.0 + 0.1 * i as f64;
            let p = sigma_inverse_interior(s);
            assert!(p.t.abs() < 1.0 && p.gap > 0.0, "s = {s}");
            worst = worst.max((p.sigma() - s).abs());
        }
        assert!(worst <= 1e-12, "{worst:e}");
        assert_eq!(sigma_inverse_interior(0.25).sigma(), 0.25);
    }

    #[test]
    fn gap_form_agrees_with_plain_sigma() {
        for t in [-0.9, -0.6, -0.2, 0.0, 0.5, 0.7, 0.999] {
            let p = UnitInterior::new(t).unwrap();
            assert!((p.sigma() - sigma(t).unwrap()).abs() <= 1e-15 * sigma(t).unwrap().abs().max(1.0));
        }
        assert!(UnitInterior::new(1.0).is_err());
    }

    #[test]
    fn tau_is_one_inside_and_bounded() {
        assert_eq!(tau(0.0), 1.0);
        assert_eq!(tau(-0.5), 1.0);
        for s in [0.6, 1.0, 5.0, 100.0, 1e6] {
            assert!(tau(s) * s < 1.0);
            assert!(tau(s) > 0.0);
            assert_eq!(tau(s), tau(-s));
        }
    }

    fn annulus() -> BundleRegion {
        BundleRegion::new(
            1,
            2,
            |p| DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0 + p[0] * p[0]]),
            |p| 0.5 + 0.1 * p[0].sin(),
            Disc::W,
        )
    }

    fn scaled_to(region: &BundleRegion, p: &DVector<f64>, dir: &DVector<f64>, ratio: f64) -> DVector<f64> {
        dir * (ratio * region.delta(p) / region.fiber_norm(p, dir))
    }

    #[test]
    fn diffeo_is_identity_on_half_disc() {
        let w = annulus();
        let p = v(&[0.4]);
        let inner = scaled_to(&w, &p, &v(&[1.0, -2.0]), 0.3);
        let (q, out) = bundle_diffeo(&w, &p, &inner).unwrap();
        assert_eq!(q, p);
        assert_eq!(out, inner);
        assert!(bundle_diffeo(&w, &p, &scaled_to(&w, &p, &v(&[1.0, 0.0]), 1.0)).is_err());
    }

    #[test]
    fn diffeo_round_trip_near_the_rim() {
        let w = annulus();
        for (p, dir) in [
            (v(&[0.0]), v(&[1.0, 0.0])),
            (v(&[-1.3]), v(&[0.2, 0.9])),
            (v(&[2.0]), v(&[-1.0, -1.0])),
        ] {
            let x = scaled_to(&w, &p, &dir, 0.95);
            let (q, y) = bundle_diffeo(&w, &p, &x).unwrap();
            let (r, back) = bundle_diffeo_inverse(&w, &q, &y);
            assert_eq!(r, p);
            assert!((back - &x).amax() <= 1e-12);
        }
    }

    #[test]
    fn extension_examples() {
        let w = annulus();
        let projection = SmoothMap::new(3, 1, |x| v(&[x[0]]));
        let ext = extend_map(&projection, &w).unwrap();
        assert_eq!(ext.eval(&v(&[0.7, 40.0, -3.0])).unwrap(), v(&[0.7]));

        // F only defined on W.
        let region = w.clone();
        let partial = SmoothMap::new(3, 2, |x| v(&[x[1] * 2.0, x[0] + x[2]])).with_domain(move |x| {
            let (p, q) = region.split(x);
            region.contains(&p, &q)
        });
        let ext = extend_map(&partial, &w).unwrap();
        let p = v(&[0.3]);
        let far = scaled_to(&w, &p, &v(&[0.6, 0.8]), 10.0);
        let out = ext.eval(&w.join(&p, &far)).unwrap();
        let (_, pulled) = bundle_diffeo_inverse(&w, &p, &far);
        assert!(w.fiber_norm(&p, &pulled) < w.delta(&p));
        assert_eq!(out, partial.eval(&w.join(&p, &pulled)).unwrap());

        let near = scaled_to(&w, &p, &v(&[0.6, 0.8]), 0.49);
        let x = w.join(&p, &near);
        assert_eq!(ext.eval(&x).unwrap(), partial.eval(&x).unwrap());
    }

    #[test]
    fn smooth_across_the_gluing_radius() {
        let d1 = |t: f64| (sigma(t + 1e-4).unwrap() - sigma(t - 1e-4).unwrap()) / 2e-4;
        let d2 = |t: f64| (sigma(t + 1e-3).unwrap() - 2.0 * sigma(t).unwrap() + sigma(t - 1e-3).unwrap()) / 1e-6;
        for eps in [1e-4, 1e-3, 5e-3] {
            assert!((d1(0.5 + eps) - d1(0.5 - eps)).abs() < 1e-4);
            assert!((d2(0.5 + eps) - d2(0.5 - eps)).abs() < 1e-4);
        }
    }

    proptest! {
        #[test]
        fn sigma_is_odd_and_increasing(t in -0.999f64..0.999, dt in 1e-6f64..0.5) {
            prop_assert_eq!(sigma(-t).unwrap(), -sigma(t).unwrap());
            let u = t + dt;
            if u < 1.0 {
                prop_assert!(sigma(u).unwrap() > sigma(t).unwrap());
            }
        }

        #[test]
        fn profiles_are_even(t in -0.999f64..0.999, s in -1e4f64..1e4) {
            prop_assert_eq!(rho(t).unwrap(), rho(-t).unwrap());
            prop_assert_eq!(eta(t).unwrap(), eta(-t).unwrap());
            prop_assert_eq!(tau(s), tau(-s));
            prop_assert!(tau(s) * s.abs() < 1.0);
            let r = rho(t).unwrap();
            prop_assert!((0.0..=1.0).contains(&r));
        }

        #[test]
        fn sigma_inverse_recovers_t(t in -0.99f64..0.99) {
            prop_assert!((sigma_inverse(sigma(t).unwrap()) - t).abs() <= 1e-12);
        }

        #[test]
        fn diffeo_is_injective(a in 0.0f64..0.99, b in 0.0f64..0.99, angle in 0.0f64..std::f64::consts::TAU) {
            let w = annulus();
            let p = v(&[0.1]);
            let dir = v(&[angle.cos(), angle.sin()]);
            let x = scaled_to(&w, &p, &dir, a);
            let y = scaled_to(&w, &p, &dir, b);
            let (_, fx) = bundle_diffeo(&w, &p, &x).unwrap();
            let (_, fy) = bundle_diffeo(&w, &p, &y).unwrap();
            if (a - b).abs() > 1e-9 {
                prop_assert!(fx != fy);
            }
        }

        #[test]
        fn inverse_lands_in_w(ratio in 0.0f64..1e5, angle in 0.0f64..std::f64::consts::TAU) {
            let w = annulus();
            let p = v(&[-0.8]);
            let y = scaled_to(&w, &p, &v(&[angle.cos(), angle.sin()]), ratio);
            let (_, x) = bundle_diffeo_inverse(&w, &p, &y);
            prop_assert!(w.fiber_norm(&p, &x) < w.delta(&p));
        }
    }
}
