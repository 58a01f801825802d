//! End-to-end scenario runs: certify a tube, realize the embedding as a normal
//! exponential map of a pulled-back metric, and check every stage.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{ScenarioConfig, Stage};
use super::report::ResidualReport;
use crate::embedding::{EmbeddingInverse, TubularEmbedding};
use crate::error::{Error, Result};
use crate::euler::{default_schedule, is_euler_like, pushforward_field, reconstruct_embedding, VectorFieldOracle};
use crate::extension::{
    bundle_diffeo, bundle_diffeo_inverse, extend_map, sigma, sigma_inverse, sigma_inverse_interior, BundleRegion, Disc,
};
use crate::numerics::{max_abs, SmoothMap};
use crate::realization::{
    build_chi, correction_eta, curve_length_discrepancy, isometry_geodesic_check, point_case_metric,
    reference_embedding, verify_main_diagram, Chi, QuadraticCurve, ResidualSummary,
};
use crate::riemannian::{exp_differential_at_zero, exp_map, geodesic_points, GeodesicDomainPolicy, MetricField};
use crate::submanifold::{
    fiber_pattern, normal_representative, tubular_radius_estimate, ParametrizedSubmanifold, RadiusFunction,
};

/// Parameter times for the geodesic correspondence check.
pub const ISOMETRY_TIMES: [f64; 4] = [0.25, 0.5, 0.75, 1.0];
const RESCALING_TIMES: [f64; 3] = [0.25, 0.5, 0.75];

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Record wall time per stage. Off by default so repeated runs are bitwise identical.
    pub record_timing: bool,
}

/// Reports plus the error text of any stage that failed outright.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioRun {
    pub reports: Vec<ResidualReport>,
    pub errors: Vec<(String, String)>,
}

impl ScenarioRun {
    pub fn all_pass(&self) -> bool {
        self.reports.iter().all(|r| r.pass)
    }

    pub fn report(&self, stage: Stage) -> Option<&ResidualReport> {
        self.reports.iter().find(|r| r.stage == stage.name())
    }
}

pub fn run_scenario(cfg: &ScenarioConfig) -> Result<Vec<ResidualReport>> {
    Ok(run_scenario_with(cfg, &RunOptions::default())?.reports)
}

pub fn run_scenario_with(cfg: &ScenarioConfig, opts: &RunOptions) -> Result<ScenarioRun> {
    cfg.validate()?;
    let mut ctx = Context::new(cfg)?;
    let mut run = ScenarioRun {
        reports: Vec::new(),
        errors: Vec::new(),
    };
    for stage in cfg.stages() {
        let start = Instant::now();
        let outcome = ctx.run(stage);
        let tol = ctx.tolerance(stage);
        let mut report = match outcome {
            Ok(o) => ResidualReport::new(&cfg.name, stage.name(), o.count, o.max, o.mean, tol),
            Err(e) => {
                run.errors.push((stage.name().to_string(), e.to_string()));
                ResidualReport::failed(&cfg.name, stage.name(), tol)
            }
        };
        if opts.record_timing {
            report.runtime_ms = start.elapsed().as_millis() as u64;
        }
        run.reports.push(report);
    }
    Ok(run)
}

/// Residuals of one stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Outcome {
    pub count: usize,
    pub max: f64,
    pub mean: f64,
}

impl From<ResidualSummary> for Outcome {
    fn from(s: ResidualSummary) -> Self {
        Self {
            count: s.count,
            max: s.max,
            mean: s.mean,
        }
    }
}

fn summary(values: &[f64]) -> Outcome {
    ResidualSummary::from_values(values).into()
}

/// A fixed non-Euclidean SPD field used as a second reference metric.
pub fn skewed_reference_metric(n: usize) -> MetricField {
    MetricField::new(
        "skewed",
        n,
        move |x| {
            let mut a = DMatrix::from_fn(n, n, |i, j| if i == j { 2.0 + i as f64 } else { 0.3 });
            a += DMatrix::identity(n, n) * (0.1 * x.norm_squared());
            a
        },
        |_| true,
    )
}

/// Built pieces of the realization, created on first use.
pub struct Context<'a> {
    cfg: &'a ScenarioConfig,
    pub background: MetricField,
    pub submanifold: ParametrizedSubmanifold,
    pub grid: Vec<DVector<f64>>,
    pub psi: TubularEmbedding,
    delta: Option<RadiusFunction>,
    phi: Option<TubularEmbedding>,
    inverse: Option<EmbeddingInverse>,
    chi: Option<Chi>,
    realized: Option<MetricField>,
}

impl<'a> Context<'a> {
    pub fn new(cfg: &'a ScenarioConfig) -> Result<Self> {
        let background = cfg.build_metric()?;
        let submanifold = cfg.build_submanifold();
        let grid = cfg.grid(submanifold.param_dim());
        let psi = cfg.build_embedding(&background, &submanifold)?;
        Ok(Self {
            cfg,
            background,
            submanifold,
            grid,
            psi,
            delta: None,
            phi: None,
            inverse: None,
            chi: None,
            realized: None,
        })
    }

    fn rng(&self, stage: Stage) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.cfg.samples.seed ^ ((stage as u64 + 1) << 32))
    }

    pub fn tolerance(&self, stage: Stage) -> f64 {
        let t = &self.cfg.tolerances;
        match stage {
            Stage::Radius => 0.0,
            Stage::Reference => t.reference,
            Stage::Chi => t.chi,
            Stage::Correction => t.correction,
            Stage::Diagram => t.diagram,
            Stage::Isometry => t.isometry,
            Stage::CurveLength => t.curve_length,
            Stage::ExpRescaling => t.exp_rescaling,
            Stage::ExpDifferential => t.exp_differential,
            Stage::StarShaped => 0.0,
            Stage::EulerLike => t.euler_like,
            Stage::MetricIndependence => t.metric_independence,
            Stage::Reconstruction => t.reconstruction,
            Stage::PointCase => t.point_case,
            Stage::Appendix => t.appendix,
        }
    }

    pub fn delta(&mut self) -> Result<RadiusFunction> {
        if self.delta.is_none() {
            let d = tubular_radius_estimate(&self.background, &self.submanifold, &self.grid, self.cfg.radius.delta0)?;
            self.delta = Some(d);
        }
        Ok(self.delta.clone().expect("just set"))
    }

    pub fn phi(&mut self) -> Result<TubularEmbedding> {
        if self.phi.is_none() {
            let delta = self.delta()?;
            self.phi = Some(reference_embedding(&self.background, &self.submanifold, &delta)?);
        }
        Ok(self.phi.clone().expect("just set"))
    }

    pub fn inverse(&mut self) -> Result<EmbeddingInverse> {
        if self.inverse.is_none() {
            let delta = self.delta()?;
            let pattern = fiber_pattern(self.submanifold.codim());
            self.inverse = Some(self.psi.inverse_table(&self.grid, &pattern, &delta)?);
        }
        Ok(self.inverse.clone().expect("just set"))
    }

    pub fn chi(&mut self) -> Result<Chi> {
        if self.chi.is_none() {
            let phi = self.phi()?;
            let inverse = self.inverse()?;
            self.chi = Some(build_chi(&self.psi, &phi, inverse)?);
        }
        Ok(self.chi.clone().expect("just set"))
    }

    /// `g = χ*g̃`.
    pub fn realized_metric(&mut self) -> Result<MetricField> {
        if self.realized.is_none() {
            let chi = self.chi()?;
            self.realized = Some(chi.pullback(&self.background));
        }
        Ok(self.realized.clone().expect("just set"))
    }

    /// Uniform sample in the parameter box.
    fn sample_u(&self, rng: &mut ChaCha8Rng) -> DVector<f64> {
        let (lo, hi) = (self.cfg.radius.grid_lo, self.cfg.radius.grid_hi);
        DVector::from_fn(self.submanifold.param_dim(), |_, _| rng.gen_range(lo..hi))
    }

    /// Uniform sample in the open ball of radius `radius`.
    fn sample_ball(&self, rng: &mut ChaCha8Rng, radius: f64) -> DVector<f64> {
        let r = self.submanifold.codim();
        loop {
            let c = DVector::from_fn(r, |_, _| rng.gen_range(-1.0..1.0));
            if c.norm() < 1.0 {
                return c * radius;
            }
        }
    }

    fn tube_samples(&mut self, stage: Stage, count: usize, fraction: f64) -> Result<Vec<(DVector<f64>, DVector<f64>)>> {
        let delta = self.delta()?;
        let mut rng = self.rng(stage);
        Ok((0..count)
            .map(|_| {
                let u = self.sample_u(&mut rng);
                let c = self.sample_ball(&mut rng, fraction * delta.eval(&u));
                (u, c)
            })
            .collect())
    }

    /// Evenly spread subset of the parameter grid.
    fn base_points(&self, count: usize) -> Vec<DVector<f64>> {
        let m = self.grid.len();
        let count = count.clamp(1, m);
        (0..count)
            .map(|i| self.grid[(i * (m - 1)) / count.max(2).saturating_sub(1).max(1)].clone())
            .collect()
    }

    pub fn run(&mut self, stage: Stage) -> Result<Outcome> {
        match stage {
            Stage::Radius => self.stage_radius(),
            Stage::Reference => self.stage_reference(),
            Stage::Chi => self.stage_chi(),
            Stage::Correction => self.stage_correction(),
            Stage::Diagram => self.stage_diagram(),
            Stage::Isometry => self.stage_isometry(),
            Stage::CurveLength => self.stage_curve_length(),
            Stage::ExpRescaling => self.stage_exp(Stage::ExpRescaling),
            Stage::ExpDifferential => self.stage_exp(Stage::ExpDifferential),
            Stage::StarShaped => self.stage_exp(Stage::StarShaped),
            Stage::EulerLike => self.stage_euler_like(),
            Stage::MetricIndependence => self.stage_metric_independence(),
            Stage::Reconstruction => self.stage_reconstruction(),
            Stage::PointCase => self.stage_point_case(),
            Stage::Appendix => self.stage_appendix(),
        }
    }

    /// Excess of the certified radius over the known focal bound (or `delta0`).
    fn stage_radius(&mut self) -> Result<Outcome> {
        let d = self.delta()?;
        let bound = self.cfg.radius.focal_bound.unwrap_or(self.cfg.radius.delta0);
        let excess: Vec<f64> = d.values.iter().map(|v| (v - bound).max(0.0)).collect();
        Ok(summary(&excess))
    }

    fn stage_reference(&mut self) -> Result<Outcome> {
        let phi = self.phi()?;
        let mut values = Vec::new();
        for emb in [&self.psi, &phi] {
            values.push(emb.zero_section_residual(&self.grid)?);
            values.push(emb.linearization_residual(&self.grid)?);
        }
        Ok(summary(&values))
    }

    fn stage_chi(&mut self) -> Result<Outcome> {
        let chi = self.chi()?;
        let values = self
            .grid
            .iter()
            .map(|u| {
                let p = self.submanifold.point_at(u)?;
                Ok((chi.eval(&p)? - p).norm())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(summary(&values))
    }

    fn stage_correction(&mut self) -> Result<Outcome> {
        let chi = self.chi()?.as_map();
        let values = self
            .grid
            .iter()
            .map(|u| correction_eta(&chi, &self.background, &self.submanifold, u).map(|c| c.normal_residual))
            .collect::<Result<Vec<_>>>()?;
        Ok(summary(&values))
    }

    fn stage_diagram(&mut self) -> Result<Outcome> {
        let g = self.realized_metric()?;
        let delta = self.delta()?;
        let samples = self.tube_samples(Stage::Diagram, self.cfg.samples.diagram, self.cfg.samples.fraction)?;
        let (s, _) = verify_main_diagram(&self.psi, &g, &delta, &samples)?;
        Ok(s.into())
    }

    /// `g`-normal velocities `v` at sampled base points.
    fn normal_velocities(
        &mut self,
        stage: Stage,
        count: usize,
        fraction: f64,
    ) -> Result<Vec<(DVector<f64>, DVector<f64>)>> {
        let g = self.realized_metric()?;
        let samples = self.tube_samples(stage, count, fraction)?;
        samples
            .into_iter()
            .map(|(u, c)| {
                let w = normal_representative(&g, &self.submanifold, &u, &(self.psi.frame(&u)? * c))?.w;
                Ok((u, w))
            })
            .collect()
    }

    fn stage_isometry(&mut self) -> Result<Outcome> {
        let g = self.realized_metric()?;
        let chi = self.chi()?.as_map();
        let velocities =
            self.normal_velocities(Stage::Isometry, self.cfg.samples.isometry, self.cfg.samples.fraction)?;
        let values = velocities
            .iter()
            .map(|(u, w)| isometry_geodesic_check(&chi, &g, &self.background, &self.submanifold, u, w, &ISOMETRY_TIMES))
            .collect::<Result<Vec<_>>>()?;
        Ok(summary(&values))
    }

    fn stage_curve_length(&mut self) -> Result<Outcome> {
        let g = self.realized_metric()?;
        let chi = self.chi()?.as_map();
        let delta = self.delta()?;
        let mut rng = self.rng(Stage::CurveLength);
        let n = self.submanifold.ambient_dim();
        let mut values = Vec::new();
        for _ in 0..self.cfg.samples.curves {
            let u = self.sample_u(&mut rng);
            let d = delta.eval(&u);
            let c = self.sample_ball(&mut rng, 0.4 * d);
            let a = self.psi.eval(&u, &c)?;
            let dir = |rng: &mut ChaCha8Rng, len: f64| {
                let v: DVector<f64> = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
                let norm = v.norm().max(1e-12);
                v * (len / norm)
            };
            let b = dir(&mut rng, 0.1 * d);
            let k = dir(&mut rng, 0.05 * d);
            let curve = QuadraticCurve { a, b, c: k };
            values.push(curve_length_discrepancy(&chi, &g, &self.background, &curve)?);
        }
        Ok(summary(&values))
    }

    /// Rescaling, differential at zero and star-shapedness on `g̃` and `g`.
    fn stage_exp(&mut self, stage: Stage) -> Result<Outcome> {
        let g = self.realized_metric()?;
        let delta = self.delta()?;
        let bases = self.base_points(self.cfg.samples.exp_points);
        let metrics = [self.background.clone(), g];
        let policy = GeodesicDomainPolicy::default();
        let mut values = Vec::new();
        for metric in &metrics {
            for u in &bases {
                let p = self.submanifold.point_at(u)?;
                let frame = self.psi.frame(u)?;
                let d = delta.eval(u);
                let c = DVector::from_fn(frame.ncols(), |i, _| if i == 0 { 1.0 } else { 0.5 });
                let c = &c * (0.5 * d / c.norm());
                let w = normal_representative(metric, &self.submanifold, u, &(&frame * c))?.w;
                match stage {
                    Stage::ExpRescaling => {
                        let along = geodesic_points(metric, &p, &w, &RESCALING_TIMES)?;
                        for (t, q) in RESCALING_TIMES.iter().zip(along) {
                            values.push((exp_map(metric, &p, &(&w * *t))? - q).norm());
                        }
                    }
                    Stage::ExpDifferential => {
                        let dexp = exp_differential_at_zero(metric, &p)?;
                        values.push(max_abs(&(dexp - DMatrix::identity(p.len(), p.len()))));
                    }
                    _ => {
                        // Violations of star-shapedness among accepted velocities, long ones included.
                        for scale in [1.0, 2.0, 8.0] {
                            let v = &w * scale;
                            if policy.accepts(metric, &p, &v) {
                                let bad = RESCALING_TIMES
                                    .iter()
                                    .filter(|&&t| !policy.accepts(metric, &p, &(&v * t)))
                                    .count();
                                values.push(bad as f64);
                            }
                        }
                    }
                }
            }
        }
        Ok(summary(&values))
    }

    fn pushforward(&mut self) -> Result<VectorFieldOracle> {
        let inverse = self.inverse()?;
        Ok(pushforward_field(&self.psi, inverse))
    }

    fn stage_euler_like(&mut self) -> Result<Outcome> {
        let x = self.pushforward()?;
        let report = is_euler_like(
            &x,
            &self.background,
            &self.submanifold,
            &self.grid,
            self.cfg.tolerances.euler_like,
        );
        Ok(Outcome {
            count: self.grid.len(),
            max: report.residual(),
            mean: report.residual(),
        })
    }

    fn stage_metric_independence(&mut self) -> Result<Outcome> {
        let x = self.pushforward()?;
        let n = self.submanifold.ambient_dim();
        let tol = self.cfg.tolerances.euler_like;
        let a = is_euler_like(&x, &MetricField::euclidean(n), &self.submanifold, &self.grid, tol);
        let b = is_euler_like(&x, &skewed_reference_metric(n), &self.submanifold, &self.grid, tol);
        if a.euler_like != b.euler_like {
            return Err(Error::HypothesisFailure(
                "verdict depends on the reference metric".into(),
            ));
        }
        let change = (a.residual() - b.residual()).abs();
        Ok(Outcome {
            count: 2 * self.grid.len(),
            max: change,
            mean: change,
        })
    }

    fn stage_reconstruction(&mut self) -> Result<Outcome> {
        let x = self.pushforward()?;
        let phi = self.phi()?;
        let samples = self.tube_samples(Stage::Reconstruction, self.cfg.samples.reconstruction, 0.5)?;
        let schedule = default_schedule();
        let values = samples
            .iter()
            .map(|(u, c)| {
                let out = reconstruct_embedding(&x, &phi, u, c, &schedule, self.cfg.tolerances.reconstruction)?;
                Ok((out - self.psi.eval(u, c)?).norm())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(summary(&values))
    }

    fn stage_point_case(&mut self) -> Result<Outcome> {
        if self.submanifold.param_dim() != 0 {
            return Err(Error::HypothesisFailure(
                "point case needs a zero-dimensional submanifold".into(),
            ));
        }
        let delta = self.delta()?.min();
        let radius = self.cfg.samples.point_case_radius;
        let mut rng = self.rng(Stage::PointCase);
        let samples: Vec<_> = (0..self.cfg.samples.point_case)
            .map(|_| self.sample_ball(&mut rng, radius))
            .collect();
        let zero = DVector::zeros(0);
        let psi = self.psi.clone();
        let map = SmoothMap::fallible(psi.ambient_dim(), psi.ambient_dim(), move |v| psi.eval(&zero, v));
        let psi = self.psi.clone();
        let zero = DVector::zeros(0);
        let map = map.with_fallible_jacobian(move |v| psi.map().jacobian(&psi.join(&zero, v)));
        let pc = point_case_metric(&map, delta, &samples)?;
        let m = pc.max_residual.max(pc.trajectory_residual);
        Ok(Outcome {
            count: samples.len(),
            max: m,
            mean: m,
        })
    }

    /// Extension of `ψ` from the δ-disc bundle to the whole normal bundle.
    fn stage_appendix(&mut self) -> Result<Outcome> {
        let delta = self.delta()?;
        let k = self.submanifold.param_dim();
        let r = self.submanifold.codim();
        let d = delta.clone();
        let region = BundleRegion::new(k, r, move |_| DMatrix::identity(r, r), move |u| d.eval(u), Disc::W);
        let f = self.psi.map().clone();
        let extended = extend_map(&f, &region)?;
        let mut rng = self.rng(Stage::Appendix);
        let mut values = Vec::new();
        for _ in 0..32 {
            let u = self.sample_u(&mut rng);
            let du = delta.eval(&u);
            // Φ = id and F̃ = F on W′ (exactly).
            let inner = self.sample_ball(&mut rng, 0.5 * du);
            let (_, moved) = bundle_diffeo(&region, &u, &inner)?;
            values.push((moved - &inner).amax());
            let z = region.join(&u, &inner);
            values.push((extended.eval(&z)? - f.eval(&z)?).amax());
            // Φ⁻¹∘Φ = id near the rim.
            let dir = self.sample_ball(&mut rng, 1.0);
            if dir.norm() > 1e-3 {
                let rim = &dir * (0.95 * du / dir.norm());
                let (_, out) = bundle_diffeo(&region, &u, &rim)?;
                let (_, back) = bundle_diffeo_inverse(&region, &u, &out);
                values.push((back - &rim).amax());
                // F̃ is finite far outside W.
                let far = &dir * (10.0 * du / dir.norm());
                let y = extended.eval(&region.join(&u, &far))?;
                if y.iter().any(|c| !c.is_finite()) {
                    values.push(f64::INFINITY);
                }
            }
        }
        // Profile sanity: σ' ≥ 1 and σ⁻¹∘σ = id.
        for i in 0..=1000 {
            let t = -0.99 + 1.98 * i as f64 / 1000.0;
            let h = 1e-6;
            let slope = (sigma(t + h)? - sigma(t - h)?) / (2.0 * h);
            values.push((1.0 - 1e-9 - slope).max(0.0));
            values.push((sigma_inverse(sigma(t)?) - t).abs());
        }
        for i in 0..=200 {
            let s = -1000.0 + 10.0 * i as f64;
            values.push((sigma_inverse_interior(s).sigma() - s).abs());
        }
        Ok(summary(&values))
    }
}
