//! Scenario configuration files (TOML, strict keys) and built-in scenarios.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::embedding::{Bends, TubularEmbedding};
use crate::error::{Error, Result};
use crate::riemannian::MetricField;
use crate::submanifold::{uniform_grid, ParametrizedSubmanifold};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MetricSpec {
    Euclidean { dim: usize },
    RoundSphere,
    Polar,
    Constant { matrix: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SubmanifoldSpec {
    Point { at: Vec<f64> },
    AffineLine { origin: Vec<f64>, direction: Vec<f64> },
    Circle { radius: f64, lo: f64, hi: f64 },
    Helix { radius: f64, pitch: f64, lo: f64, hi: f64 },
    SphereEquator { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EmbeddingSpec {
    /// `p(u) + F(u)c` plus quadratic bends.
    NormalOffset {
        #[serde(default)]
        tangent_bend: f64,
        #[serde(default)]
        normal_bend: f64,
        #[serde(default)]
        ambient_bend: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RadiusSpec {
    pub delta0: f64,
    pub grid_lo: f64,
    pub grid_hi: f64,
    pub grid_points: usize,
    /// Known focal distance; the certified radius is reported against it.
    pub focal_bound: Option<f64>,
}

impl Default for RadiusSpec {
    fn default() -> Self {
        Self {
            delta0: 1.0,
            grid_lo: -1.2,
            grid_hi: 1.2,
            grid_points: 9,
            focal_bound: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleSpec {
    pub seed: u64,
    pub diagram: usize,
    /// Fiber samples are drawn from `|c| < fraction·δ(u)`.
    pub fraction: f64,
    pub isometry: usize,
    pub curves: usize,
    pub exp_points: usize,
    pub reconstruction: usize,
    pub point_case: usize,
    pub point_case_radius: f64,
}

impl Default for SampleSpec {
    fn default() -> Self {
        Self {
            seed: 20_240_601,
            diagram: 200,
            fraction: 0.6,
            isometry: 6,
            curves: 20,
            exp_points: 3,
            reconstruction: 6,
            point_case: 100,
            point_case_radius: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToleranceSpec {
    pub reference: f64,
    pub chi: f64,
    pub correction: f64,
    pub diagram: f64,
    pub isometry: f64,
    pub curve_length: f64,
    pub exp_rescaling: f64,
    pub exp_differential: f64,
    pub euler_like: f64,
    pub metric_independence: f64,
    pub reconstruction: f64,
    pub point_case: f64,
    pub appendix: f64,
}

impl Default for ToleranceSpec {
    fn default() -> Self {
        Self {
            reference: 1e-6,
            chi: 1e-9,
            correction: 1e-6,
            diagram: 1e-5,
            isometry: 1e-5,
            curve_length: 1e-6,
            exp_rescaling: 1e-8,
            exp_differential: 1e-5,
            euler_like: 1e-5,
            metric_independence: 1e-9,
            reconstruction: 1e-4,
            point_case: 1e-6,
            appendix: 1e-12,
        }
    }
}

impl ToleranceSpec {
    /// The same tolerance for every residual stage.
    pub fn uniform(tol: f64) -> Self {
        Self {
            reference: tol,
            chi: tol,
            correction: tol,
            diagram: tol,
            isometry: tol,
            curve_length: tol,
            exp_rescaling: tol,
            exp_differential: tol,
            euler_like: tol,
            metric_independence: tol,
            reconstruction: tol,
            point_case: tol,
            appendix: tol,
        }
    }

    fn all(&self) -> [(&'static str, f64); 13] {
        [
            ("tolerances.reference", self.reference),
            ("tolerances.chi", self.chi),
            ("tolerances.correction", self.correction),
            ("tolerances.diagram", self.diagram),
            ("tolerances.isometry", self.isometry),
            ("tolerances.curve_length", self.curve_length),
            ("tolerances.exp_rescaling", self.exp_rescaling),
            ("tolerances.exp_differential", self.exp_differential),
            ("tolerances.euler_like", self.euler_like),
            ("tolerances.metric_independence", self.metric_independence),
            ("tolerances.reconstruction", self.reconstruction),
            ("tolerances.point_case", self.point_case),
            ("tolerances.appendix", self.appendix),
        ]
    }
}

/// Pipeline stages, in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Radius,
    Reference,
    Chi,
    Correction,
    Diagram,
    Isometry,
    CurveLength,
    ExpRescaling,
    ExpDifferential,
    StarShaped,
    EulerLike,
    MetricIndependence,
    Reconstruction,
    PointCase,
    Appendix,
}

impl Stage {
    pub const ALL: [Stage; 15] = [
        Stage::Radius,
        Stage::Reference,
        Stage::Chi,
        Stage::Correction,
        Stage::Diagram,
        Stage::Isometry,
        Stage::CurveLength,
        Stage::ExpRescaling,
        Stage::ExpDifferential,
        Stage::StarShaped,
        Stage::EulerLike,
        Stage::MetricIndependence,
        Stage::Reconstruction,
        Stage::PointCase,
        Stage::Appendix,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Radius => "radius",
            Stage::Reference => "reference",
            Stage::Chi => "chi",
            Stage::Correction => "correction",
            Stage::Diagram => "diagram",
            Stage::Isometry => "isometry",
            Stage::CurveLength => "curve-length",
            Stage::ExpRescaling => "exp-rescaling",
            Stage::ExpDifferential => "exp-differential",
            Stage::StarShaped => "star-shaped",
            Stage::EulerLike => "euler-like",
            Stage::MetricIndependence => "metric-independence",
            Stage::Reconstruction => "reconstruction",
            Stage::PointCase => "point-case",
            Stage::Appendix => "appendix",
        }
    }

    pub fn from_name(name: &str) -> Option<Stage> {
        Stage::ALL.into_iter().find(|s| s.name() == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub metric: MetricSpec,
    pub submanifold: SubmanifoldSpec,
    pub embedding: EmbeddingSpec,
    #[serde(default)]
    pub radius: RadiusSpec,
    #[serde(default)]
    pub samples: SampleSpec,
    #[serde(default)]
    pub tolerances: ToleranceSpec,
    /// Stages to run; all applicable stages when absent.
    #[serde(default)]
    pub stages: Option<Vec<Stage>>,
}

fn config_error(field: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Config {
        field: field.into(),
        message: message.into(),
    }
}

impl ScenarioConfig {
    /// Parses and validates a TOML scenario.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = match toml::from_str(text) {
            Ok(cfg) => cfg,
            Err(err) => {
                // Re-run through a path-tracking deserializer to name the offending field.
                let field = toml::from_str::<toml::Value>(text)
                    .ok()
                    .and_then(|value| {
                        serde_path_to_error::deserialize::<_, ScenarioConfig>(value)
                            .err()
                            .map(|e| e.path().to_string())
                    })
                    .unwrap_or_else(|| ".".to_string());
                return Err(config_error(field, err.to_string().trim_end()));
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario configs serialize")
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(config_error("name", "must not be empty"));
        }
        for (field, tol) in self.tolerances.all() {
            if !(tol > 0.0 && tol.is_finite()) {
                return Err(config_error(field, format!("tolerance must be positive, got {tol}")));
            }
        }
        let r = &self.radius;
        if !(r.delta0 > 0.0 && r.delta0.is_finite()) {
            return Err(config_error("radius.delta0", "must be positive"));
        }
        if !(r.grid_lo < r.grid_hi) || r.grid_points < 2 {
            return Err(config_error(
                "radius",
                "grid needs grid_lo < grid_hi and at least 2 points",
            ));
        }
        if let Some(b) = r.focal_bound {
            if !(b > 0.0) {
                return Err(config_error("radius.focal_bound", "must be positive"));
            }
        }
        let s = &self.samples;
        if !(s.fraction > 0.0 && s.fraction < 1.0) {
            return Err(config_error("samples.fraction", "must lie in (0, 1)"));
        }
        if self.is_point() && !(s.point_case_radius > 0.0 && s.point_case_radius < r.delta0) {
            return Err(config_error(
                "samples.point_case_radius",
                "must lie in (0, radius.delta0)",
            ));
        }
        let n = self.metric_dim()?;
        let sub_dim = match &self.submanifold {
            SubmanifoldSpec::Point { at } => at.len(),
            SubmanifoldSpec::AffineLine { origin, direction } => {
                if origin.len() != direction.len() {
                    return Err(config_error("submanifold.direction", "length differs from origin"));
                }
                if direction.iter().all(|&d| d == 0.0) {
                    return Err(config_error("submanifold.direction", "must be non-zero"));
                }
                origin.len()
            }
            SubmanifoldSpec::Circle { radius, lo, hi } | SubmanifoldSpec::Helix { radius, lo, hi, .. } => {
                if !(*radius > 0.0) {
                    return Err(config_error("submanifold.radius", "must be positive"));
                }
                if !(lo < hi) {
                    return Err(config_error("submanifold.lo", "needs lo < hi"));
                }
                if !(r.grid_lo > *lo && r.grid_hi < *hi) {
                    return Err(config_error("radius.grid_lo", "grid must lie inside (lo, hi)"));
                }
                if matches!(self.submanifold, SubmanifoldSpec::Circle { .. }) {
                    2
                } else {
                    3
                }
            }
            SubmanifoldSpec::SphereEquator { lo, hi } => {
                if !(lo < hi) {
                    return Err(config_error("submanifold.lo", "needs lo < hi"));
                }
                if !(r.grid_lo > *lo && r.grid_hi < *hi) {
                    return Err(config_error("radius.grid_lo", "grid must lie inside (lo, hi)"));
                }
                2
            }
        };
        if sub_dim != n {
            return Err(config_error(
                "submanifold",
                format!("ambient dimension {sub_dim} does not match metric dimension {n}"),
            ));
        }
        if let Some(stages) = &self.stages {
            if stages.is_empty() {
                return Err(config_error("stages", "must list at least one stage"));
            }
        }
        Ok(())
    }

    fn metric_dim(&self) -> Result<usize> {
        match &self.metric {
            MetricSpec::Euclidean { dim } if *dim > 0 => Ok(*dim),
            MetricSpec::Euclidean { .. } => Err(config_error("metric.dim", "must be positive")),
            MetricSpec::RoundSphere | MetricSpec::Polar => Ok(2),
            MetricSpec::Constant { matrix } => {
                let n = matrix.len();
                if n == 0 || matrix.iter().any(|row| row.len() != n) {
                    return Err(config_error("metric.matrix", "must be square and non-empty"));
                }
                let a = DMatrix::from_fn(n, n, |i, j| matrix[i][j]);
                if (&a - a.transpose()).amax() > 1e-12 || a.cholesky().is_none() {
                    return Err(config_error("metric.matrix", "must be symmetric positive definite"));
                }
                Ok(n)
            }
        }
    }

    pub fn build_metric(&self) -> Result<MetricField> {
        self.metric_dim()?;
        Ok(match &self.metric {
            MetricSpec::Euclidean { dim } => MetricField::euclidean(*dim),
            MetricSpec::RoundSphere => MetricField::round_sphere_chart(),
            MetricSpec::Polar => MetricField::polar(),
            MetricSpec::Constant { matrix } => {
                let n = matrix.len();
                MetricField::constant("constant", DMatrix::from_fn(n, n, |i, j| matrix[i][j]))
            }
        })
    }

    pub fn build_submanifold(&self) -> ParametrizedSubmanifold {
        match &self.submanifold {
            SubmanifoldSpec::Point { at } => ParametrizedSubmanifold::point(DVector::from_column_slice(at)),
            SubmanifoldSpec::AffineLine { origin, direction } => ParametrizedSubmanifold::affine_line(
                DVector::from_column_slice(origin),
                DVector::from_column_slice(direction),
            ),
            SubmanifoldSpec::Circle { radius, lo, hi } => ParametrizedSubmanifold::circle(*radius, *lo, *hi),
            SubmanifoldSpec::Helix { radius, pitch, lo, hi } => {
                ParametrizedSubmanifold::helix(*radius, *pitch, *lo, *hi)
            }
            SubmanifoldSpec::SphereEquator { lo, hi } => ParametrizedSubmanifold::sphere_equator(*lo, *hi),
        }
    }

    pub fn build_embedding(&self, metric: &MetricField, n: &ParametrizedSubmanifold) -> Result<TubularEmbedding> {
        match self.embedding {
            EmbeddingSpec::NormalOffset {
                tangent_bend,
                normal_bend,
                ambient_bend,
            } => TubularEmbedding::normal_offset(
                n.clone(),
                metric.clone(),
                Bends {
                    tangent: tangent_bend,
                    normal: normal_bend,
                    ambient: ambient_bend,
                },
            ),
        }
    }

    pub fn grid(&self, param_dim: usize) -> Vec<DVector<f64>> {
        let r = &self.radius;
        uniform_grid(
            &vec![r.grid_lo; param_dim],
            &vec![r.grid_hi; param_dim],
            &vec![r.grid_points; param_dim],
        )
    }

    pub fn is_point(&self) -> bool {
        matches!(self.submanifold, SubmanifoldSpec::Point { .. })
    }

    /// Configured stages, or every stage applicable to this submanifold.
    pub fn stages(&self) -> Vec<Stage> {
        let mut stages = match &self.stages {
            Some(s) => s.clone(),
            None => Stage::ALL
                .into_iter()
                .filter(|s| *s != Stage::PointCase || self.is_point())
                .collect(),
        };
        stages.sort();
        stages.dedup();
        stages
    }
}

/// Names of the built-in scenarios.
pub const BUILTIN_SCENARIOS: [&str; 5] = ["point-2d", "flat-slice", "circle", "helix", "sphere-equator"];

/// Source text of a built-in scenario.
pub fn builtin_source(name: &str) -> Option<&'static str> {
    Some(match name {
        "point-2d" => include_str!("../../scenarios/point-2d.toml"),
        "flat-slice" => include_str!("../../scenarios/flat-slice.toml"),
        "circle" => include_str!("../../scenarios/circle.toml"),
        "helix" => include_str!("../../scenarios/helix.toml"),
        "sphere-equator" => include_str!("../../scenarios/sphere-equator.toml"),
        _ => return None,
    })
}

pub fn builtin(name: &str) -> Result<ScenarioConfig> {
    let text =
        builtin_source(name).ok_or_else(|| config_error("scenario", format!("no built-in scenario named `{name}`")))?;
    ScenarioConfig::from_toml(text)
}

/// A built-in name, or else a path to a TOML file.
pub fn resolve(name_or_path: &str) -> Result<ScenarioConfig> {
    if builtin_source(name_or_path).is_some() {
        return builtin(name_or_path);
    }
    let path = Path::new(name_or_path);
    if path.exists() {
        return ScenarioConfig::from_path(path);
    }
    Err(config_error(
        "scenario",
        format!("`{name_or_path}` is neither a built-in scenario nor a readable file"),
    ))
}
