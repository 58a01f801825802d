use crate::numerics::Trajectory;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point too close to the domain boundary for a finite-difference stencil of step {step}")]
    DomainMargin { step: f64 },

    #[error("state left the integration domain at t = {t}")]
    DomainExit { t: f64, partial: Box<Trajectory> },

    #[error("step size collapsed to {step:e} at t = {t}")]
    StepUnderflow { t: f64, step: f64 },

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("jacobian is singular or ill-conditioned (condition estimate {condition:e})")]
    SingularJacobian { condition: f64 },

    #[error("metric is not invertible at the requested point")]
    SingularMetric,

    #[error("point or vector outside the domain: {0}")]
    NotInDomain(String),

    #[error("parametrization jacobian is rank deficient (smallest singular value {sigma_min:e})")]
    RankDeficient { sigma_min: f64 },

    #[error("no valid tubular radius found after {halvings} halvings")]
    NoValidRadius { halvings: u32 },

    #[error("vector field does not vanish on the submanifold (residual {residual:e})")]
    NotVanishing { residual: f64 },

    #[error("flow left the domain of the vector field at time {t}")]
    FlowExit { t: f64 },

    #[error("dχ(v) - v is not tangent (normal residual {residual:e})")]
    DecompositionFailure { residual: f64 },

    #[error("hypothesis violated: {0}")]
    HypothesisFailure(String),

    #[error("argument outside the function's domain: {0}")]
    DomainError(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("config error at {field}: {message}")]
    Config { field: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("report parse error: {0}")]
    Parse(String),
}

impl Error {
    /// Errors that mean "the requested point is not where this object is defined".
    /// Integrators treat these as a boundary, not as a hard failure.
    pub fn is_domain_like(&self) -> bool {
        matches!(
            self,
            Error::DomainMargin { .. }
                | Error::DomainExit { .. }
                | Error::NotInDomain(_)
                | Error::SingularMetric
                | Error::SingularJacobian { .. }
                | Error::NoConvergence { .. }
                | Error::DomainError(_)
        )
    }
}
