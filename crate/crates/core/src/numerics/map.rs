use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Dimensionless default step for central differences.
pub const DEFAULT_FD_STEP: f64 = 1e-5;

pub type Predicate = Arc<dyn Fn(&DVector<f64>) -> bool + Send + Sync>;
type EvalFn = dyn Fn(&DVector<f64>) -> Result<DVector<f64>> + Send + Sync;
type JacobianFn = dyn Fn(&DVector<f64>) -> Result<DMatrix<f64>> + Send + Sync;

/// A smooth map `R^n -> R^m` given as an evaluation oracle, with an optional
/// analytic jacobian and an optional domain predicate.
///
/// Cloning is cheap: the closures are reference counted and immutable.
#[derive(Clone)]
pub struct SmoothMap {
    domain_dim: usize,
    codomain_dim: usize,
    eval: Arc<EvalFn>,
    jacobian: Option<Arc<JacobianFn>>,
    fd_step: f64,
    fd_order: FdOrder,
    domain: Option<Predicate>,
}

/// Accuracy order of the finite-difference stencil used when no analytic jacobian is given.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FdOrder {
    /// `[f(x+h) − f(x−h)] / 2h`.
    #[default]
    Second,
    /// Five-point stencil, error `O(h⁴)`.
    Fourth,
}

impl fmt::Debug for SmoothMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SmoothMap")
            .field("domain_dim", &self.domain_dim)
            .field("codomain_dim", &self.codomain_dim)
            .field("analytic_jacobian", &self.jacobian.is_some())
            .field("fd_step", &self.fd_step)
            .field("fd_order", &self.fd_order)
            .field("restricted_domain", &self.domain.is_some())
            .finish()
    }
}

impl SmoothMap {
    pub fn new<F>(domain_dim: usize, codomain_dim: usize, f: F) -> Self
    where
        F: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        Self::fallible(domain_dim, codomain_dim, move |x| Ok(f(x)))
    }

    pub fn fallible<F>(domain_dim: usize, codomain_dim: usize, f: F) -> Self
    where
        F: Fn(&DVector<f64>) -> Result<DVector<f64>> + Send + Sync + 'static,
    {
        Self {
            domain_dim,
            codomain_dim,
            eval: Arc::new(f),
            jacobian: None,
            fd_step: DEFAULT_FD_STEP,
            fd_order: FdOrder::Second,
            domain: None,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::linear(DMatrix::identity(n, n))
    }

    pub fn linear(a: DMatrix<f64>) -> Self {
        let (m, n) = a.shape();
        let jac = a.clone();
        Self::new(n, m, move |x| &a * x).with_jacobian(move |_| jac.clone())
    }

    pub fn with_jacobian<J>(self, j: J) -> Self
    where
        J: Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    {
        self.with_fallible_jacobian(move |x| Ok(j(x)))
    }

    pub fn with_fallible_jacobian<J>(mut self, j: J) -> Self
    where
        J: Fn(&DVector<f64>) -> Result<DMatrix<f64>> + Send + Sync + 'static,
    {
        self.jacobian = Some(Arc::new(j));
        self
    }

    /// Drops the analytic jacobian so that `jacobian` falls back to finite differences.
    pub fn without_jacobian(mut self) -> Self {
        self.jacobian = None;
        self
    }

    pub fn with_domain<P>(mut self, p: P) -> Self
    where
        P: Fn(&DVector<f64>) -> bool + Send + Sync + 'static,
    {
        self.domain = Some(Arc::new(p));
        self
    }

    pub fn with_domain_predicate(mut self, p: Option<Predicate>) -> Self {
        self.domain = p;
        self
    }

    pub fn with_fd_step(mut self, step: f64) -> Self {
        assert!(step > 0.0, "fd_step must be positive");
        self.fd_step = step;
        self
    }

    pub fn with_fd_order(mut self, order: FdOrder) -> Self {
        self.fd_order = order;
        self
    }

    pub fn fd_order(&self) -> FdOrder {
        self.fd_order
    }

    pub fn domain_dim(&self) -> usize {
        self.domain_dim
    }

    pub fn codomain_dim(&self) -> usize {
        self.codomain_dim
    }

    pub fn fd_step(&self) -> f64 {
        self.fd_step
    }

    pub fn has_analytic_jacobian(&self) -> bool {
        self.jacobian.is_some()
    }

    pub fn domain_predicate(&self) -> Option<Predicate> {
        self.domain.clone()
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        x.len() == self.domain_dim && self.domain.as_ref().is_none_or(|d| d(x))
    }

    fn check_dim(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.domain_dim {
            return Err(Error::Dimension {
                expected: self.domain_dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn eval(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dim(x)?;
        if !self.contains(x) {
            return Err(Error::NotInDomain(format!("{:?}", x.as_slice())));
        }
        let y = (self.eval)(x)?;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NotInDomain(format!("non-finite value at {:?}", x.as_slice())));
        }
        Ok(y)
    }

    /// Analytic jacobian when supplied, central differences otherwise.
    pub fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        match &self.jacobian {
            Some(j) => {
                self.check_dim(x)?;
                if !self.contains(x) {
                    return Err(Error::NotInDomain(format!("{:?}", x.as_slice())));
                }
                j(x)
            }
            None => self.fd_jacobian(x),
        }
    }

    pub fn fd_jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_dim(x)?;
        let h = self.fd_step;
        let reach = match self.fd_order {
            FdOrder::Second => h,
            FdOrder::Fourth => 2.0 * h,
        };
        if let Some(d) = &self.domain {
            let mut probe = x.clone();
            for i in 0..x.len() {
                for s in [reach, -reach] {
                    probe[i] = x[i] + s;
                    if !d(&probe) {
                        return Err(Error::DomainMargin { step: h });
                    }
                }
                probe[i] = x[i];
            }
        }
        let jac = match self.fd_order {
            FdOrder::Second => central_difference(|y| self.eval(y), x, h, self.codomain_dim),
            FdOrder::Fourth => five_point_difference(|y| self.eval(y), x, h, self.codomain_dim),
        };
        jac.map_err(|e| match e {
            Error::NotInDomain(_) => Error::DomainMargin { step: reach },
            other => other,
        })
    }

    /// Composition `self ∘ inner`.
    pub fn compose(&self, inner: &SmoothMap) -> SmoothMap {
        let outer = self.clone();
        let inner_eval = inner.clone();
        let outer_j = self.clone();
        let inner_j = inner.clone();
        let fd = self.fd_step.max(inner.fd_step);
        let composite = SmoothMap::fallible(inner.domain_dim, self.codomain_dim, move |x| {
            outer.eval(&inner_eval.eval(x)?)
        })
        .with_domain_predicate(inner.domain.clone())
        .with_fd_step(fd)
        .with_fd_order(self.fd_order.max_with(inner.fd_order));
        if self.has_analytic_jacobian() && inner.has_analytic_jacobian() {
            composite.with_fallible_jacobian(move |x| {
                let y = inner_j.eval(x)?;
                Ok(outer_j.jacobian(&y)? * inner_j.jacobian(x)?)
            })
        } else {
            composite
        }
    }
}

/// Central-difference jacobian of a vector-valued closure, `m` outputs, step `h` per coordinate.
pub fn central_difference<F>(f: F, x: &DVector<f64>, h: f64, m: usize) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    let n = x.len();
    let mut jac = DMatrix::zeros(m, n);
    let mut probe = x.clone();
    for i in 0..n {
        probe[i] = x[i] + h;
        let fp = f(&probe)?;
        probe[i] = x[i] - h;
        let fm = f(&probe)?;
        probe[i] = x[i];
        if fp.len() != m || fm.len() != m {
            return Err(Error::Dimension {
                expected: m,
                got: fp.len(),
            });
        }
        let col = (fp - fm) / (2.0 * h);
        jac.set_column(i, &col);
    }
    Ok(jac)
}

/// Fourth-order central-difference jacobian, `[−f(x+2h) + 8f(x+h) − 8f(x−h) + f(x−2h)] / 12h`.
pub fn five_point_difference<F>(f: F, x: &DVector<f64>, h: f64, m: usize) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    let n = x.len();
    let mut jac = DMatrix::zeros(m, n);
    let mut probe = x.clone();
    for i in 0..n {
        let mut at = |offset: f64| -> Result<DVector<f64>> {
            probe[i] = x[i] + offset;
            let y = f(&probe)?;
            if y.len() != m {
                return Err(Error::Dimension {
                    expected: m,
                    got: y.len(),
                });
            }
            Ok(y)
        };
        let (p2, p1, m1, m2) = (at(2.0 * h)?, at(h)?, at(-h)?, at(-2.0 * h)?);
        probe[i] = x[i];
        jac.set_column(i, &((m2 - p2 + (p1 - m1) * 8.0) / (12.0 * h)));
    }
    Ok(jac)
}

impl FdOrder {
    fn max_with(self, other: FdOrder) -> FdOrder {
        if self == FdOrder::Fourth || other == FdOrder::Fourth {
            FdOrder::Fourth
        } else {
            FdOrder::Second
        }
    }
}
