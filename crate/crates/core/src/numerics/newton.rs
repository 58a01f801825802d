use nalgebra::DVector;

use nalgebra::DMatrix;

use super::SmoothMap;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
    pub max_condition: f64,
    /// Extra Newton steps after `tol` is met, kept only while they reduce the residual.
    pub polish_steps: usize,
}

impl NewtonOptions {
    pub fn new(tol: f64) -> Self {
        Self {
            tol,
            max_iter: 50,
            max_halvings: 10,
            max_condition: 1e12,
            polish_steps: 1,
        }
    }
}

/// Finds `x` near `x0` with `‖f(x) − y‖ ≤ tol` by damped Newton iteration.
pub fn solve_inverse(f: &SmoothMap, y: &DVector<f64>, x0: &DVector<f64>, tol: f64) -> Result<DVector<f64>> {
    solve_inverse_with(f, y, x0, &NewtonOptions::new(tol))
}

pub fn solve_inverse_with(
    f: &SmoothMap,
    y: &DVector<f64>,
    x0: &DVector<f64>,
    opts: &NewtonOptions,
) -> Result<DVector<f64>> {
    let residual_of = |x: &DVector<f64>| -> Option<(DVector<f64>, f64)> {
        let r = f.eval(x).ok()? - y;
        let n = r.norm();
        n.is_finite().then_some((r, n))
    };
    let mut x = x0.clone();
    let (mut r, mut rn) =
        residual_of(&x).ok_or_else(|| Error::NotInDomain(format!("Newton seed {:?}", x0.as_slice())))?;
    let mut polishing = 0;
    for _ in 0..opts.max_iter {
        if rn <= opts.tol {
            if polishing >= opts.polish_steps || rn == 0.0 {
                return Ok(x);
            }
            polishing += 1;
        }
        let j = f.jacobian(&x)?;
        let j_inv = inverse_within(&j, opts.max_condition)?;
        let dx = -(j_inv * &r);
        let mut lambda = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let trial = &x + lambda * &dx;
            if let Some((tr, tn)) = residual_of(&trial) {
                if tn < rn {
                    accepted = Some((trial, tr, tn));
                    break;
                }
            }
            lambda *= 0.5;
        }
        match accepted {
            Some((nx, nr, nn)) => {
                x = nx;
                r = nr;
                rn = nn;
            }
            // Residual at the floating-point floor: keep the converged iterate.
            None if rn <= opts.tol => return Ok(x),
            None => {
                return Err(Error::NoConvergence {
                    iterations: opts.max_iter,
                    residual: rn,
                })
            }
        }
    }
    if rn <= opts.tol {
        Ok(x)
    } else {
        Err(Error::NoConvergence {
            iterations: opts.max_iter,
            residual: rn,
        })
    }
}

/// `J⁻¹`, refusing matrices whose 1-norm condition number exceeds `max_condition`.
fn inverse_within(j: &DMatrix<f64>, max_condition: f64) -> Result<DMatrix<f64>> {
    let singular = |condition| Error::SingularJacobian { condition };
    let inv = j.clone().try_inverse().ok_or(singular(f64::INFINITY))?;
    let cond = norm1(j) * norm1(&inv);
    if !cond.is_finite() || cond > max_condition {
        return Err(singular(cond));
    }
    Ok(inv)
}

fn norm1(a: &DMatrix<f64>) -> f64 {
    a.column_iter().map(|c| c.abs().sum()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(xs)
    }

    #[test]
    fn identity_inverse() {
        let x = solve_inverse(&SmoothMap::identity(2), &v(&[3.0, 4.0]), &v(&[0.0, 0.0]), 1e-12).unwrap();
        assert!((x - v(&[3.0, 4.0])).norm() < 1e-12);
    }

    #[test]
    fn doubling_inverse() {
        let f = SmoothMap::linear(DMatrix::identity(2, 2) * 2.0);
        let x = solve_inverse(&f, &v(&[2.0, 2.0]), &v(&[0.0, 0.0]), 1e-12).unwrap();
        assert!((x - v(&[1.0, 1.0])).norm() < 1e-12);
    }

    #[test]
    fn quadratic_perturbation_inverse() {
        let f = SmoothMap::new(2, 2, |x| v(&[x[0] + 0.1 * x[0] * x[0], x[1]]));
        let target = f.eval(&v(&[0.3, 0.5])).unwrap();
        let x = solve_inverse(&f, &target, &v(&[0.0, 0.0]), 1e-13).unwrap();
        assert!((&x - v(&[0.3, 0.5])).norm() < 1e-10);
        assert!((f.eval(&x).unwrap() - target).norm() <= 1e-13);
    }

    #[test]
    fn singular_jacobian_detected() {
        let f = SmoothMap::new(2, 2, |x| v(&[x[0] + x[1], x[0] + x[1]]));
        assert!(matches!(
            solve_inverse(&f, &v(&[1.0, 2.0]), &v(&[0.0, 0.0]), 1e-12),
            Err(Error::SingularJacobian { .. })
        ));
    }

    #[test]
    fn unreachable_target_fails() {
        // x^2 + 1 never reaches 0.
        let f = SmoothMap::new(1, 1, |x| v(&[x[0] * x[0] + 1.0]));
        assert!(solve_inverse(&f, &v(&[0.0]), &v(&[0.7]), 1e-12).is_err());
    }
}
