use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Ratio of largest to smallest singular value. Infinite for rank-deficient input.
pub fn condition_estimate(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 1.0;
    }
    let sv = a.singular_values();
    let max = sv.max();
    let min = sv.min();
    if !(max.is_finite() && min.is_finite()) {
        return f64::INFINITY;
    }
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

pub fn smallest_singular_value(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 || a.ncols() == 0 {
        return f64::INFINITY;
    }
    a.singular_values().min()
}

/// Solves a square system with partial-pivot LU.
pub fn solve_linear(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    if a.nrows() == 0 {
        return Ok(DVector::zeros(0));
    }
    a.clone().lu().solve(b).ok_or(Error::SingularJacobian {
        condition: f64::INFINITY,
    })
}

pub fn max_abs(a: &DMatrix<f64>) -> f64 {
    a.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()))
}
