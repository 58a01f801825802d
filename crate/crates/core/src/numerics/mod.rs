//! Numerical substrate: smooth map oracles with finite-difference jacobians,
//! small dense linear algebra helpers, an adaptive Dormand–Prince integrator
//! and damped Newton inversion.

mod linalg;
mod map;
mod newton;
mod ode;

pub use linalg::{condition_estimate, max_abs, max_abs_diff, smallest_singular_value, solve_linear};
pub use map::{central_difference, five_point_difference, FdOrder, Predicate, SmoothMap, DEFAULT_FD_STEP};
pub use newton::{solve_inverse, solve_inverse_with, NewtonOptions};
pub use ode::{integrate, ode_integrate, OdeOptions, Trajectory};

use nalgebra::DVector;

pub type Point = DVector<f64>;
