#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod embedding;
pub mod error;
pub mod euler;
pub mod extension;
pub mod harness;
pub mod numerics;
pub mod realization;
pub mod riemannian;
pub mod submanifold;

pub use error::{Error, Result};
