//! Proximal Newton methods for regularized nonlinear inverse problems.

// `!(x > 0.0)` checks reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod denoise;
pub mod error;
pub mod inversion;
pub mod linsys;
pub mod model;
pub mod optim;
pub mod toyproblems;
pub mod wave;

pub use error::{Error, Result};
