//! Mixed finite element eigensolver for the two-dimensional Oseen operator.
// Negated float comparisons reject NaN on purpose; index loops mirror the formulas.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod adaptivity;
pub mod analysis;
pub mod assembly;
pub mod cli;
pub mod eigensolver;
pub mod error;
pub mod estimator;
pub mod fem;
pub mod io;
pub mod mesh;
pub mod quadrature;
pub mod sparse;

pub use error::{OseenError, Result};
