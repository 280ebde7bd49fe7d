//! Dense `f64` matrices and reverse-mode differentiation.

mod gradcheck;
mod matrix;
mod sparse;
mod tape;

pub use gradcheck::{grad_check, numeric_gradient, relative_error, GradCheckReport};
pub use matrix::Matrix;
pub use sparse::{SparseOp, SparseRows};
pub use tape::{Tape, Targets, Var};

pub(crate) use tape::sigmoid;
