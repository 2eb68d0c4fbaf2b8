//! Reverse-mode differentiation.
//!
//! Operations are recorded on a [`Tape`] as they execute; each differentiable
//! op registers one backward rule that maps the upstream gradient to input
//! gradients. [`Tape::backward`] walks the tape in reverse order.

pub mod gradcheck;
mod ops;
mod tape;

pub use gradcheck::{finite_diff_check, finite_diff_check_with, FdOptions, FdReport, ParamCheck};
pub use tape::{BackwardFn, Gradients, Grads, Tape, Var};
