//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! Every primitive appends one node to a [`Tape`]; nodes only reference
//! earlier nodes, so insertion order is a topological order and
//! [`Tape::backward`] is a single reverse sweep.

mod gradcheck;
pub(crate) mod kernels;
mod nn;
mod tape;

pub use gradcheck::{grad_check, relative_error, GradCheckOptions, GradCheckReport};
pub use nn::{scaled_dot_attention, swiglu_ffn};
pub use tape::{Gradients, Tape, Var};

/// Layer-norm epsilon used throughout the model.
pub const LAYER_NORM_EPS: f64 = 1e-5;
