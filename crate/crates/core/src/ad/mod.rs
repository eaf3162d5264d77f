//! Reverse-mode automatic differentiation over dense f64 arrays, with a
//! forward-over-reverse path for second derivatives.

mod array;
mod scalar;
mod tape;

pub use array::{matmul_nn, matmul_nt, matmul_tn, Array};
pub use scalar::{logistic, softplus, softplus_inv, Dual, Jet2, Scalar};
pub use tape::{grad_scalar_fn, hvp, Gradients, Tape, Var};
