//! Orlicz N-function calculus, cut-off modified nonlinearities, a numerical
//! mountain-pass solver and a-posteriori sup-norm bounds.

// `!(a < b)` is used on purpose so that NaN falls into the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod cutoff;
pub mod energy;
pub mod expr;
pub mod field;
pub mod moser;
pub mod mpa;
pub mod nfunction;
pub mod nonlinearity;
pub mod quad;
