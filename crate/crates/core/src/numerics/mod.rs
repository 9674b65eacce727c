//! Dense linear algebra, symmetric eigensolver, tape-based differentiation
//! and finite-difference gradient verification.

mod eigen;
mod gradcheck;
mod matrix;
mod tape;

pub use eigen::{spectral_norm, sym_eigen, EigenResult, DEFAULT_TOL, MAX_SWEEPS};
pub use gradcheck::{grad_check, grad_check_blocks};
pub use matrix::Matrix;
pub use tape::{eval_softmax_rows, Gradients, Tape, Var};
