//! Graph-regularized feature entanglement head for sequence-level fake
//! detection, with spectral and convergence audits and a seeded benchmark
//! harness.

pub mod convergence;
pub mod entanglement;
pub mod error;
pub mod feature_context;
pub mod gcn;
pub mod harness;
pub mod numerics;

pub use error::{GraceError, Result};
