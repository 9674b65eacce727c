use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum GraceError {
    #[error("shape mismatch in {op}: left is {left:?}, right is {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("eigensolver did not converge after {sweeps} sweeps (off-diagonal norm {residual:e})")]
    NoConvergence { sweeps: usize, residual: f64 },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("non-finite function value at perturbation index {index} ({sign} side)")]
    NonFiniteProbe { index: usize, sign: char },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("iteration diverged at step {iteration} (norm {norm:e})")]
    Diverged { iteration: usize, norm: f64 },

    #[error("missing {what}: {path} (run `{hint}` first)")]
    MissingInput {
        what: &'static str,
        path: String,
        hint: &'static str,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl GraceError {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        GraceError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Short machine-readable tag, used by the CLI error output.
    pub fn kind(&self) -> &'static str {
        match self {
            GraceError::ShapeMismatch { .. } => "shape_mismatch",
            GraceError::NotSquare { .. } => "not_square",
            GraceError::NoConvergence { .. } => "no_convergence",
            GraceError::NonFinite(_) => "non_finite",
            GraceError::NonFiniteProbe { .. } => "non_finite_probe",
            GraceError::InvalidArgument(_) => "invalid_argument",
            GraceError::NonFiniteLoss { .. } => "non_finite_loss",
            GraceError::Diverged { .. } => "diverged",
            GraceError::MissingInput { .. } => "missing_input",
            GraceError::Io { .. } => "io",
            GraceError::Serde(_) => "serialization",
        }
    }
}

pub type Result<T> = std::result::Result<T, GraceError>;
