use thiserror::Error;

pub type Result<T> = std::result::Result<T, GllError>;

#[derive(Debug, Error)]
pub enum GllError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("degenerate bandwidth at node {node}: distance to k-th neighbor is zero")]
    DegenerateBandwidth { node: usize },

    #[error("unsolvable problem: connected component {component} (containing node {node}) has no labeled node")]
    Unsolvable { component: usize, node: usize },

    #[error("adjoint system is singular: {0}")]
    AdjointSingular(String),

    #[error("{solver} did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("stale activation cache: model generation {model}, cache generation {cache}")]
    StaleCache { model: u64, cache: u64 },

    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },

    #[error("parse error at byte offset {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn shape_err(expected: impl ToString, got: impl ToString) -> GllError {
    GllError::ShapeMismatch {
        expected: expected.to_string(),
        got: got.to_string(),
    }
}
