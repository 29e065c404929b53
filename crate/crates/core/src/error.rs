use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FokkerError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("coupling operator is near-singular (condition estimate {condition:.3e})")]
    SingularOperator { condition: f64 },

    #[error("coupling determinant {0:.6e} is not positive; its square root is undefined")]
    NonPositiveDeterminant(f64),

    #[error("negative self-energy {value:.6e} at node {node}")]
    NegativeSelfEnergy { node: usize, value: f64 },

    #[error("constraint solver did not converge after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("self-energy reached zero at node {node} of particle {particle}: turning points are unsupported")]
    TurningPoint { particle: usize, node: usize },

    #[error("target time {target} is not bracketed by proper times in [0, {s_max}]")]
    NotBracketed { target: f64, s_max: f64 },

    #[error("{skipped} of {attempted} samples were skipped (more than 1%)")]
    TooManySkipped { skipped: usize, attempted: usize },

    #[error("dimension cap exceeded: {dim} > {cap}")]
    DimensionCap { dim: usize, cap: usize },
}

pub type Result<T> = std::result::Result<T, FokkerError>;
