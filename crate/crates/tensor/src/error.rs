use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    Shape { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("{op}: axis {axis} out of range for rank {rank}")]
    Axis { op: &'static str, axis: usize, rank: usize },
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error("empty supervision: every target position is ignored")]
    EmptySupervision,
    #[error("target {target} at position {position} outside vocabulary of {vocab}")]
    Target { position: usize, target: usize, vocab: usize },
    #[error("expected a scalar, got shape {0:?}")]
    NonScalar(Vec<usize>),
    #[error("non-finite gradient in parameter `{0}`")]
    NonFinite(String),
    #[error("contract violated: {0}")]
    Contract(String),
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;
