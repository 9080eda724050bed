//! Matrix reverse-mode differentiation and the AdamW optimizer.

mod adamw;
pub(crate) mod kernels;
mod real;
mod tape;
mod tensor;

pub use adamw::{AdamWConfig, AdamWState};
pub use kernels::{gelu, gelu_grad};
pub use real::Real;
pub use tape::{Gradients, NodeId, Tape};
pub use tensor::{ParamId, ParamStore, Tensor};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NumericsError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{0}: non-finite input")]
    NonFinite(&'static str),
    #[error("index {index} out of range for length {len}")]
    Index { index: usize, len: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("contract violated: {0}")]
    Contract(String),
}
