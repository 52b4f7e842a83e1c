//! Dense row-major tensors, a reverse-mode tape, AdamW and
//! finite-difference gradient checks.

mod error;
mod float;
pub mod gradcheck;
pub mod optim;
mod params;
mod tape;
mod tensor;

pub use error::{Result, TensorError};
pub use float::Float;
pub use gradcheck::{grad_check, grad_check_params, relative_error};
pub use optim::{warmup_cosine, AdamW, AdamWConfig, GroupConfig};
pub use params::{Param, ParamId, ParamSet};
pub use tape::{log_softmax_rows, AttnMask, Tape, Var};
pub use tensor::Tensor;
