//! Cross-view (ego → exo) knowledge transfer for a miniature
//! vision-language model: synthetic paired clips, the model itself,
//! distillation strategies and a multiple-choice benchmark.

pub mod distill;
pub mod bench;
pub mod error;
pub mod io;
pub mod seed;
pub mod text;
pub mod vlm;
pub mod world;

pub use error::{Error, Result};
