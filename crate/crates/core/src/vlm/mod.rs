//! Miniature vision-language model: encoder, connectors, ego-token bank,
//! LoRA-adapted decoder, decoding and multiple-choice scoring.

pub mod checkpoint;
pub mod config;
pub mod infer;
pub mod model;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta};
pub use config::{TokenFlow, TokenStrategy, VlmConfig};
pub use infer::{generate, score_mcq, Generation, McqScore};
pub use model::{
    answer_segment, apply_lora, patchify, role_of, vlm_loss, EgoInput, EncoderCache, ParamRole, Visual, Vlm, IGNORE,
    LORA_GROUP,
};
