use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::VOCAB_SIZE;

/// How the ego-adaptive tokens read the visual encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenStrategy {
    /// Per-layer single-head cross-attention from the tokens to `X^ℓ`.
    CrossAttention,
    /// Tokens appended to the encoder sequence and updated by its own self-attention.
    VeSelfAttention,
    /// Cross-attention, initialised from a checkpoint trained on ego clips.
    PretrainedCa,
}

/// Query input of the layer-`ℓ+1` cross-attention.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenFlow {
    /// `E^{ℓ+1} + Ẽ^ℓ`
    ResidualCarry,
    /// `E^{ℓ+1}` only
    Independent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VlmConfig {
    pub d_v: usize,
    pub d_lm: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub patch_size: usize,
    pub image_size: usize,
    pub channels: usize,
    pub frames: usize,
    pub vocab: usize,
    /// Number of ego-adaptive tokens per layer.
    pub k_tokens: usize,
    pub ego_tokens_enabled: bool,
    pub token_strategy: TokenStrategy,
    pub token_flow: TokenFlow,
    pub lora_rank: usize,
    pub lora_alpha: f64,
    /// Longest single text segment (query + separator + answer).
    pub max_text_len: usize,
    /// Longest full sequence (visual prefix + ego tokens + all text).
    pub max_seq_len: usize,
    pub ln_eps: f64,
}

impl VlmConfig {
    pub fn desk() -> Self {
        VlmConfig {
            d_v: 64,
            d_lm: 128,
            encoder_layers: 2,
            decoder_layers: 2,
            heads: 4,
            mlp_ratio: 2,
            patch_size: 8,
            image_size: 32,
            channels: 3,
            frames: 4,
            vocab: VOCAB_SIZE,
            k_tokens: 4,
            ego_tokens_enabled: false,
            token_strategy: TokenStrategy::CrossAttention,
            token_flow: TokenFlow::ResidualCarry,
            lora_rank: 8,
            lora_alpha: 16.0,
            max_text_len: 32,
            max_seq_len: 512,
            ln_eps: 1e-5,
        }
    }

    /// Full-size dimensions, kept as documentation; never instantiated.
    /// The image side is the 27×27 patch grid a 14 px patch encoder keeps.
    pub fn paper_meta() -> Self {
        VlmConfig {
            d_v: 1152,
            d_lm: 3584,
            encoder_layers: 27,
            decoder_layers: 28,
            heads: 16,
            mlp_ratio: 4,
            patch_size: 14,
            image_size: 378,
            channels: 3,
            frames: 16,
            vocab: VOCAB_SIZE,
            k_tokens: 16,
            ego_tokens_enabled: true,
            token_strategy: TokenStrategy::CrossAttention,
            token_flow: TokenFlow::ResidualCarry,
            lora_rank: 64,
            lora_alpha: 128.0,
            max_text_len: 512,
            max_seq_len: 16384,
            ln_eps: 1e-6,
        }
    }

    /// Smallest configuration used for end-to-end gradient checks.
    pub fn tiny(vocab: usize) -> Self {
        VlmConfig {
            d_v: 8,
            d_lm: 8,
            encoder_layers: 1,
            decoder_layers: 1,
            heads: 2,
            mlp_ratio: 2,
            patch_size: 4,
            image_size: 8,
            channels: 3,
            frames: 2,
            vocab,
            k_tokens: 2,
            ego_tokens_enabled: true,
            token_strategy: TokenStrategy::CrossAttention,
            token_flow: TokenFlow::ResidualCarry,
            lora_rank: 2,
            lora_alpha: 2.0,
            max_text_len: 8,
            max_seq_len: 64,
            ln_eps: 1e-5,
        }
    }

    pub fn with_bank(mut self, k: usize, strategy: TokenStrategy) -> Self {
        self.ego_tokens_enabled = k > 0;
        self.k_tokens = k;
        self.token_strategy = strategy;
        self
    }

    pub fn patches_per_frame(&self) -> usize {
        let g = self.image_size / self.patch_size;
        g * g
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.channels
    }

    pub fn visual_len(&self) -> usize {
        self.frames * self.patches_per_frame()
    }

    pub fn has_bank(&self) -> bool {
        self.ego_tokens_enabled && self.k_tokens > 0
    }

    pub fn prefix_len(&self) -> usize {
        self.visual_len() + if self.has_bank() { self.k_tokens } else { 0 }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.heads == 0 || self.d_v % self.heads != 0 || self.d_lm % self.heads != 0 {
            return fail(format!("d_v={} and d_lm={} must be divisible by heads={}", self.d_v, self.d_lm, self.heads));
        }
        if self.patch_size == 0 || self.image_size % self.patch_size != 0 {
            return fail(format!("image_size {} not divisible by patch_size {}", self.image_size, self.patch_size));
        }
        if self.encoder_layers == 0 || self.decoder_layers == 0 || self.frames == 0 || self.mlp_ratio == 0 {
            return fail("layer counts, frames and mlp_ratio must be positive".into());
        }
        if self.vocab < 4 {
            return fail(format!("vocab {} too small", self.vocab));
        }
        if self.lora_rank > 0 && !(self.lora_alpha > 0.0) {
            return fail("lora_alpha must be positive".into());
        }
        if self.ln_eps <= 0.0 {
            return fail("ln_eps must be positive".into());
        }
        if self.max_seq_len < self.prefix_len() + 1 {
            return fail(format!("max_seq_len {} shorter than visual prefix {}", self.max_seq_len, self.prefix_len()));
        }
        Ok(())
    }
}
