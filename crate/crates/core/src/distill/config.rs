use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Optimisation settings shared by teacher and student runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Student epochs.
    pub epochs: usize,
    pub teacher_epochs: usize,
    pub batch_size: usize,
    /// Learning rate of the teacher (all non-frozen parameters).
    pub teacher_lr: f64,
    /// Student learning rate for connector, bank and ego connector.
    pub lr: f64,
    /// Student learning rate for LoRA factors.
    pub lora_lr: f64,
    pub weight_decay: f64,
    /// Fraction of optimizer steps spent in linear warmup.
    pub warmup_frac: f64,
    /// Global gradient-norm clip.
    pub clip_norm: f64,
    /// Longest greedy decode when generating instructions.
    pub max_gen_len: usize,
    /// Short benchmark-style questions per category added to each teacher example.
    pub teacher_short_questions: usize,
    /// Also pretrain on exo renders paired with their coarse narration.
    pub teacher_exo_narration: bool,
}

impl TrainConfig {
    pub fn desk() -> Self {
        TrainConfig {
            epochs: 6,
            teacher_epochs: 10,
            batch_size: 8,
            teacher_lr: 2e-3,
            lr: 3e-3,
            lora_lr: 1e-2,
            weight_decay: 0.0,
            warmup_frac: 0.05,
            clip_norm: 1.0,
            max_gen_len: 24,
            teacher_short_questions: 4,
            teacher_exo_narration: true,
        }
    }

    /// Optimiser values from the full-size setup (documentation only).
    pub fn paper_meta() -> Self {
        TrainConfig { epochs: 3, teacher_lr: 2e-6, lr: 2e-6, lora_lr: 1e-5, ..TrainConfig::desk() }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 {
            return fail("batch_size must be positive".into());
        }
        for (name, v) in [("teacher_lr", self.teacher_lr), ("lr", self.lr), ("lora_lr", self.lora_lr)] {
            if !(v.is_finite() && v >= 0.0) {
                return fail(format!("{name} must be a non-negative number, got {v}"));
            }
        }
        if !(0.0..=1.0).contains(&self.warmup_frac) {
            return fail(format!("warmup_frac must lie in [0,1], got {}", self.warmup_frac));
        }
        if !(self.clip_norm > 0.0) {
            return fail(format!("clip_norm must be positive, got {}", self.clip_norm));
        }
        if self.max_gen_len == 0 {
            return fail("max_gen_len must be positive".into());
        }
        Ok(())
    }
}
