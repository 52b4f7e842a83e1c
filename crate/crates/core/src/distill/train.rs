//! Mini-batch training loop shared by teacher and student runs.

use std::time::Instant;

use egoexo_tensor::{warmup_cosine, AdamW, AdamWConfig, GroupConfig, Tape, TensorError, Var};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::distill::config::TrainConfig;
use crate::error::{Error, Result};
use crate::seed;
use crate::vlm::{Vlm, LORA_GROUP};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    pub steps: usize,
    pub trainable_params: usize,
    /// Set when training stopped on a non-finite loss or gradient; the
    /// model then holds the parameters from before the failing step.
    pub diverged: Option<String>,
}

impl TrainLog {
    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.mean_loss).collect()
    }
}

pub(crate) struct LoopSpec {
    pub epochs: usize,
    pub batch_size: usize,
    /// Base learning rate per optimizer group.
    pub group_lrs: Vec<f64>,
    pub weight_decay: f64,
    pub warmup_frac: f64,
    pub clip_norm: f64,
    pub seed: u64,
}

impl LoopSpec {
    pub fn student(cfg: &TrainConfig, seed: u64) -> Self {
        let mut lrs = vec![cfg.lr; LORA_GROUP + 1];
        lrs[LORA_GROUP] = cfg.lora_lr;
        LoopSpec {
            epochs: cfg.epochs,
            batch_size: cfg.batch_size,
            group_lrs: lrs,
            weight_decay: cfg.weight_decay,
            warmup_frac: cfg.warmup_frac,
            clip_norm: cfg.clip_norm,
            seed,
        }
    }

    pub fn teacher(cfg: &TrainConfig, seed: u64) -> Self {
        LoopSpec {
            epochs: cfg.teacher_epochs,
            group_lrs: vec![cfg.teacher_lr; LORA_GROUP + 1],
            ..LoopSpec::student(cfg, seed)
        }
    }
}

/// Runs `spec.epochs` passes over `n_items` examples in seeded order.
/// `item_loss(model, tape, item, epoch)` builds the scalar loss of one example.
pub(crate) fn run_loop<L>(model: &mut Vlm<f32>, n_items: usize, spec: &LoopSpec, mut item_loss: L) -> Result<TrainLog>
where
    L: FnMut(&Vlm<f32>, &mut Tape<f32>, usize, usize) -> Result<Var>,
{
    let groups = spec.group_lrs.iter().map(|&lr| GroupConfig { lr, weight_decay: spec.weight_decay }).collect();
    let mut opt = AdamW::new(AdamWConfig { groups, ..AdamWConfig::single(0.0, 0.0) }, &model.params)?;
    let per_epoch = n_items.div_ceil(spec.batch_size.max(1));
    let total = per_epoch * spec.epochs;
    let warmup = (total as f64 * spec.warmup_frac).round() as usize;
    let mut log = TrainLog { trainable_params: model.params.numel(true), ..TrainLog::default() };
    for epoch in 0..spec.epochs {
        let start = Instant::now();
        let mut order: Vec<usize> = (0..n_items).collect();
        order.shuffle(&mut seed::rng(spec.seed, &[seed::tag("order"), epoch as u64]));
        let mut loss_sum = 0.0;
        for batch in order.chunks(spec.batch_size) {
            model.params.zero_grad();
            for &i in batch {
                let mut tape = Tape::new();
                let loss = item_loss(model, &mut tape, i, epoch)?;
                let value = tape.value(loss).item()? as f64;
                if !value.is_finite() {
                    log.diverged = Some(format!("non-finite loss at epoch {epoch}, step {}", log.steps));
                    return Ok(log);
                }
                loss_sum += value;
                tape.backward(loss)?;
                tape.accumulate_param_grads(&mut model.params);
            }
            model.params.scale_grads(1.0 / batch.len() as f64);
            model.params.clip_grad_norm(spec.clip_norm);
            opt.set_lr_scale(&spec.group_lrs, warmup_cosine(log.steps, warmup, total));
            match opt.step(&mut model.params) {
                Ok(()) => {}
                Err(TensorError::NonFinite(name)) => {
                    log.diverged = Some(format!("non-finite gradient in `{name}` at step {}", log.steps));
                    return Ok(log);
                }
                Err(e) => return Err(Error::from(e)),
            }
            log.steps += 1;
        }
        log.epochs.push(EpochLog {
            epoch,
            mean_loss: loss_sum / n_items.max(1) as f64,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok(log)
}
