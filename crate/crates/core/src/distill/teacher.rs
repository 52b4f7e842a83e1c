//! Teacher pretraining: ego renders with template answers, optionally
//! mixed with exo renders paired with coarse narration.

use egoexo_tensor::{Tape, Tensor, Var};
use rand::Rng;

use crate::distill::config::TrainConfig;
use crate::distill::features::view_patches;
use crate::distill::train::{run_loop, LoopSpec, TrainLog};
use crate::error::{Error, Result};
use crate::seed;
use crate::text::{coarse_narration, detailed_answer, sample_queries, McqCategory, QueryCategory, TokenId, EOS};
use crate::vlm::{answer_segment, vlm_loss, EgoInput, ParamRole, Visual, Vlm};
use crate::world::{ActivityScript, Dataset};

pub const TEACHER_TRAINABLE: [ParamRole; 3] = [ParamRole::Encoder, ParamRole::Connector, ParamRole::LmBase];

/// Packs `(query, answer)` pairs into decoder segments and flat targets.
pub fn pack_pairs(pairs: &[(Vec<TokenId>, Vec<TokenId>)]) -> (Vec<Vec<TokenId>>, Vec<usize>) {
    let mut segments = Vec::with_capacity(pairs.len());
    let mut targets = Vec::new();
    for (q, a) in pairs {
        let (input, t) = answer_segment(q, a);
        segments.push(input);
        targets.extend(t);
    }
    (segments, targets)
}

/// Ground-truth detailed answers for the clip's three sampled queries.
pub fn detailed_pairs(script: &ActivityScript, query_seed: u64, clip_id: &str) -> Vec<(Vec<TokenId>, Vec<TokenId>)> {
    sample_queries(query_seed, clip_id)
        .into_iter()
        .map(|q| {
            let a = detailed_answer(script, q.category);
            (q.tokens, a)
        })
        .collect()
}

/// Short benchmark-style questions with their template answers, `per_category` random steps each.
pub fn short_pairs(script: &ActivityScript, per_category: usize, rng: &mut impl Rng) -> Vec<(Vec<TokenId>, Vec<TokenId>)> {
    let mut out = Vec::new();
    for cat in McqCategory::ALL {
        for _ in 0..per_category {
            let t = rng.random_range(0..script.frames());
            let mut a = cat.answer(script, t);
            a.push(EOS);
            out.push((cat.question(t), a));
        }
    }
    out
}

/// One teacher example: sampled queries (re-drawn every epoch) plus short questions.
pub fn teacher_pairs(
    script: &ActivityScript,
    clip_id: &str,
    epoch: usize,
    seed: u64,
    per_category: usize,
) -> Vec<(Vec<TokenId>, Vec<TokenId>)> {
    let q_seed = seed::derive(seed, &[seed::tag("teacher-queries"), epoch as u64]);
    let mut pairs = detailed_pairs(script, q_seed, clip_id);
    let mut rng = seed::rng(seed, &[seed::tag("teacher-short"), seed::tag(clip_id), epoch as u64]);
    pairs.extend(short_pairs(script, per_category, &mut rng));
    pairs
}

/// Teacher-forced loss of `pairs` given one clip's visual input.
pub fn sequence_loss(
    model: &Vlm<f32>,
    tape: &mut Tape<f32>,
    visual: Visual<'_, f32>,
    ego: &EgoInput<f32>,
    pairs: &[(Vec<TokenId>, Vec<TokenId>)],
) -> Result<(Var, crate::vlm::model::PrefixParts)> {
    let (kv, parts) = model.prefix(tape, visual, ego)?;
    let (segments, targets) = pack_pairs(pairs);
    let out = model.lm_text(tape, &kv, &segments)?;
    Ok((vlm_loss(tape, out.logits, &targets)?, parts))
}

struct EgoClip {
    id: String,
    patches: Tensor<f32>,
    script: ActivityScript,
}

fn load_ego_clips(model: &Vlm<f32>, ds: &Dataset, ids: &[String]) -> Result<Vec<EgoClip>> {
    ids.iter()
        .map(|id| {
            Ok(EgoClip { id: id.clone(), patches: view_patches(&ds.ego(id)?, &model.cfg)?, script: ds.script(id)? })
        })
        .collect()
}

/// Coarse narration for the clip's descriptive query, re-drawn every epoch.
pub fn narration_pair(script: &ActivityScript, clip_id: &str, epoch: usize, seed: u64) -> (Vec<TokenId>, Vec<TokenId>) {
    let q_seed = seed::derive(seed, &[seed::tag("teacher-queries"), epoch as u64]);
    let q = sample_queries(q_seed, clip_id)
        .into_iter()
        .find(|q| q.category == QueryCategory::Descriptive)
        .expect("one descriptive query per clip");
    (q.tokens, coarse_narration(script))
}

/// Trains encoder, connector and decoder on ego renders of `ids` (and, with
/// `teacher_exo_narration`, on exo camera 0 with coarse narration).
/// LoRA factors and any token bank stay frozen.
pub fn train_teacher(model: &mut Vlm<f32>, ds: &Dataset, ids: &[String], cfg: &TrainConfig, seed: u64) -> Result<TrainLog> {
    cfg.validate()?;
    if model.cfg.has_bank() {
        return Err(Error::Config("the teacher has no ego-token bank".into()));
    }
    if ids.is_empty() {
        return Err(Error::Config("teacher training needs at least one clip".into()));
    }
    model.set_trainable(&TEACHER_TRAINABLE);
    let clips = load_ego_clips(model, ds, ids)?;
    let exo: Vec<Tensor<f32>> = if cfg.teacher_exo_narration {
        ids.iter().map(|id| view_patches(&ds.exo(id, 0)?, &model.cfg)).collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    let n = clips.len();
    let spec = LoopSpec::teacher(cfg, seed);
    let per_cat = cfg.teacher_short_questions;
    run_loop(model, n + exo.len(), &spec, |m, tape, i, epoch| {
        let c = &clips[i % n];
        if i >= n {
            let pair = narration_pair(&c.script, &c.id, epoch, seed);
            return Ok(sequence_loss(m, tape, Visual::Patches(&exo[i - n]), &EgoInput::Absent, &[pair])?.0);
        }
        let pairs = teacher_pairs(&c.script, &c.id, epoch, seed, per_cat);
        Ok(sequence_loss(m, tape, Visual::Patches(&c.patches), &EgoInput::Absent, &pairs)?.0)
    })
}

/// Mean per-token NLL of ground-truth detailed answers on ego renders.
pub fn ego_answer_nll(model: &Vlm<f32>, ds: &Dataset, ids: &[String], query_seed: u64) -> Result<f64> {
    let clips = load_ego_clips(model, ds, ids)?;
    let mut total = 0.0;
    let mut count = 0usize;
    for c in &clips {
        let pairs = detailed_pairs(&c.script, query_seed, &c.id);
        let tokens: usize = pairs.iter().map(|(_, a)| a.len()).sum();
        let mut tape = Tape::inference();
        let (loss, _) = sequence_loss(model, &mut tape, Visual::Patches(&c.patches), &EgoInput::Absent, &pairs)?;
        total += tape.value(loss).item()? as f64 * tokens as f64;
        count += tokens;
    }
    Ok(total / count.max(1) as f64)
}
