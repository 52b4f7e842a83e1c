//! Benchmark evaluation: MCQ accuracy, agreement with the teacher, and
//! ego-token localisation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::bench::attention::{ego_token_localization, mask_patches};
use crate::bench::mcq::McqItem;
use crate::distill::{FeatureStore, InstructionTriple, ViewFeatures, Views};
use crate::error::{Error, Result};
use crate::io;
use crate::text::{McqCategory, TokenId};
use crate::vlm::checkpoint::param_hash;
use crate::vlm::infer::{answer_log_probs, run_prefix, score_mcq_batch};
use crate::vlm::{EgoInput, TokenStrategy, Visual, Vlm};
use crate::world::{Dataset, Viewpoint};

pub const KL_DIRECTION: &str = "KL(teacher || student)";
pub const KL_POSITIONS: &str = "every token of each teacher-generated answer, including the final EOS";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryRow {
    pub category: McqCategory,
    pub items: usize,
    pub correct: usize,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TeacherMetrics {
    pub perplexity: f64,
    pub kl: f64,
    pub positions: usize,
    pub kl_direction: String,
    pub kl_positions: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalizationSummary {
    pub clips: usize,
    pub frames_used: usize,
    /// Frames with an empty mask (occluded), left out of the means.
    pub frames_excluded: usize,
    pub mean_fraction: f64,
    /// Mean mask area fraction: the score of uniform attention.
    pub mean_area: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub role: String,
    pub view: Viewpoint,
    pub model_hash: String,
    pub config_hash: String,
    pub items_hash: String,
    pub categories: Vec<CategoryRow>,
    pub average: f64,
    pub items: usize,
    pub teacher_metrics: Option<TeacherMetrics>,
    pub localization: Option<LocalizationSummary>,
    pub notes: Vec<String>,
}

impl EvalReport {
    pub fn accuracy(&self, category: McqCategory) -> Option<f64> {
        self.categories.iter().find(|r| r.category == category).map(|r| r.accuracy)
    }

    /// Plain-text table for terminals.
    pub fn summary_table(&self) -> String {
        let mut s = format!("{:<22} {:>6} {:>9}\n", "category", "items", "accuracy");
        for r in &self.categories {
            s.push_str(&format!("{:<22} {:>6} {:>8.2}%\n", r.category.name(), r.items, 100.0 * r.accuracy));
        }
        s.push_str(&format!("{:<22} {:>6} {:>8.2}%\n", "average", self.items, 100.0 * self.average));
        if let Some(t) = &self.teacher_metrics {
            s.push_str(&format!("perplexity vs teacher  {:.4}\nKL vs teacher          {:.4}\n", t.perplexity, t.kl));
        }
        if let Some(l) = &self.localization {
            s.push_str(&format!(
                "ego-token mass in region {:.4} (uniform {:.4}, {} frames)\n",
                l.mean_fraction, l.mean_area, l.frames_used
            ));
        }
        s
    }
}

/// Refuses ego-view evaluation of students unless explicitly marked as an upper bound.
pub fn check_view_contract(role: &str, view: Viewpoint, upper_bound: bool) -> Result<()> {
    if role.starts_with("student") && view == Viewpoint::Ego && !upper_bound {
        return Err(Error::Contract(
            "students are evaluated on exo input only (query and exo video); pass the upper-bound flag to evaluate on ego".into(),
        ));
    }
    Ok(())
}

/// Visual input of `model` for one clip's features.
pub fn visual_for<'a>(model: &Vlm<f32>, vf: &'a ViewFeatures) -> Visual<'a, f32> {
    if model.cfg.has_bank() && model.cfg.token_strategy == TokenStrategy::VeSelfAttention {
        Visual::Patches(&vf.patches)
    } else {
        Visual::Cached(&vf.cache)
    }
}

fn view_of<'a>(store: &'a FeatureStore, id: &str, view: Viewpoint) -> Result<&'a ViewFeatures> {
    let c = store.get(id).ok_or_else(|| Error::Missing(format!("features for clip {id}")))?;
    match view {
        Viewpoint::Exo => c.exo.as_ref(),
        Viewpoint::Ego => c.ego.as_ref(),
    }
    .ok_or_else(|| Error::Missing(format!("{view:?} features for clip {id}").to_lowercase()))
}

/// Whether each item was answered correctly, in item order.
pub fn score_items(
    model: &Vlm<f32>,
    ego: &EgoInput<f32>,
    items: &[McqItem],
    store: &FeatureStore,
    view: Viewpoint,
) -> Result<Vec<bool>> {
    let mut by_clip: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, it) in items.iter().enumerate() {
        by_clip.entry(it.clip_id.as_str()).or_default().push(i);
    }
    let mut correct = vec![false; items.len()];
    for (id, idx) in by_clip {
        let vf = view_of(store, id, view)?;
        let run = run_prefix(model, visual_for(model, vf), ego)?;
        let batch: Vec<(Vec<TokenId>, Vec<Vec<TokenId>>)> =
            idx.iter().map(|&i| (items[i].question.clone(), items[i].options.clone())).collect();
        let scores = score_mcq_batch(model, &run.cache, &batch)?;
        for (&i, s) in idx.iter().zip(scores) {
            correct[i] = s.chosen == items[i].answer_index;
        }
    }
    Ok(correct)
}

/// Category rows (fixed order) and the item-weighted average.
pub fn summarize(items: &[McqItem], correct: &[bool]) -> (Vec<CategoryRow>, f64) {
    let rows: Vec<CategoryRow> = McqCategory::ALL
        .iter()
        .map(|&category| {
            let (n, c) = items
                .iter()
                .zip(correct)
                .filter(|(it, _)| it.category == category)
                .fold((0, 0), |(n, c), (_, &ok)| (n + 1, c + ok as usize));
            CategoryRow { category, items: n, correct: c, accuracy: if n > 0 { c as f64 / n as f64 } else { 0.0 } }
        })
        .collect();
    let n: usize = rows.iter().map(|r| r.items).sum();
    let c: usize = rows.iter().map(|r| r.correct).sum();
    (rows, if n > 0 { c as f64 / n as f64 } else { 0.0 })
}

pub fn items_hash(items: &[McqItem]) -> String {
    io::hash_json(&items)
}

/// MCQ report from precomputed features.
pub fn evaluate_on_features(
    model: &Vlm<f32>,
    role: &str,
    config_hash: &str,
    ego: &EgoInput<f32>,
    items: &[McqItem],
    store: &FeatureStore,
    view: Viewpoint,
) -> Result<EvalReport> {
    let correct = score_items(model, ego, items, store, view)?;
    let (categories, average) = summarize(items, &correct);
    Ok(EvalReport {
        role: role.to_string(),
        view,
        model_hash: param_hash(&model.params),
        config_hash: config_hash.to_string(),
        items_hash: items_hash(items),
        categories,
        average,
        items: items.len(),
        teacher_metrics: None,
        localization: None,
        notes: Vec::new(),
    })
}

fn item_clips(items: &[McqItem]) -> Vec<String> {
    let mut ids: Vec<String> = items.iter().map(|i| i.clip_id.clone()).collect();
    ids.sort();
    ids.dedup();
    ids
}

/// Loads the requested view of every item clip, encodes it with `model`'s
/// own encoder and scores the items. Only that view's render files are read.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_mcq(
    model: &Vlm<f32>,
    role: &str,
    config_hash: &str,
    ego: &EgoInput<f32>,
    items: &[McqItem],
    ds: &Dataset,
    view: Viewpoint,
    camera: usize,
    upper_bound: bool,
) -> Result<EvalReport> {
    check_view_contract(role, view, upper_bound)?;
    let views = if view == Viewpoint::Ego { Views::EGO } else { Views::EXO };
    let store = FeatureStore::build(ds, model, &item_clips(items), views, camera)?;
    evaluate_on_features(model, role, config_hash, ego, items, &store, view)
}

/// `Σ p·(log p − log q)` for two log-probability rows.
pub fn kl_divergence(log_p: &[f64], log_q: &[f64]) -> f64 {
    log_p.iter().zip(log_q).map(|(&lp, &lq)| if lp == f64::NEG_INFINITY { 0.0 } else { lp.exp() * (lp - lq) }).sum()
}

/// `exp` of the mean negative log-likelihood.
pub fn perplexity(nll_sum: f64, count: usize) -> f64 {
    (nll_sum / count.max(1) as f64).exp()
}

/// Perplexity of the student (exo input) on teacher answers, and the mean
/// per-position KL from the teacher (ego input) to the student.
pub fn teacher_metrics(
    student: &Vlm<f32>,
    student_ego: &EgoInput<f32>,
    student_store: &FeatureStore,
    teacher: &Vlm<f32>,
    teacher_store: &FeatureStore,
    triples: &[InstructionTriple],
) -> Result<TeacherMetrics> {
    if student.cfg.vocab != teacher.cfg.vocab {
        return Err(Error::Contract(format!(
            "student vocabulary ({}) differs from the teacher's ({})",
            student.cfg.vocab, teacher.cfg.vocab
        )));
    }
    let mut by_clip: BTreeMap<&str, Vec<(Vec<TokenId>, Vec<TokenId>)>> = BTreeMap::new();
    for t in triples {
        by_clip.entry(t.clip_id.as_str()).or_default().push((t.query.clone(), t.answer.clone()));
    }
    let (mut nll, mut kl, mut positions) = (0.0, 0.0, 0usize);
    for (id, pairs) in by_clip {
        let s_vf = view_of(student_store, id, Viewpoint::Exo)?;
        let t_vf = view_of(teacher_store, id, Viewpoint::Ego)?;
        let s_run = run_prefix(student, visual_for(student, s_vf), student_ego)?;
        let t_run = run_prefix(teacher, visual_for(teacher, t_vf), &teacher.default_ego())?;
        let s_lp = answer_log_probs(student, &s_run.cache, &pairs)?;
        let t_lp = answer_log_probs(teacher, &t_run.cache, &pairs)?;
        for ((_, a), (s_rows, t_rows)) in pairs.iter().zip(s_lp.iter().zip(&t_lp)) {
            for (m, &tok) in a.iter().enumerate() {
                nll -= s_rows[m][tok];
                kl += kl_divergence(&t_rows[m], &s_rows[m]);
                positions += 1;
            }
        }
    }
    if positions == 0 {
        return Err(Error::Contract("no answer positions to compare".into()));
    }
    Ok(TeacherMetrics {
        perplexity: perplexity(nll, positions),
        kl: kl / positions as f64,
        positions,
        kl_direction: KL_DIRECTION.into(),
        kl_positions: KL_POSITIONS.into(),
    })
}

/// Mean share of the final-layer ego-token attention that lands on the
/// interaction cell, over non-occluded frames of `ids`.
pub fn localization(
    model: &Vlm<f32>,
    store: &FeatureStore,
    ds: &Dataset,
    ids: &[String],
    camera: usize,
) -> Result<LocalizationSummary> {
    let cfg = &model.cfg;
    if !cfg.has_bank() || cfg.token_strategy == TokenStrategy::VeSelfAttention {
        return Err(Error::Config("localization needs a model with a cross-attention token bank".into()));
    }
    let n = cfg.patches_per_frame();
    let grid = cfg.image_size / cfg.patch_size;
    let mut s = LocalizationSummary { clips: ids.len(), frames_used: 0, frames_excluded: 0, mean_fraction: 0.0, mean_area: 0.0 };
    for id in ids {
        let vf = view_of(store, id, Viewpoint::Exo)?;
        let run = run_prefix(model, Visual::Cached(&vf.cache), &EgoInput::Bank)?;
        let last = run.cross_attn.last().ok_or_else(|| Error::Contract("no cross-attention recorded".into()))?;
        let cross: Vec<f64> = last.iter().map(|&v| v as f64).collect();
        let mask = mask_patches(&ds.mask(id, camera)?, grid);
        for f in ego_token_localization(&cross, cfg.k_tokens, cfg.frames, n, &mask)? {
            match f.fraction {
                Some(fr) => {
                    s.frames_used += 1;
                    s.mean_fraction += fr;
                    s.mean_area += f.area;
                }
                None => s.frames_excluded += 1,
            }
        }
    }
    if s.frames_used > 0 {
        s.mean_fraction /= s.frames_used as f64;
        s.mean_area /= s.frames_used as f64;
    }
    Ok(s)
}
