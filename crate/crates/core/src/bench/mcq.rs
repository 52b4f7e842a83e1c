//! Multiple-choice items curated from scripts (ego-side ground truth) and
//! the three quality gates.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::text::{self, HandOption, McqCategory, TokenId};
use crate::world::{ActivityScript, Dataset, ObjState, Region, Split, Verb};

/// Question count of the full-size benchmark, kept as metadata.
pub const REFERENCE_QUESTION_COUNT: usize = 3881;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct McqItem {
    pub clip_id: String,
    pub category: McqCategory,
    /// Step the question refers to.
    pub step: usize,
    pub question: Vec<TokenId>,
    pub options: Vec<Vec<TokenId>>,
    pub answer_index: usize,
    pub exo_visible: bool,
    pub hard_negative_count: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GenerationLog {
    pub clips: usize,
    pub items: usize,
    /// `clip_id/category: reason` for every skipped item.
    pub skipped: Vec<String>,
}

/// Whether `option` is the correct answer of `category` at step `t`.
pub fn is_correct(script: &ActivityScript, category: McqCategory, t: usize, option: &[TokenId]) -> bool {
    t < script.frames() && category.answer(script, t) == option
}

fn step_visible(script: &ActivityScript, t: usize) -> bool {
    (0..script.occluded.len()).any(|c| !script.is_occluded(c, t))
}

fn adjacent(a: Region, b: Region) -> bool {
    let (ra, ca) = (a.index() / 2, a.index() % 2);
    let (rb, cb) = (b.index() / 2, b.index() % 2);
    ra.abs_diff(rb) + ca.abs_diff(cb) == 1
}

/// Number of distractors sharing the correct option's category-level type:
/// verb class (action), adjacent region (region), object (interaction),
/// single hand (hand).
pub fn hard_negatives(category: McqCategory, correct: &[TokenId], distractors: &[Vec<TokenId>]) -> usize {
    let verb_of = |t: TokenId| Verb::ALL.iter().copied().find(|&v| text::verb(v) == t);
    let region_of = |t: TokenId| Region::ALL.iter().copied().find(|&r| text::region(r) == t);
    distractors
        .iter()
        .filter(|d| match category {
            McqCategory::ActionUnderstanding => match (verb_of(correct[0]), d.first().and_then(|&t| verb_of(t))) {
                (Some(a), Some(b)) => a.class() == b.class(),
                _ => false,
            },
            McqCategory::TaskRegion => match (region_of(correct[0]), d.first().and_then(|&t| region_of(t))) {
                (Some(a), Some(b)) => adjacent(a, b),
                _ => false,
            },
            McqCategory::Hoi => d.first() == correct.first(),
            McqCategory::HandIdentification => {
                let single = [text::hand(HandOption::Left), text::hand(HandOption::Right)];
                d.len() == 1 && single.contains(&d[0]) && d[0] != correct[0]
            }
        })
        .count()
}

fn distractors(
    script: &ActivityScript,
    category: McqCategory,
    t: usize,
    correct: &[TokenId],
    rng: &mut impl Rng,
) -> Vec<Vec<TokenId>> {
    let s = &script.timeline[t];
    let present: Vec<usize> = script.objects.iter().map(|o| o.object).filter(|&o| o != s.object).collect();
    let (mut hard, mut soft): (Vec<Vec<TokenId>>, Vec<Vec<TokenId>>) = match category {
        McqCategory::ActionUnderstanding => {
            let hard = Verb::ALL
                .iter()
                .filter(|&&v| v != s.verb && v.class() == s.verb.class())
                .map(|&v| vec![text::verb(v), text::object(s.object)])
                .chain(present.iter().map(|&o| vec![text::verb(s.verb), text::object(o)]))
                .collect();
            let soft = Verb::ALL
                .iter()
                .filter(|&&v| v.class() != s.verb.class())
                .flat_map(|&v| {
                    std::iter::once(s.object).chain(present.iter().copied()).map(move |o| vec![text::verb(v), text::object(o)])
                })
                .collect();
            (hard, soft)
        }
        McqCategory::TaskRegion => {
            let all = Region::ALL.iter().filter(|&&r| r != s.region).map(|&r| vec![text::region(r)]).collect();
            (all, Vec::new())
        }
        McqCategory::Hoi => {
            let hard = ObjState::ALL
                .iter()
                .filter(|&&st| st != s.state_after)
                .map(|&st| vec![text::object(s.object), text::state(st)])
                .collect();
            let soft = present.iter().map(|&o| vec![text::object(o), text::state(s.state_after)]).collect();
            (hard, soft)
        }
        McqCategory::HandIdentification => {
            let all = [HandOption::Left, HandOption::Right, HandOption::Both, HandOption::Neither]
                .iter()
                .map(|&h| vec![text::hand(h)])
                .filter(|o| o.as_slice() != correct)
                .collect();
            (all, Vec::new())
        }
    };
    hard.shuffle(rng);
    soft.shuffle(rng);
    let mut out: Vec<Vec<TokenId>> = Vec::with_capacity(3);
    for cand in hard.into_iter().chain(soft) {
        if out.len() == 3 {
            break;
        }
        if cand.as_slice() != correct && !out.contains(&cand) {
            out.push(cand);
        }
    }
    out
}

/// Items for one clip; inapplicable categories are reported in `skipped`.
pub fn clip_items(clip_id: &str, script: &ActivityScript, seed: u64, skipped: &mut Vec<String>) -> Vec<McqItem> {
    let mut items = Vec::new();
    for category in McqCategory::ALL {
        let mut rng = seed::rng(seed, &[seed::tag("mcq"), seed::tag(clip_id), category as u64]);
        let steps: Vec<usize> = match category {
            McqCategory::Hoi => (0..script.frames()).filter(|&t| script.timeline[t].changes_state()).collect(),
            _ => (0..script.frames()).collect(),
        };
        if steps.is_empty() {
            skipped.push(format!("{clip_id}/{}: no applicable step", category.name()));
            continue;
        }
        let t = steps[rng.random_range(0..steps.len())];
        let correct = category.answer(script, t);
        let wrong = distractors(script, category, t, &correct, &mut rng);
        if wrong.len() < 3 {
            skipped.push(format!("{clip_id}/{}: fewer than 3 distractors", category.name()));
            continue;
        }
        let hard = hard_negatives(category, &correct, &wrong);
        let answer_index = rng.random_range(0..4);
        let mut options = wrong;
        options.insert(answer_index, correct);
        items.push(McqItem {
            clip_id: clip_id.to_string(),
            category,
            step: t,
            question: category.question(t),
            options,
            answer_index,
            exo_visible: step_visible(script, t),
            hard_negative_count: hard,
        });
    }
    items
}

/// Pure generator over `(clip_id, script)` pairs.
pub fn generate_from_scripts(scripts: &[(String, ActivityScript)], seed: u64) -> (Vec<McqItem>, GenerationLog) {
    let mut log = GenerationLog { clips: scripts.len(), ..GenerationLog::default() };
    let mut items = Vec::new();
    for (id, s) in scripts {
        items.extend(clip_items(id, s, seed, &mut log.skipped));
    }
    log.items = items.len();
    (items, log)
}

/// Benchmark items for eval-split clips. Reads scripts only.
pub fn generate_mcqs(ds: &Dataset, ids: &[String], seed: u64) -> Result<(Vec<McqItem>, GenerationLog)> {
    let eval: Vec<String> = ds.ids(Split::Eval);
    if let Some(bad) = ids.iter().find(|id| !eval.contains(id)) {
        return Err(Error::Contract(format!("benchmark items come from the eval split only; {bad} is not an eval clip")));
    }
    let scripts = ids.iter().map(|id| Ok((id.clone(), ds.script(id)?))).collect::<Result<Vec<_>>>()?;
    Ok(generate_from_scripts(&scripts, seed))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    MissingScript,
    Correctness,
    Visibility,
    HardNegatives,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub input: usize,
    pub kept: usize,
    pub rejected: BTreeMap<RejectReason, usize>,
    /// `(item index, reason)` for every removed item.
    pub removals: Vec<(usize, RejectReason)>,
}

/// First failing gate of `item`, if any.
pub fn check_item(item: &McqItem, script: Option<&ActivityScript>) -> Option<RejectReason> {
    let Some(script) = script else { return Some(RejectReason::MissingScript) };
    let n_correct = item.options.iter().filter(|o| is_correct(script, item.category, item.step, o)).count();
    let distinct = item.options.iter().enumerate().all(|(i, a)| item.options[i + 1..].iter().all(|b| a != b));
    if item.step >= script.frames()
        || item.options.len() != 4
        || item.answer_index >= 4
        || n_correct != 1
        || !is_correct(script, item.category, item.step, &item.options[item.answer_index])
        || !distinct
        || item.question != item.category.question(item.step)
    {
        return Some(RejectReason::Correctness);
    }
    if !step_visible(script, item.step) {
        return Some(RejectReason::Visibility);
    }
    let correct = &item.options[item.answer_index];
    let others: Vec<Vec<TokenId>> =
        item.options.iter().enumerate().filter(|&(i, _)| i != item.answer_index).map(|(_, o)| o.clone()).collect();
    if hard_negatives(item.category, correct, &others) == 0 {
        return Some(RejectReason::HardNegatives);
    }
    None
}

/// Applies the correctness, exo-visibility and hard-negative gates in order.
pub fn filter_mcqs(items: &[McqItem], scripts: &BTreeMap<String, ActivityScript>) -> (Vec<McqItem>, FilterReport) {
    let mut report = FilterReport { input: items.len(), ..FilterReport::default() };
    let mut kept = Vec::new();
    for (i, item) in items.iter().enumerate() {
        match check_item(item, scripts.get(&item.clip_id)) {
            None => kept.push(item.clone()),
            Some(r) => {
                *report.rejected.entry(r).or_default() += 1;
                report.removals.push((i, r));
            }
        }
    }
    report.kept = kept.len();
    (kept, report)
}
