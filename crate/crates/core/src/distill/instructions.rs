//! Instruction generation: the frozen teacher answers sampled queries on
//! ego renders, and its greedy outputs become the students' targets.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::distill::features::view_patches;
use crate::error::{Error, Result};
use crate::io;
use crate::text::{sample_queries, QueryCategory, TokenId, EOS};
use crate::vlm::checkpoint::param_hash;
use crate::vlm::infer::{generate, run_prefix};
use crate::vlm::{EgoInput, Visual, Vlm};
use crate::world::Dataset;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionTriple {
    pub clip_id: String,
    pub category: QueryCategory,
    pub query: Vec<TokenId>,
    /// Teacher output, ending in EOS unless decoding hit the length cap.
    pub answer: Vec<TokenId>,
    pub teacher_hash: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InstructionReport {
    pub teacher_hash: String,
    pub clips: usize,
    pub generated: usize,
    pub dropped_empty: usize,
    /// `clip_id/category` of every dropped pair.
    pub dropped: Vec<String>,
    pub params_before: String,
    pub params_after: String,
}

/// Greedy teacher answers for one query per category per clip.
/// Every teacher parameter must be frozen; its hash is checked before and after.
pub fn generate_instructions(
    teacher: &Vlm<f32>,
    teacher_hash: &str,
    ds: &Dataset,
    ids: &[String],
    query_seed: u64,
    max_len: usize,
) -> Result<(Vec<InstructionTriple>, InstructionReport)> {
    if let Some((_, p)) = teacher.params.iter().find(|(_, p)| !p.frozen) {
        return Err(Error::Contract(format!("teacher parameter `{}` is not frozen", p.name)));
    }
    let before = param_hash(&teacher.params);
    let mut triples = Vec::with_capacity(ids.len() * 3);
    let mut report = InstructionReport {
        teacher_hash: teacher_hash.to_string(),
        clips: ids.len(),
        params_before: before.clone(),
        ..InstructionReport::default()
    };
    for id in ids {
        let patches = view_patches(&ds.ego(id)?, &teacher.cfg)?;
        let run = run_prefix(teacher, Visual::Patches(&patches), &EgoInput::Absent)?;
        let queries = sample_queries(query_seed, id);
        let qs: Vec<Vec<TokenId>> = queries.iter().map(|q| q.tokens.clone()).collect();
        let gens = generate(teacher, &run.cache, &qs, max_len, false)?;
        for (q, g) in queries.into_iter().zip(gens) {
            if g.tokens.iter().all(|&t| t == EOS) {
                report.dropped_empty += 1;
                report.dropped.push(format!("{id}/{:?}", q.category).to_lowercase());
                continue;
            }
            triples.push(InstructionTriple {
                clip_id: id.clone(),
                category: q.category,
                query: q.tokens,
                answer: g.tokens,
                teacher_hash: teacher_hash.to_string(),
            });
        }
    }
    report.generated = triples.len();
    report.params_after = param_hash(&teacher.params);
    if report.params_after != before {
        return Err(Error::Contract("teacher parameters changed during instruction generation".into()));
    }
    Ok((triples, report))
}

pub fn write_instructions(path: &Path, triples: &[InstructionTriple]) -> Result<()> {
    io::write_jsonl(path, triples)
}

pub fn read_instructions(path: &Path) -> Result<Vec<InstructionTriple>> {
    if !path.exists() {
        return Err(Error::Missing(format!("instruction file {}", path.display())));
    }
    let triples: Vec<InstructionTriple> = io::read_jsonl(path)?;
    for t in &triples {
        if t.answer.is_empty() {
            return Err(Error::format(path, format!("empty answer for clip {}", t.clip_id)));
        }
    }
    Ok(triples)
}
