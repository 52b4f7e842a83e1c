//! Inference: prefix evaluation, greedy decoding, teacher-forced
//! log-probabilities and multiple-choice scoring.

use egoexo_tensor::{log_softmax_rows, Float, Tape};

use crate::error::{Error, Result};
use crate::text::{TokenId, EOS, SEP};
use crate::vlm::model::{EgoInput, PrefixCache, Visual, Vlm};

/// Prefix keys/values plus the attention probabilities recorded on the way.
pub struct PrefixRun<F> {
    pub cache: PrefixCache<F>,
    /// Encoder self-attention per layer, `[heads × L × L]`.
    pub self_attn: Vec<Vec<F>>,
    /// Token-bank cross-attention per layer, `[K × T·N]`.
    pub cross_attn: Vec<Vec<F>>,
    /// `Ẽ` (before the ego connector), if any.
    pub ego_raw: Option<Vec<F>>,
    /// `φ_ego(Ẽ)`, if any.
    pub z_ego: Option<Vec<F>>,
    /// Pooled-ready connector output `Z`.
    pub z: Vec<F>,
}

pub fn run_prefix<F: Float>(model: &Vlm<F>, visual: Visual<'_, F>, ego: &EgoInput<F>) -> Result<PrefixRun<F>> {
    let mut tape = Tape::inference();
    let (kv, parts) = model.prefix(&mut tape, visual, ego)?;
    let grab = |tape: &Tape<F>, v| tape.attention_probs(v).map(<[F]>::to_vec).unwrap_or_default();
    Ok(PrefixRun {
        cache: model.prefix_cache(&tape, &kv),
        self_attn: parts.self_attn.iter().map(|&v| grab(&tape, v)).collect(),
        cross_attn: parts.cross_attn.iter().map(|&v| grab(&tape, v)).collect(),
        ego_raw: parts.ego_raw.map(|v| tape.value(v).data().to_vec()),
        z_ego: parts.z_ego.map(|v| tape.value(v).data().to_vec()),
        z: tape.value(parts.z).data().to_vec(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generation {
    /// Emitted tokens, including the final EOS when one was produced.
    pub tokens: Vec<TokenId>,
    /// Logits that produced each emitted token.
    pub logits: Vec<Vec<f64>>,
}

fn argmax<F: Float>(row: &[F]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Greedy decoding of several queries against one shared prefix.
/// Each query stops at EOS or after `max_len` tokens.
pub fn generate<F: Float>(
    model: &Vlm<F>,
    prefix: &PrefixCache<F>,
    queries: &[Vec<TokenId>],
    max_len: usize,
    keep_logits: bool,
) -> Result<Vec<Generation>> {
    if max_len == 0 {
        return Err(Error::Config("max_len must be at least 1".into()));
    }
    let mut out: Vec<Generation> = queries.iter().map(|_| Generation { tokens: Vec::new(), logits: Vec::new() }).collect();
    let mut active: Vec<usize> = (0..queries.len()).collect();
    let vocab = model.cfg.vocab;
    while !active.is_empty() {
        let segments: Vec<Vec<TokenId>> = active
            .iter()
            .map(|&i| {
                let mut s = queries[i].clone();
                s.push(SEP);
                s.extend_from_slice(&out[i].tokens);
                s
            })
            .collect();
        let mut tape = Tape::inference();
        let kv = prefix.bind(&mut tape);
        let lm = model.lm_text(&mut tape, &kv, &segments)?;
        let logits = tape.value(lm.logits).data();
        let mut still = Vec::new();
        for (j, &i) in active.iter().enumerate() {
            let row_idx = lm.segment_offsets[j] + segments[j].len() - 1;
            let row = &logits[row_idx * vocab..(row_idx + 1) * vocab];
            let tok = argmax(row);
            out[i].tokens.push(tok);
            if keep_logits {
                out[i].logits.push(row.iter().map(|v| v.as_f64()).collect());
            }
            if tok != EOS && out[i].tokens.len() < max_len {
                still.push(i);
            }
        }
        active = still;
    }
    Ok(out)
}

/// Teacher-forced log-probability rows: for each `(query, answer)` pair, one
/// log-softmax row per answer token (the distribution that predicts it),
/// computed in f64.
pub fn answer_log_probs<F: Float>(
    model: &Vlm<F>,
    prefix: &PrefixCache<F>,
    pairs: &[(Vec<TokenId>, Vec<TokenId>)],
) -> Result<Vec<Vec<Vec<f64>>>> {
    if pairs.iter().any(|(_, a)| a.is_empty()) {
        return Err(Error::Contract("empty answer span".into()));
    }
    let segments: Vec<Vec<TokenId>> = pairs
        .iter()
        .map(|(q, a)| {
            let mut s = q.clone();
            s.push(SEP);
            s.extend_from_slice(&a[..a.len() - 1]);
            s
        })
        .collect();
    let mut tape = Tape::inference();
    let kv = prefix.bind(&mut tape);
    let lm = model.lm_text(&mut tape, &kv, &segments)?;
    let vocab = model.cfg.vocab;
    let logits: Vec<f64> = tape.value(lm.logits).data().iter().map(|v| v.as_f64()).collect();
    let lp = log_softmax_rows(&logits, vocab);
    Ok(pairs
        .iter()
        .enumerate()
        .map(|(j, (q, a))| {
            (0..a.len())
                .map(|m| {
                    let row = lm.segment_offsets[j] + q.len() + m;
                    lp[row * vocab..(row + 1) * vocab].to_vec()
                })
                .collect()
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct McqScore {
    pub chosen: usize,
    /// Mean per-token log-likelihood of each option.
    pub scores: Vec<f64>,
}

/// Scores four options by length-normalised log-likelihood; ties go to the
/// lowest index.
pub fn score_mcq<F: Float>(
    model: &Vlm<F>,
    prefix: &PrefixCache<F>,
    question: &[TokenId],
    options: &[Vec<TokenId>],
) -> Result<McqScore> {
    Ok(score_mcq_batch(model, prefix, &[(question.to_vec(), options.to_vec())])?.remove(0))
}

/// Several questions about the same clip in one packed forward pass.
pub fn score_mcq_batch<F: Float>(
    model: &Vlm<F>,
    prefix: &PrefixCache<F>,
    items: &[(Vec<TokenId>, Vec<Vec<TokenId>>)],
) -> Result<Vec<McqScore>> {
    let mut pairs = Vec::new();
    for (q, opts) in items {
        if opts.len() != 4 {
            return Err(Error::Contract(format!("expected 4 options, got {}", opts.len())));
        }
        for o in opts {
            if o.is_empty() {
                return Err(Error::Contract("empty option".into()));
            }
            pairs.push((q.clone(), o.clone()));
        }
    }
    let rows = answer_log_probs(model, prefix, &pairs)?;
    let mut out = Vec::with_capacity(items.len());
    for (i, _) in items.iter().enumerate() {
        let scores: Vec<f64> = (0..4)
            .map(|o| {
                let p = i * 4 + o;
                let opt = &pairs[p].1;
                opt.iter().zip(&rows[p]).map(|(&t, row)| row[t]).sum::<f64>() / opt.len() as f64
            })
            .collect();
        let mut chosen = 0;
        for o in 1..4 {
            if scores[o] > scores[chosen] {
                chosen = o;
            }
        }
        out.push(McqScore { chosen, scores });
    }
    Ok(out)
}
