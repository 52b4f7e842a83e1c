//! Student training on exo renders under a chosen transfer strategy.

use std::collections::BTreeMap;

use egoexo_tensor::{Tape, Tensor, Var};

use crate::distill::config::TrainConfig;
use crate::distill::features::FeatureStore;
use crate::distill::instructions::InstructionTriple;
use crate::distill::strategy::{Pooling, Strategy, StrategySpec};
use crate::distill::teacher::{detailed_pairs, sequence_loss};
use crate::distill::train::{run_loop, LoopSpec, TrainLog};
use crate::error::{Error, Result};
use crate::text::{coarse_narration, sample_queries, QueryCategory, TokenId};
use crate::vlm::infer::run_prefix;
use crate::vlm::{EgoInput, ParamRole, Visual, Vlm, VlmConfig};
use crate::world::Dataset;

/// Parameter roles that receive gradients in every student run.
pub const STUDENT_TRAINABLE: [ParamRole; 5] =
    [ParamRole::Connector, ParamRole::Bank, ParamRole::EgoConnector, ParamRole::EgoPos, ParamRole::Lora];

type Pairs = Vec<(Vec<TokenId>, Vec<TokenId>)>;

pub fn student_config(teacher: &VlmConfig, spec: &StrategySpec) -> VlmConfig {
    let base = VlmConfig { ego_tokens_enabled: false, ..teacher.clone() };
    if spec.strategy.uses_bank() {
        base.with_bank(spec.k_tokens, spec.strategy.token_strategy())
    } else {
        base
    }
}

/// Student initialised from the teacher: every shared parameter is copied,
/// new components (bank, ego connector) start from their seeded init.
pub fn init_student(teacher: &Vlm<f32>, spec: &StrategySpec, seed: u64) -> Result<Vlm<f32>> {
    let mut student = Vlm::new(student_config(&teacher.cfg, spec), seed)?;
    student.params.copy_matching(&teacher.params);
    student.set_trainable(&STUDENT_TRAINABLE);
    Ok(student)
}

/// Copies the token bank (`bank.*`) of an ego-trained model into `student`.
pub fn init_bank_from(student: &mut Vlm<f32>, ego_model: &Vlm<f32>) -> Result<usize> {
    let mut copied = 0;
    let names: Vec<String> = student.params.iter().map(|(_, p)| p.name.clone()).filter(|n| n.starts_with("bank.")).collect();
    for name in names {
        let src = ego_model
            .params
            .by_name(&name)
            .ok_or_else(|| Error::Config(format!("ego-trained model lacks `{name}`")))?;
        let id = student.params.id(&name).expect("listed above");
        let dst = student.params.get_mut(id);
        if dst.value.shape() != src.value.shape() {
            return Err(Error::Config(format!("`{name}` shape differs from the ego-trained model")));
        }
        dst.value = src.value.clone();
        copied += 1;
    }
    Ok(copied)
}

/// Ego-token source used when evaluating a student of `strategy`.
pub fn eval_ego_input(strategy: Strategy, model: &Vlm<f32>) -> EgoInput<f32> {
    match strategy {
        Strategy::LlavidalStyle => EgoInput::External(Tensor::zeros(&[model.cfg.k_tokens, model.cfg.d_lm])),
        _ => model.default_ego(),
    }
}

/// Recovers the strategy from a checkpoint role string `student:<name>`.
pub fn strategy_of_role(role: &str) -> Option<Strategy> {
    role.strip_prefix("student:").and_then(|s| s.parse().ok())
}

pub struct StudentInputs<'a> {
    pub dataset: &'a Dataset,
    pub teacher: &'a Vlm<f32>,
    /// Training clips; ego features only needed by strategies that read ego renders.
    pub features: &'a FeatureStore,
    pub triples: &'a [InstructionTriple],
    /// Ego-trained token-bank model (egoada_*, llavidal_style, pretrained_ca).
    pub ego_model: Option<&'a Vlm<f32>>,
    pub query_seed: u64,
}

pub struct StudentRun {
    pub model: Vlm<f32>,
    pub log: TrainLog,
}

/// Teacher answers grouped per clip, in file order.
pub fn triples_by_clip(triples: &[InstructionTriple]) -> BTreeMap<&str, Pairs> {
    let mut map: BTreeMap<&str, Pairs> = BTreeMap::new();
    for t in triples {
        map.entry(t.clip_id.as_str()).or_default().push((t.query.clone(), t.answer.clone()));
    }
    map
}

/// Narration target paired with the clip's descriptive query.
fn narration_pairs(ds: &Dataset, id: &str, query_seed: u64) -> Result<Pairs> {
    let script = ds.script(id)?;
    let q = sample_queries(query_seed, id)
        .into_iter()
        .find(|q| q.category == QueryCategory::Descriptive)
        .expect("one descriptive query per clip");
    Ok(vec![(q.tokens, coarse_narration(&script))])
}

fn pool(tape: &mut Tape<f32>, x: Var, pooling: Pooling) -> Result<Var> {
    match pooling {
        Pooling::Mean => Ok(tape.mean_rows(x)?),
        Pooling::Max => {
            // select each column's arg-max row with a constant 0/1 mask
            let v = tape.value(x);
            let (rows, cols) = (v.shape()[0], v.shape()[1]);
            let mut mask = vec![0.0f32; rows * cols];
            for c in 0..cols {
                let best = (0..rows).fold(0, |b, r| if v.data()[r * cols + c] > v.data()[b * cols + c] { r } else { b });
                mask[best * cols + c] = 1.0;
            }
            let m = tape.constant(Tensor::new(vec![rows, cols], mask)?);
            let sel = tape.mul(x, m)?;
            let mean = tape.mean_rows(sel)?;
            Ok(tape.scale(mean, rows as f64))
        }
    }
}

/// Pooled connector output `φ(X_final)` of `model` on cached features.
pub fn pooled_visual(model: &Vlm<f32>, cache: &crate::vlm::EncoderCache<f32>, pooling: Pooling) -> Result<Tensor<f32>> {
    let mut tape = Tape::inference();
    let x = tape.constant(cache.final_x.clone());
    let z = model.connect(&mut tape, x)?;
    let p = pool(&mut tape, z, pooling)?;
    Ok(tape.value(p).clone())
}

/// Feature-matching loss between pooled visual features of a model on one
/// input and a target vector.
pub fn feature_mse_loss(tape: &mut Tape<f32>, z: Var, target: &Tensor<f32>, pooling: Pooling) -> Result<Var> {
    let p = pool(tape, z, pooling)?;
    let t = tape.constant(target.clone());
    Ok(tape.mse(p, t)?)
}

struct Item {
    pairs: Pairs,
    /// Extra constant target or input, depending on the strategy.
    aux: Option<Tensor<f32>>,
}

fn check_bank_consistency(strategy: Strategy, model: &Vlm<f32>, ego_model: Option<&Vlm<f32>>) -> Result<()> {
    if strategy.uses_bank() != model.cfg.has_bank() {
        return Err(Error::Config(format!(
            "strategy {strategy} {} a token bank but the student model {} one",
            if strategy.uses_bank() { "requires" } else { "does not use" },
            if model.cfg.has_bank() { "has" } else { "lacks" }
        )));
    }
    if strategy.needs_ego_bank() {
        let m = ego_model.ok_or_else(|| Error::Config(format!("strategy {strategy} needs an ego-trained token-bank model")))?;
        if !m.cfg.has_bank() || m.cfg.k_tokens != model.cfg.k_tokens || m.cfg.d_lm != model.cfg.d_lm {
            return Err(Error::Config(format!("ego-trained model is incompatible with strategy {strategy}")));
        }
    }
    Ok(())
}

/// Trains a student initialised from the teacher under `spec`.
pub fn train_student(inputs: &StudentInputs<'_>, spec: &StrategySpec, cfg: &TrainConfig, seed: u64) -> Result<StudentRun> {
    cfg.validate()?;
    let strategy = spec.strategy;
    if spec.strategy.uses_bank() && spec.k_tokens == 0 {
        return Err(Error::Config("token strategies need k_tokens >= 1".into()));
    }
    if !(spec.mse_weight.is_finite() && spec.mse_weight >= 0.0) {
        return Err(Error::Config(format!("mse_weight must be non-negative, got {}", spec.mse_weight)));
    }
    let mut model = init_student(inputs.teacher, spec, seed)?;
    check_bank_consistency(strategy, &model, inputs.ego_model)?;
    if strategy == Strategy::PretrainedCa {
        init_bank_from(&mut model, inputs.ego_model.expect("checked"))?;
    }
    let store = inputs.features;
    if store.is_empty() {
        return Err(Error::Config("student training needs at least one clip".into()));
    }
    let by_clip = triples_by_clip(inputs.triples);
    let mut items = Vec::with_capacity(store.len());
    for c in &store.clips {
        if c.exo.is_none() {
            return Err(Error::Missing(format!("exo features for clip {}", c.id)));
        }
        if strategy.reads_train_ego() && c.ego.is_none() {
            return Err(Error::Missing(format!("ego features for clip {} (needed by {strategy})", c.id)));
        }
        let pairs = if strategy.uses_teacher_answers() {
            by_clip
                .get(c.id.as_str())
                .cloned()
                .ok_or_else(|| Error::Missing(format!("instruction triples for training clip {}", c.id)))?
        } else {
            narration_pairs(inputs.dataset, &c.id, inputs.query_seed)?
        };
        let aux = match strategy {
            Strategy::FeatureMse => {
                Some(pooled_visual(inputs.teacher, &c.ego.as_ref().expect("checked").cache, spec.pooling)?)
            }
            Strategy::EgoadaVis | Strategy::EgoadaLang | Strategy::LlavidalStyle => {
                let em = inputs.ego_model.expect("checked");
                let run = run_prefix(em, Visual::Cached(&c.ego.as_ref().expect("checked").cache), &EgoInput::Bank)?;
                let (data, width) = if strategy == Strategy::EgoadaVis {
                    (run.ego_raw, em.cfg.d_v)
                } else {
                    (run.z_ego, em.cfg.d_lm)
                };
                let data = data.ok_or_else(|| Error::Contract("ego-trained model produced no tokens".into()))?;
                Some(Tensor::new(vec![em.cfg.k_tokens, width], data)?)
            }
            _ => None,
        };
        items.push(Item { pairs, aux });
    }
    let loop_spec = LoopSpec::student(cfg, seed);
    let w = spec.mse_weight;
    let log = run_loop(&mut model, items.len(), &loop_spec, |m, tape, i, _| {
        let feats = &store.clips[i];
        let exo = feats.exo.as_ref().expect("checked");
        let item = &items[i];
        let cached = Visual::Cached(&exo.cache);
        match strategy {
            Strategy::ExoBaseline | Strategy::SeqDist => {
                Ok(sequence_loss(m, tape, cached, &EgoInput::Absent, &item.pairs)?.0)
            }
            Strategy::EgoTokensOnly | Strategy::SeqDistPlusTokens | Strategy::PretrainedCa => {
                Ok(sequence_loss(m, tape, cached, &EgoInput::Bank, &item.pairs)?.0)
            }
            Strategy::VeSelfAttention => {
                Ok(sequence_loss(m, tape, Visual::Patches(&exo.patches), &EgoInput::Bank, &item.pairs)?.0)
            }
            Strategy::EgoPlusExo => {
                let ego = feats.ego.as_ref().expect("checked");
                let (a, _) = sequence_loss(m, tape, cached, &EgoInput::Absent, &item.pairs)?;
                let (b, _) = sequence_loss(m, tape, Visual::Cached(&ego.cache), &EgoInput::Absent, &item.pairs)?;
                let s = tape.add(a, b)?;
                Ok(tape.scale(s, 0.5))
            }
            Strategy::FeatureMse => {
                let (ce, parts) = sequence_loss(m, tape, cached, &EgoInput::Absent, &item.pairs)?;
                let mse = feature_mse_loss(tape, parts.z, item.aux.as_ref().expect("built"), spec.pooling)?;
                let mse = tape.scale(mse, w);
                Ok(tape.add(ce, mse)?)
            }
            Strategy::LlavidalStyle => {
                let ext = EgoInput::External(item.aux.clone().expect("built"));
                Ok(sequence_loss(m, tape, cached, &ext, &item.pairs)?.0)
            }
            Strategy::EgoadaVis | Strategy::EgoadaLang => {
                let (ce, parts) = sequence_loss(m, tape, cached, &EgoInput::Bank, &item.pairs)?;
                let own = if strategy == Strategy::EgoadaVis { parts.ego_raw } else { parts.z_ego };
                let own = own.ok_or_else(|| Error::Contract("student produced no ego tokens".into()))?;
                let target = tape.constant(item.aux.clone().expect("built"));
                let mse = tape.mse(own, target)?;
                let mse = tape.scale(mse, w);
                Ok(tape.add(ce, mse)?)
            }
        }
    })?;
    Ok(StudentRun { model, log })
}

/// Token-bank model trained on ego renders with ground-truth detailed
/// answers; source of ego-side bank targets and initialisations.
pub fn train_ego_token_model(
    teacher: &Vlm<f32>,
    ds: &Dataset,
    features: &FeatureStore,
    k_tokens: usize,
    cfg: &TrainConfig,
    query_seed: u64,
    seed: u64,
) -> Result<StudentRun> {
    cfg.validate()?;
    let spec = StrategySpec::new(Strategy::EgoTokensOnly).with_k(k_tokens);
    let mut model = init_student(teacher, &spec, seed)?;
    let mut items = Vec::with_capacity(features.len());
    for c in &features.clips {
        if c.ego.is_none() {
            return Err(Error::Missing(format!("ego features for clip {}", c.id)));
        }
        items.push(detailed_pairs(&ds.script(&c.id)?, query_seed, &c.id));
    }
    let loop_spec = LoopSpec::student(cfg, seed);
    let log = run_loop(&mut model, items.len(), &loop_spec, |m, tape, i, _| {
        let ego = features.clips[i].ego.as_ref().expect("checked");
        Ok(sequence_loss(m, tape, Visual::Cached(&ego.cache), &EgoInput::Bank, &items[i])?.0)
    })?;
    Ok(StudentRun { model, log })
}
