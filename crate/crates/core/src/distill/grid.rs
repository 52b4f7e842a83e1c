//! Strategy × seed ablation runs evaluated on the benchmark.

use serde::{Deserialize, Serialize};

use crate::bench::eval::evaluate_on_features;
use crate::bench::mcq::McqItem;
use crate::distill::config::TrainConfig;
use crate::distill::features::FeatureStore;
use crate::distill::strategy::{Strategy, StrategySpec};
use crate::distill::student::{eval_ego_input, train_student, StudentInputs};
use crate::error::{Error, Result};
use crate::text::McqCategory;
use crate::world::Viewpoint;

/// Reference mean accuracies (percent) of the four component combinations.
pub const TABLE3_REFERENCE: [(Strategy, f64); 4] = [
    (Strategy::ExoBaseline, 65.7),
    (Strategy::SeqDist, 68.5),
    (Strategy::EgoTokensOnly, 72.2),
    (Strategy::SeqDistPlusTokens, 74.2),
];
/// Reference mean accuracy (percent) of naive ego+exo training.
pub const EGO_PLUS_EXO_REFERENCE: f64 = 66.0;

pub struct GridContext<'a> {
    pub inputs: StudentInputs<'a>,
    /// Exo features of the benchmark clips.
    pub eval_store: &'a FeatureStore,
    pub items: &'a [McqItem],
    pub cfg: &'a TrainConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub strategy: Strategy,
    pub k_tokens: usize,
    pub seed: u64,
    /// Accuracy per category in [`McqCategory::ALL`] order.
    pub accuracies: Vec<f64>,
    pub average: f64,
    /// `None` on success, otherwise the failure message.
    pub failure: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridAggregate {
    pub strategy: Strategy,
    pub k_tokens: usize,
    pub runs: usize,
    pub accuracies: Vec<f64>,
    pub average: f64,
    /// Sample standard deviation of the run averages (0 for a single run).
    pub spread: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub rows: Vec<GridRow>,
    pub aggregates: Vec<GridAggregate>,
}

impl GridResult {
    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| r.failure.is_some()).count()
    }

    pub fn mean_of(&self, strategy: Strategy) -> Option<f64> {
        self.aggregates.iter().find(|a| a.strategy == strategy).map(|a| a.average)
    }
}

fn run_one(ctx: &GridContext<'_>, spec: &StrategySpec, seed: u64) -> Result<GridRow> {
    let run = train_student(&ctx.inputs, spec, ctx.cfg, seed)?;
    if let Some(msg) = run.log.diverged {
        return Err(Error::Diverged(msg));
    }
    let ego = eval_ego_input(spec.strategy, &run.model);
    let report = evaluate_on_features(&run.model, &format!("student:{}", spec.strategy), "", &ego, ctx.items, ctx.eval_store, Viewpoint::Exo)?;
    Ok(GridRow {
        strategy: spec.strategy,
        k_tokens: spec.k_tokens,
        seed,
        accuracies: McqCategory::ALL.iter().map(|&c| report.accuracy(c).unwrap_or(0.0)).collect(),
        average: report.average,
        failure: None,
    })
}

pub fn aggregate(rows: &[GridRow]) -> Vec<GridAggregate> {
    let mut keys: Vec<(Strategy, usize)> = Vec::new();
    for r in rows {
        if !keys.contains(&(r.strategy, r.k_tokens)) {
            keys.push((r.strategy, r.k_tokens));
        }
    }
    keys.into_iter()
        .filter_map(|(strategy, k_tokens)| {
            let ok: Vec<&GridRow> =
                rows.iter().filter(|r| r.strategy == strategy && r.k_tokens == k_tokens && r.failure.is_none()).collect();
            if ok.is_empty() {
                return None;
            }
            let n = ok.len() as f64;
            let accuracies =
                (0..McqCategory::ALL.len()).map(|c| ok.iter().map(|r| r.accuracies[c]).sum::<f64>() / n).collect();
            let average = ok.iter().map(|r| r.average).sum::<f64>() / n;
            let spread = if ok.len() > 1 {
                (ok.iter().map(|r| (r.average - average).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            Some(GridAggregate { strategy, k_tokens, runs: ok.len(), accuracies, average, spread })
        })
        .collect()
}

/// Trains and evaluates every `(spec, seed)` pair. A failing run becomes a
/// row with a failure marker and the grid continues.
pub fn run_ablation_grid(
    ctx: &GridContext<'_>,
    specs: &[StrategySpec],
    seeds: &[u64],
    mut on_row: impl FnMut(&GridRow),
) -> GridResult {
    let mut rows = Vec::with_capacity(specs.len() * seeds.len());
    for spec in specs {
        for &seed in seeds {
            let row = run_one(ctx, spec, seed).unwrap_or_else(|e| GridRow {
                strategy: spec.strategy,
                k_tokens: spec.k_tokens,
                seed,
                accuracies: vec![f64::NAN; McqCategory::ALL.len()],
                average: f64::NAN,
                failure: Some(e.to_string()),
            });
            on_row(&row);
            rows.push(row);
        }
    }
    let aggregates = aggregate(&rows);
    GridResult { rows, aggregates }
}

fn fmt(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.6}")
    } else {
        String::new()
    }
}

/// CSV: one raw row per run, then one `aggregate` row per strategy/K with the spread.
pub fn grid_csv(result: &GridResult) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["strategy".to_string(), "k_tokens".into(), "seed".into()];
    header.extend(McqCategory::ALL.iter().map(|c| c.name().to_string()));
    header.extend(["avg".into(), "spread".into(), "status".into()]);
    let csv_err = |e: csv::Error| Error::Contract(format!("csv encoding: {e}"));
    w.write_record(&header).map_err(csv_err)?;
    for r in &result.rows {
        let mut rec = vec![r.strategy.name().to_string(), r.k_tokens.to_string(), r.seed.to_string()];
        rec.extend(r.accuracies.iter().map(|&a| fmt(a)));
        rec.push(fmt(r.average));
        rec.push(String::new());
        rec.push(match &r.failure {
            None => "ok".into(),
            Some(m) => format!("FAILED: {m}"),
        });
        w.write_record(&rec).map_err(csv_err)?;
    }
    for a in &result.aggregates {
        let mut rec = vec![a.strategy.name().to_string(), a.k_tokens.to_string(), format!("mean_of_{}", a.runs)];
        rec.extend(a.accuracies.iter().map(|&v| fmt(v)));
        rec.push(fmt(a.average));
        rec.push(fmt(a.spread));
        rec.push("aggregate".into());
        w.write_record(&rec).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Contract(format!("csv encoding: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Named expected-direction checks on aggregate means. Returns the violated
/// relations (empty when all hold).
pub fn check_ordering(name: &str, result: &GridResult) -> Result<Vec<String>> {
    let relations: &[(Strategy, Strategy)] = match name {
        "table3" => &[
            (Strategy::ExoBaseline, Strategy::SeqDist),
            (Strategy::SeqDist, Strategy::SeqDistPlusTokens),
            (Strategy::EgoTokensOnly, Strategy::SeqDistPlusTokens),
        ],
        other => return Err(Error::Config(format!("unknown ordering `{other}`; valid orderings: table3"))),
    };
    let mut violations = Vec::new();
    for &(lo, hi) in relations {
        match (result.mean_of(lo), result.mean_of(hi)) {
            (Some(a), Some(b)) if a < b => {}
            (Some(a), Some(b)) => violations.push(format!("{lo} ({a:.4}) < {hi} ({b:.4}) does not hold")),
            _ => violations.push(format!("{lo} < {hi}: missing results")),
        }
    }
    Ok(violations)
}
