//! Accuracy as a function of the number of ego tokens.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bench::plot::line_plot;
use crate::distill::grid::{run_ablation_grid, GridContext, GridResult};
use crate::distill::{Strategy, StrategySpec};
use crate::error::{Error, Result};
use crate::io;

/// Token count of the full-size configuration.
pub const REFERENCE_K: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub k_values: Vec<usize>,
    pub grid: GridResult,
}

impl SweepResult {
    /// Mean accuracy per K (failed runs excluded), in `k_values` order.
    pub fn means(&self) -> Vec<(usize, Option<f64>)> {
        self.k_values
            .iter()
            .map(|&k| (k, self.grid.aggregates.iter().find(|a| a.k_tokens == k).map(|a| a.average)))
            .collect()
    }

    /// Largest minus smallest mean accuracy across K.
    pub fn spread(&self) -> Option<f64> {
        let m: Vec<f64> = self.means().into_iter().filter_map(|(_, v)| v).collect();
        if m.len() < 2 {
            return None;
        }
        let hi = m.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = m.iter().copied().fold(f64::INFINITY, f64::min);
        Some(hi - lo)
    }

    /// `k,seed,avg,status` rows.
    pub fn csv(&self) -> String {
        let mut s = String::from("k_tokens,seed,avg,status\n");
        for r in &self.grid.rows {
            let (avg, status) = match &r.failure {
                None => (format!("{:.6}", r.average), "ok".to_string()),
                Some(m) => (String::new(), format!("FAILED: {}", m.replace(',', ";"))),
            };
            s.push_str(&format!("{},{},{},{}\n", r.k_tokens, r.seed, avg, status));
        }
        s
    }

    /// Plot of mean accuracy against K (`.ppm`) plus its series (`.csv`).
    pub fn write_plot(&self, ppm: &Path, series_csv: &Path) -> Result<()> {
        let pts: Vec<(f64, f64)> = self.means().into_iter().filter_map(|(k, v)| v.map(|v| (k as f64, v))).collect();
        line_plot(&pts, 320, 240).write_ppm(ppm)?;
        let mut s = String::from("k_tokens,mean_avg\n");
        for (k, v) in self.means() {
            s.push_str(&format!("{k},{}\n", v.map(|v| format!("{v:.6}")).unwrap_or_default()));
        }
        io::write_bytes(series_csv, s.as_bytes())
    }
}

/// Trains the full recipe once per `(K, seed)` and evaluates each run.
pub fn sweep_token_count(ctx: &GridContext<'_>, k_values: &[usize], seeds: &[u64], on_row: impl FnMut(&crate::distill::grid::GridRow)) -> Result<SweepResult> {
    if k_values.is_empty() || k_values.contains(&0) {
        return Err(Error::Config("token counts must be at least 1".into()));
    }
    let specs: Vec<StrategySpec> =
        k_values.iter().map(|&k| StrategySpec::new(Strategy::SeqDistPlusTokens).with_k(k)).collect();
    Ok(SweepResult { k_values: k_values.to_vec(), grid: run_ablation_grid(ctx, &specs, seeds, on_row) })
}
