//! Run configuration: presets, strict JSON parsing and the config hash.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use egoexo::distill::TrainConfig;
use egoexo::vlm::VlmConfig;
use egoexo::world::DatasetConfig;
use egoexo::{io, Error, Result};
use serde::{Deserialize, Serialize};

/// Environment variable that overrides the configured seed.
pub const SEED_ENV: &str = "E2E_SEED";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preset {
    #[serde(rename = "desk")]
    Desk,
    #[serde(rename = "paper-meta")]
    PaperMeta,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "paper-meta" => Ok(Preset::PaperMeta),
            other => Err(Error::Config(format!("unknown preset `{other}`; valid presets: desk, paper-meta"))),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Desk => "desk",
            Preset::PaperMeta => "paper-meta",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Seed of benchmark generation.
    pub mcq_seed: u64,
    /// Seed of query sampling (teacher pretraining, instructions, narration pairs).
    pub query_seed: u64,
    /// Exo camera used for training, evaluation and visualisation.
    pub camera: usize,
    /// Seeds of ablation and sweep runs.
    pub grid_seeds: Vec<u64>,
    pub sweep_k: Vec<usize>,
}

impl EvalConfig {
    pub fn desk() -> Self {
        EvalConfig { mcq_seed: 17, query_seed: 29, camera: 0, grid_seeds: vec![1, 2, 3], sweep_k: vec![2, 4, 8] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Preset,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub data: DatasetConfig,
    pub model: VlmConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        let (data, model, train) = match preset {
            Preset::Desk => (DatasetConfig::desk(), VlmConfig::desk(), TrainConfig::desk()),
            Preset::PaperMeta => (DatasetConfig::paper_meta(), VlmConfig::paper_meta(), TrainConfig::paper_meta()),
        };
        RunConfig { preset, seed: 7, output_dir: PathBuf::from("runs"), data, model, train, eval: EvalConfig::desk() }
    }

    /// Strict parse: unknown keys fail with their name.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(format!("run config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        if !self.data.dry_run && self.data.world.frames != self.model.frames {
            return Err(Error::Config(format!(
                "data.world.frames ({}) differs from model.frames ({})",
                self.data.world.frames, self.model.frames
            )));
        }
        if self.eval.camera >= self.data.world.exo_cameras {
            return Err(Error::Config(format!("eval.camera {} out of range", self.eval.camera)));
        }
        if self.eval.grid_seeds.is_empty() {
            return Err(Error::Config("eval.grid_seeds must not be empty".into()));
        }
        Ok(())
    }

    /// Hash of every field that affects results (the output directory does not).
    pub fn hash(&self) -> String {
        io::hash_json(&(self.preset, self.seed, &self.data, &self.model, &self.train, &self.eval))
    }

    /// Training on the metadata-only preset is refused.
    pub fn require_trainable(&self) -> Result<()> {
        if self.data.dry_run {
            return Err(Error::Config(format!("preset {} describes data that is never rendered; use desk", self.preset)));
        }
        Ok(())
    }
}

/// Seed precedence: command-line flag, then `E2E_SEED`, then the config file.
pub fn resolve_seed(flag: Option<u64>, env: Option<&str>, file: u64) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match env {
        Some(v) => v.trim().parse().map_err(|_| Error::Config(format!("{SEED_ENV}=`{v}` is not an unsigned integer"))),
        None => Ok(file),
    }
}
