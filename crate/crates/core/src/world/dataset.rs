use std::collections::HashSet;
use std::path::{Path, PathBuf};

use egoexo_tensor::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::seed;
use crate::world::render::{region_mask, render_ego, render_exo, RenderedView};
use crate::world::script::{sample_script, ActivityScript, WorldConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub train_clips: usize,
    pub eval_clips: usize,
    pub world: WorldConfig,
    /// Record the manifest without rendering any clip.
    #[serde(default)]
    pub dry_run: bool,
}

impl DatasetConfig {
    pub fn desk() -> Self {
        DatasetConfig { train_clips: 2000, eval_clips: 400, world: WorldConfig::default(), dry_run: false }
    }

    /// Metadata-only description of the full-size corpus (9k training takes).
    pub fn paper_meta() -> Self {
        DatasetConfig { train_clips: 9000, eval_clips: 1000, world: WorldConfig::default(), dry_run: true }
    }

    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        if self.train_clips == 0 {
            return Err(Error::Config("train_clips must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Eval,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipEntry {
    pub id: String,
    pub seed: u64,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub seed: u64,
    pub config: DatasetConfig,
    pub config_hash: String,
    pub train_count: usize,
    pub eval_count: usize,
    pub clips: Vec<ClipEntry>,
}

pub const MANIFEST_FORMAT: &str = "egoexo-dataset/1";

/// One script with both renderings and the exo interaction mask.
#[derive(Clone, Debug)]
pub struct PairedClip {
    pub script: ActivityScript,
    pub ego: RenderedView,
    pub exo: Vec<RenderedView>,
    pub region_mask: Vec<Tensor<f32>>,
}

impl PairedClip {
    pub fn generate(clip_seed: u64, cfg: &WorldConfig) -> Result<Self> {
        let script = sample_script(clip_seed, cfg)?;
        Self::render(script, cfg)
    }

    pub fn render(script: ActivityScript, cfg: &WorldConfig) -> Result<Self> {
        let ego = render_ego(&script, cfg)?;
        let exo = (0..cfg.exo_cameras).map(|c| render_exo(&script, c, cfg)).collect::<Result<Vec<_>>>()?;
        let region_mask = (0..cfg.exo_cameras).map(|c| region_mask(&script, c, cfg)).collect::<Result<Vec<_>>>()?;
        Ok(PairedClip { script, ego, exo, region_mask })
    }
}

pub fn clip_id(index: usize) -> String {
    format!("c{index:05}")
}

/// Clip list for `(config, seed)`; eval scripts never repeat a training script.
pub fn plan_clips(cfg: &DatasetConfig, root_seed: u64) -> Result<Vec<(ClipEntry, Option<ActivityScript>)>> {
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(cfg.train_clips + cfg.eval_clips);
    for index in 0..cfg.train_clips + cfg.eval_clips {
        let split = if index < cfg.train_clips { Split::Train } else { Split::Eval };
        let mut attempt = 0u64;
        loop {
            let clip_seed = seed::derive(root_seed, &[seed::tag("clip"), index as u64, attempt]);
            if cfg.dry_run {
                out.push((ClipEntry { id: clip_id(index), seed: clip_seed, split }, None));
                break;
            }
            let script = sample_script(clip_seed, &cfg.world)?;
            let fp = script.fingerprint();
            if split == Split::Eval && seen.contains(&fp) {
                attempt += 1;
                continue;
            }
            if split == Split::Train {
                seen.insert(fp);
            }
            out.push((ClipEntry { id: clip_id(index), seed: clip_seed, split }, Some(script)));
            break;
        }
    }
    Ok(out)
}

/// Writes `manifest.json` and one directory per clip under `dir`.
pub fn build_dataset(cfg: &DatasetConfig, root_seed: u64, dir: &Path, overwrite: bool) -> Result<Manifest> {
    cfg.validate()?;
    io::prepare_output_dir(dir, overwrite)?;
    let plan = plan_clips(cfg, root_seed)?;
    let clips_dir = dir.join("clips");
    if !cfg.dry_run {
        io::ensure_dir(&clips_dir)?;
    }
    for (entry, script) in &plan {
        let Some(script) = script else { continue };
        let clip = PairedClip::render(script.clone(), &cfg.world)?;
        let cdir = clips_dir.join(&entry.id);
        io::ensure_dir(&cdir)?;
        io::write_json(&cdir.join("script.json"), &clip.script)?;
        io::write_tensor(&cdir.join("ego.e2ev"), &clip.ego.frames)?;
        for (c, (view, mask)) in clip.exo.iter().zip(&clip.region_mask).enumerate() {
            io::write_tensor(&cdir.join(format!("exo{c}.e2ev")), &view.frames)?;
            io::write_tensor(&cdir.join(format!("mask{c}.e2ev")), mask)?;
        }
    }
    let clips: Vec<ClipEntry> = plan.into_iter().map(|(e, _)| e).collect();
    let manifest = Manifest {
        format: MANIFEST_FORMAT.into(),
        seed: root_seed,
        config: cfg.clone(),
        config_hash: io::hash_json(cfg),
        train_count: cfg.train_clips,
        eval_count: cfg.eval_clips,
        clips,
    };
    io::write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

/// Read access to a dataset directory written by [`build_dataset`].
#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: Manifest,
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Self> {
        let path = root.join("manifest.json");
        if !path.exists() {
            return Err(Error::Missing(format!("dataset manifest {}", path.display())));
        }
        let manifest: Manifest = io::read_json(&path)?;
        if manifest.format != MANIFEST_FORMAT {
            return Err(Error::format(&path, format!("unknown format `{}`", manifest.format)));
        }
        Ok(Dataset { root: root.to_path_buf(), manifest })
    }

    pub fn world(&self) -> &WorldConfig {
        &self.manifest.config.world
    }

    pub fn manifest_hash(&self) -> Result<String> {
        io::sha256_file(&self.root.join("manifest.json"))
    }

    pub fn ids(&self, split: Split) -> Vec<String> {
        self.manifest.clips.iter().filter(|c| c.split == split).map(|c| c.id.clone()).collect()
    }

    pub fn clip_dir(&self, id: &str) -> PathBuf {
        self.root.join("clips").join(id)
    }

    fn file(&self, id: &str, name: &str) -> Result<PathBuf> {
        let p = self.clip_dir(id).join(name);
        if !p.exists() {
            return Err(Error::Missing(format!("clip {id}: {}", p.display())));
        }
        Ok(p)
    }

    pub fn script(&self, id: &str) -> Result<ActivityScript> {
        io::read_json(&self.file(id, "script.json")?)
    }

    pub fn ego(&self, id: &str) -> Result<Tensor<f32>> {
        io::read_tensor(&self.file(id, "ego.e2ev")?)
    }

    pub fn exo(&self, id: &str, camera: usize) -> Result<Tensor<f32>> {
        io::read_tensor(&self.file(id, &format!("exo{camera}.e2ev"))?)
    }

    pub fn mask(&self, id: &str, camera: usize) -> Result<Tensor<f32>> {
        io::read_tensor(&self.file(id, &format!("mask{camera}.e2ev"))?)
    }
}
