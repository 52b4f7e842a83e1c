//! Pipeline stages over a run directory. Each stage reads its prerequisites
//! from fixed paths, writes its artifacts next to them and embeds the hashes
//! of everything it read.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use egoexo::bench::attention::{attention_rollout, AttnTrace};
use egoexo::bench::eval::items_hash;
use egoexo::bench::plot::{heatmap, line_plot};
use egoexo::bench::{
    check_view_contract, evaluate_mcq, filter_mcqs, generate_mcqs, localization, sweep_token_count, teacher_metrics,
    EvalReport, FilterReport, GenerationLog, McqItem, SweepResult,
};
use egoexo::distill::grid::{check_ordering, grid_csv, run_ablation_grid, GridContext, GridResult, GridRow};
use egoexo::distill::{
    ego_answer_nll, eval_ego_input, generate_instructions, read_instructions, strategy_of_role, train_ego_token_model,
    train_student, train_teacher, view_patches, write_instructions, FeatureStore, InstructionReport, InstructionTriple,
    Strategy, StrategySpec, StudentInputs, TrainLog, Views,
};
use egoexo::vlm::checkpoint::param_hash;
use egoexo::vlm::{load_checkpoint, save_checkpoint, CheckpointMeta, TokenStrategy, Visual, Vlm};
use egoexo::world::{build_dataset, Dataset, Manifest, Split, Viewpoint};
use egoexo::{io, seed, Error, Result};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

/// Artifact layout of one run directory.
#[derive(Clone, Debug)]
pub struct Workspace {
    pub root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Workspace { root: root.into() }
    }

    pub fn data(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn benchmark(&self) -> PathBuf {
        self.root.join("benchmark.jsonl")
    }

    pub fn benchmark_report(&self) -> PathBuf {
        self.root.join("benchmark_report.json")
    }

    pub fn teacher(&self) -> PathBuf {
        self.root.join("teacher.ckpt")
    }

    pub fn teacher_log(&self) -> PathBuf {
        self.root.join("teacher_log.json")
    }

    pub fn instructions(&self) -> PathBuf {
        self.root.join("instructions.jsonl")
    }

    pub fn instructions_report(&self) -> PathBuf {
        self.root.join("instructions_report.json")
    }

    pub fn student(&self, spec: &StrategySpec, seed: u64) -> PathBuf {
        self.root.join("students").join(format!("{}_k{}_s{seed}.ckpt", spec.strategy, spec.k_tokens))
    }

    pub fn report(&self, name: &str) -> PathBuf {
        self.root.join("reports").join(format!("{name}.json"))
    }
}

fn log_path(ckpt: &Path) -> PathBuf {
    ckpt.with_extension("log.json")
}

fn missing(path: &Path, what: &str, producer: &str) -> Error {
    Error::Missing(format!("{what} {} (run {producer} first)", path.display()))
}

fn require(path: &Path, what: &str, producer: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(missing(path, what, producer))
    }
}

pub fn open_dataset(ws: &Workspace) -> Result<Dataset> {
    require(&ws.data().join("manifest.json"), "dataset", "gen-data")?;
    Dataset::open(&ws.data())
}

/// JSON training log written next to every checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub role: String,
    pub config_hash: String,
    pub inputs: BTreeMap<String, String>,
    pub seed: u64,
    pub epochs: usize,
    pub log: TrainLog,
    pub checkpoint_sha256: String,
    pub param_hash: String,
    pub wall_seconds: f64,
    /// Stage-specific scalars (for instance the teacher's ego NLL before and after).
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub mcq_seed: u64,
    pub manifest_hash: String,
    pub generation: GenerationLog,
    pub filter: FilterReport,
    pub items_hash: String,
}

/// Renders the dataset and curates the benchmark from eval-split scripts.
pub fn gen_data(cfg: &RunConfig, ws: &Workspace, overwrite: bool) -> Result<Manifest> {
    cfg.validate()?;
    if let Some(parent) = ws.root.parent() {
        if !parent.as_os_str().is_empty() && !parent.exists() {
            return Err(Error::io(
                parent,
                std::io::Error::new(std::io::ErrorKind::NotFound, "parent of the output directory does not exist"),
            ));
        }
    }
    io::ensure_dir(&ws.root)?;
    let manifest = build_dataset(&cfg.data, cfg.seed, &ws.data(), overwrite)?;
    if cfg.data.dry_run {
        return Ok(manifest);
    }
    let ds = Dataset::open(&ws.data())?;
    let ids = ds.ids(Split::Eval);
    let (items, generation) = generate_mcqs(&ds, &ids, cfg.eval.mcq_seed)?;
    let scripts = ids.iter().map(|id| Ok((id.clone(), ds.script(id)?))).collect::<Result<BTreeMap<_, _>>>()?;
    let (kept, filter) = filter_mcqs(&items, &scripts);
    io::write_jsonl(&ws.benchmark(), &kept)?;
    let report = BenchmarkReport {
        mcq_seed: cfg.eval.mcq_seed,
        manifest_hash: ds.manifest_hash()?,
        generation,
        filter,
        items_hash: items_hash(&kept),
    };
    io::write_json(&ws.benchmark_report(), &report)?;
    Ok(manifest)
}

pub fn read_benchmark(ws: &Workspace) -> Result<Vec<McqItem>> {
    require(&ws.benchmark(), "benchmark", "gen-data")?;
    io::read_jsonl(&ws.benchmark())
}

fn write_run_log(ckpt: &Path, log: &RunLog) -> Result<()> {
    io::write_json(&log_path(ckpt), log)
}

/// Pretrains the teacher on ego renders and freezes it.
pub fn train_teacher_stage(cfg: &RunConfig, ws: &Workspace) -> Result<RunLog> {
    cfg.validate()?;
    cfg.require_trainable()?;
    let ds = open_dataset(ws)?;
    let start = Instant::now();
    let train = ds.ids(Split::Train);
    let held_out = ds.ids(Split::Eval);
    let mut model = Vlm::<f32>::new(cfg.model.clone(), seed::derive(cfg.seed, &[seed::tag("teacher-init")]))?;
    let mut metrics = BTreeMap::new();
    metrics.insert("ego_nll_init".into(), ego_answer_nll(&model, &ds, &held_out, cfg.eval.query_seed)?);
    let log = train_teacher(&mut model, &ds, &train, &cfg.train, seed::derive(cfg.seed, &[seed::tag("teacher-train")]))?;
    if let Some(msg) = &log.diverged {
        return Err(Error::Diverged(msg.clone()));
    }
    metrics.insert("ego_nll_trained".into(), ego_answer_nll(&model, &ds, &held_out, cfg.eval.query_seed)?);
    model.set_trainable(&[]);
    let inputs = BTreeMap::from([("dataset".to_string(), ds.manifest_hash()?)]);
    let meta = CheckpointMeta { model: model.cfg.clone(), role: "teacher".into(), config_hash: cfg.hash(), inputs: inputs.clone() };
    let sha = save_checkpoint(&ws.teacher(), &meta, &model)?;
    let run = RunLog {
        role: "teacher".into(),
        config_hash: cfg.hash(),
        inputs,
        seed: cfg.seed,
        epochs: log.epochs.len(),
        log,
        checkpoint_sha256: sha,
        param_hash: param_hash(&model.params),
        wall_seconds: start.elapsed().as_secs_f64(),
        metrics,
    };
    io::write_json(&ws.teacher_log(), &run)?;
    Ok(run)
}

pub fn load_teacher(ws: &Workspace) -> Result<(Vlm<f32>, String)> {
    require(&ws.teacher(), "teacher checkpoint", "train-teacher")?;
    let ck = load_checkpoint(&ws.teacher())?;
    let hash = param_hash(&ck.model.params);
    Ok((ck.model, hash))
}

/// Greedy teacher answers for every training clip.
pub fn gen_instructions_stage(cfg: &RunConfig, ws: &Workspace) -> Result<InstructionReport> {
    cfg.validate()?;
    let ds = open_dataset(ws)?;
    let (teacher, hash) = load_teacher(ws)?;
    let ids = ds.ids(Split::Train);
    let (triples, report) = generate_instructions(&teacher, &hash, &ds, &ids, cfg.eval.query_seed, cfg.train.max_gen_len)?;
    write_instructions(&ws.instructions(), &triples)?;
    io::write_json(&ws.instructions_report(), &report)?;
    Ok(report)
}

/// Everything a student run reads, loaded once.
pub struct StudentData {
    pub ds: Dataset,
    pub teacher: Vlm<f32>,
    pub teacher_hash: String,
    pub triples: Vec<InstructionTriple>,
    pub features: FeatureStore,
    pub inputs: BTreeMap<String, String>,
}

impl StudentData {
    /// Loads training features for `strategies` (ego renders only when one of them reads them).
    pub fn load(cfg: &RunConfig, ws: &Workspace, strategies: &[Strategy]) -> Result<Self> {
        cfg.require_trainable()?;
        let ds = open_dataset(ws)?;
        let (teacher, teacher_hash) = load_teacher(ws)?;
        let needs_triples = strategies.iter().any(|s| s.uses_teacher_answers());
        let mut inputs = BTreeMap::from([("dataset".to_string(), ds.manifest_hash()?), ("teacher".to_string(), teacher_hash.clone())]);
        let triples = if ws.instructions().exists() {
            let t = read_instructions(&ws.instructions())?;
            if let Some(bad) = t.iter().find(|t| t.teacher_hash != teacher_hash) {
                return Err(Error::Contract(format!(
                    "instruction file was generated by teacher {} but the current teacher is {teacher_hash}",
                    bad.teacher_hash
                )));
            }
            inputs.insert("instructions".into(), io::sha256_file(&ws.instructions())?);
            t
        } else if needs_triples {
            return Err(missing(&ws.instructions(), "instruction file", "gen-instructions"));
        } else {
            Vec::new()
        };
        let views = if strategies.iter().any(|s| s.reads_train_ego()) { Views::BOTH } else { Views::EXO };
        let features = FeatureStore::build(&ds, &teacher, &ds.ids(Split::Train), views, cfg.eval.camera)?;
        Ok(StudentData { ds, teacher, teacher_hash, triples, features, inputs })
    }

    /// Ego-trained token-bank model for `k` tokens.
    pub fn ego_model(&self, cfg: &RunConfig, k: usize) -> Result<Vlm<f32>> {
        let s = seed::derive(cfg.seed, &[seed::tag("ego-model"), k as u64]);
        let run = train_ego_token_model(&self.teacher, &self.ds, &self.features, k, &cfg.train, cfg.eval.query_seed, s)?;
        if let Some(msg) = run.log.diverged {
            return Err(Error::Diverged(msg));
        }
        Ok(run.model)
    }

    pub fn inputs<'a>(&'a self, cfg: &RunConfig, ego_model: Option<&'a Vlm<f32>>) -> StudentInputs<'a> {
        StudentInputs {
            dataset: &self.ds,
            teacher: &self.teacher,
            features: &self.features,
            triples: &self.triples,
            ego_model,
            query_seed: cfg.eval.query_seed,
        }
    }
}

/// Trains one student and writes its checkpoint and log.
pub fn train_student_stage(cfg: &RunConfig, ws: &Workspace, spec: &StrategySpec, run_seed: u64) -> Result<(PathBuf, RunLog)> {
    cfg.validate()?;
    let data = StudentData::load(cfg, ws, &[spec.strategy])?;
    let ego = if spec.strategy.needs_ego_bank() { Some(data.ego_model(cfg, spec.k_tokens)?) } else { None };
    let start = Instant::now();
    let run = train_student(&data.inputs(cfg, ego.as_ref()), spec, &cfg.train, run_seed)?;
    if let Some(msg) = &run.log.diverged {
        return Err(Error::Diverged(msg.clone()));
    }
    let role = format!("student:{}", spec.strategy);
    let meta = CheckpointMeta { model: run.model.cfg.clone(), role: role.clone(), config_hash: cfg.hash(), inputs: data.inputs.clone() };
    let path = ws.student(spec, run_seed);
    io::ensure_dir(path.parent().expect("student path has a parent"))?;
    let sha = save_checkpoint(&path, &meta, &run.model)?;
    let log = RunLog {
        role,
        config_hash: cfg.hash(),
        inputs: data.inputs.clone(),
        seed: run_seed,
        epochs: run.log.epochs.len(),
        log: run.log,
        checkpoint_sha256: sha,
        param_hash: param_hash(&run.model.params),
        wall_seconds: start.elapsed().as_secs_f64(),
        metrics: BTreeMap::new(),
    };
    write_run_log(&path, &log)?;
    Ok((path, log))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Mcq,
    TeacherMetrics,
    Localization,
    All,
}

impl std::str::FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mcq" => Ok(Suite::Mcq),
            "teacher-metrics" => Ok(Suite::TeacherMetrics),
            "localization" => Ok(Suite::Localization),
            "all" => Ok(Suite::All),
            o => Err(Error::Config(format!("unknown suite `{o}`; valid suites: mcq, teacher-metrics, localization, all"))),
        }
    }
}

/// Evaluates a checkpoint and writes the report to `out`.
#[allow(clippy::too_many_arguments)]
pub fn eval_stage(
    cfg: &RunConfig,
    ws: &Workspace,
    checkpoint: &Path,
    view: Viewpoint,
    suite: Suite,
    upper_bound: bool,
    out: &Path,
) -> Result<EvalReport> {
    cfg.validate()?;
    require(checkpoint, "checkpoint", "train-teacher or train-student")?;
    let ck = load_checkpoint(checkpoint)?;
    let role = ck.meta.role.clone();
    check_view_contract(&role, view, upper_bound)?;
    let ds = open_dataset(ws)?;
    let items = read_benchmark(ws)?;
    let model = ck.model;
    let ego = match strategy_of_role(&role) {
        Some(s) => eval_ego_input(s, &model),
        None => model.default_ego(),
    };
    let mut report = if matches!(suite, Suite::Mcq | Suite::All) {
        evaluate_mcq(&model, &role, &ck.meta.config_hash, &ego, &items, &ds, view, cfg.eval.camera, upper_bound)?
    } else {
        EvalReport {
            role: role.clone(),
            view,
            model_hash: param_hash(&model.params),
            config_hash: ck.meta.config_hash.clone(),
            items_hash: items_hash(&items),
            categories: Vec::new(),
            average: 0.0,
            items: 0,
            teacher_metrics: None,
            localization: None,
            notes: Vec::new(),
        }
    };
    let eval_ids = ds.ids(Split::Eval);
    if matches!(suite, Suite::TeacherMetrics | Suite::All) {
        let (teacher, hash) = load_teacher(ws)?;
        let (triples, _) =
            generate_instructions(&teacher, &hash, &ds, &eval_ids, cfg.eval.query_seed, cfg.train.max_gen_len)?;
        let student_store = FeatureStore::build(&ds, &model, &eval_ids, Views::EXO, cfg.eval.camera)?;
        let teacher_store = FeatureStore::build(&ds, &teacher, &eval_ids, Views::EGO, cfg.eval.camera)?;
        report.teacher_metrics = Some(teacher_metrics(&model, &ego, &student_store, &teacher, &teacher_store, &triples)?);
        report.notes.push(format!("teacher-metrics teacher {hash}"));
    }
    if matches!(suite, Suite::Localization | Suite::All) {
        if model.cfg.has_bank() && model.cfg.token_strategy != TokenStrategy::VeSelfAttention {
            let store = FeatureStore::build(&ds, &model, &eval_ids, Views::EXO, cfg.eval.camera)?;
            report.localization = Some(localization(&model, &store, &ds, &eval_ids, cfg.eval.camera)?);
        } else if suite == Suite::Localization {
            return Err(Error::Config("localization needs a checkpoint with a cross-attention token bank".into()));
        } else {
            report.notes.push("localization skipped: no cross-attention token bank".into());
        }
    }
    report.notes.push(format!("dataset {}", ds.manifest_hash()?));
    for (k, v) in &ck.meta.inputs {
        report.notes.push(format!("checkpoint input {k} {v}"));
    }
    io::ensure_dir(out.parent().unwrap_or(Path::new(".")))?;
    io::write_json(out, &report)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridFile {
    pub strategies: Vec<String>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub k_tokens: Option<usize>,
}

impl GridFile {
    pub fn load(path: &Path) -> Result<Self> {
        require(path, "grid file", "a text editor")?;
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let g: GridFile = serde_json::from_str(&text).map_err(|e| Error::Config(format!("grid file: {e}")))?;
        if g.strategies.is_empty() || g.seeds.is_empty() {
            return Err(Error::Config("grid file needs at least one strategy and one seed".into()));
        }
        Ok(g)
    }

    pub fn specs(&self, default_k: usize) -> Result<Vec<StrategySpec>> {
        self.strategies
            .iter()
            .map(|s| Ok(StrategySpec::new(s.parse()?).with_k(self.k_tokens.unwrap_or(default_k))))
            .collect()
    }
}

/// Benchmark features and items shared by every grid cell.
pub struct EvalData {
    pub items: Vec<McqItem>,
    pub store: FeatureStore,
}

impl EvalData {
    pub fn load(cfg: &RunConfig, ws: &Workspace, data: &StudentData) -> Result<Self> {
        let items = read_benchmark(ws)?;
        let ids: BTreeSet<String> = items.iter().map(|i| i.clip_id.clone()).collect();
        let ids: Vec<String> = ids.into_iter().collect();
        let store = FeatureStore::build(&data.ds, &data.teacher, &ids, Views::EXO, cfg.eval.camera)?;
        Ok(EvalData { items, store })
    }
}

/// Runs `specs × seeds`; the ego-token model is trained once per token count that needs it.
pub fn run_grid(
    cfg: &RunConfig,
    data: &StudentData,
    eval: &EvalData,
    specs: &[StrategySpec],
    seeds: &[u64],
    mut on_row: impl FnMut(&GridRow),
) -> Result<GridResult> {
    let mut result = GridResult::default();
    let ks: BTreeSet<usize> = specs.iter().map(|s| s.k_tokens).collect();
    for k in ks {
        let group: Vec<StrategySpec> = specs.iter().filter(|s| s.k_tokens == k).cloned().collect();
        let ego = if group.iter().any(|s| s.strategy.needs_ego_bank()) { Some(data.ego_model(cfg, k)?) } else { None };
        let ctx = GridContext { inputs: data.inputs(cfg, ego.as_ref()), eval_store: &eval.store, items: &eval.items, cfg: &cfg.train };
        let part = run_ablation_grid(&ctx, &group, seeds, &mut on_row);
        result.rows.extend(part.rows);
    }
    // restore the caller's strategy order
    let order = |s: &GridRow| specs.iter().position(|p| p.strategy == s.strategy && p.k_tokens == s.k_tokens);
    result.rows.sort_by_key(|r| (order(r), r.seed));
    result.aggregates = egoexo::distill::grid::aggregate(&result.rows);
    Ok(result)
}

/// Bar-free summary plot: mean accuracy per grid entry, in order.
pub fn grid_plot(result: &GridResult, path: &Path) -> Result<()> {
    let pts: Vec<(f64, f64)> = result.aggregates.iter().enumerate().map(|(i, a)| (i as f64, a.average)).collect();
    line_plot(&pts, 320, 240).write_ppm(path)
}

pub struct AblationOutcome {
    pub result: GridResult,
    pub csv: PathBuf,
    pub violations: Option<Vec<String>>,
}

pub fn ablate_stage(cfg: &RunConfig, ws: &Workspace, grid: &GridFile, ordering: Option<&str>, mut on_row: impl FnMut(&GridRow)) -> Result<AblationOutcome> {
    cfg.validate()?;
    let specs = grid.specs(cfg.model.k_tokens)?;
    if let Some(name) = ordering {
        check_ordering(name, &GridResult::default())?;
    }
    let strategies: Vec<Strategy> = specs.iter().map(|s| s.strategy).collect();
    let data = StudentData::load(cfg, ws, &strategies)?;
    let eval = EvalData::load(cfg, ws, &data)?;
    let result = run_grid(cfg, &data, &eval, &specs, &grid.seeds, &mut on_row)?;
    let csv = ws.root.join("ablation.csv");
    io::write_bytes(&csv, grid_csv(&result)?.as_bytes())?;
    grid_plot(&result, &ws.root.join("ablation.ppm"))?;
    let violations = match ordering {
        Some(name) => Some(check_ordering(name, &result)?),
        None => None,
    };
    Ok(AblationOutcome { result, csv, violations })
}

pub fn sweep_stage(cfg: &RunConfig, ws: &Workspace, ks: &[usize], seeds: &[u64], on_row: impl FnMut(&GridRow)) -> Result<SweepResult> {
    cfg.validate()?;
    let data = StudentData::load(cfg, ws, &[Strategy::SeqDistPlusTokens])?;
    let eval = EvalData::load(cfg, ws, &data)?;
    let ctx = GridContext { inputs: data.inputs(cfg, None), eval_store: &eval.store, items: &eval.items, cfg: &cfg.train };
    let sweep = sweep_token_count(&ctx, ks, seeds, on_row)?;
    io::write_bytes(&ws.root.join("sweep.csv"), sweep.csv().as_bytes())?;
    sweep.write_plot(&ws.root.join("sweep.ppm"), &ws.root.join("sweep_series.csv"))?;
    Ok(sweep)
}

/// Per-frame maps of one clip: `[T][N]` each, normalised within the frame.
pub struct ClipMaps {
    pub rollout: Vec<Vec<f64>>,
    pub ego_tokens: Vec<Vec<f64>>,
}

pub fn clip_maps(model: &Vlm<f32>, ego: &egoexo::vlm::EgoInput<f32>, frames: &egoexo_tensor::Tensor<f32>) -> Result<ClipMaps> {
    let cfg = &model.cfg;
    if !cfg.has_bank() || cfg.token_strategy == TokenStrategy::VeSelfAttention {
        return Err(Error::Config("ego-token maps need a checkpoint with a cross-attention token bank".into()));
    }
    let patches = view_patches(frames, cfg)?;
    let run = egoexo::vlm::infer::run_prefix(model, Visual::Patches(&patches), ego)?;
    let (t, n) = (cfg.frames, cfg.patches_per_frame());
    let heads = cfg.heads;
    let layers: Vec<Vec<f64>> = run.self_attn.iter().map(|l| l.iter().map(|&v| v as f64).collect()).collect();
    let len = ((layers[0].len() / heads) as f64).sqrt().round() as usize;
    let rollout = attention_rollout(&AttnTrace { layers, heads, len, frames: t, patches_per_frame: n })?;
    let last = run.cross_attn.last().ok_or_else(|| Error::Contract("no cross-attention recorded".into()))?;
    let k = cfg.k_tokens;
    let ego_tokens = (0..t)
        .map(|f| {
            let mut m: Vec<f64> = (0..n).map(|p| (0..k).map(|tok| last[tok * t * n + f * n + p] as f64).sum()).collect();
            let s: f64 = m.iter().sum();
            m.iter_mut().for_each(|v| *v /= s);
            m
        })
        .collect();
    Ok(ClipMaps { rollout: rollout.data().chunks(n).map(<[f64]>::to_vec).collect(), ego_tokens })
}

fn maps_csv(maps: &[Vec<f64>]) -> String {
    let n = maps.first().map_or(0, Vec::len);
    let mut s = String::from("frame");
    (0..n).for_each(|p| s.push_str(&format!(",p{p}")));
    s.push('\n');
    for (f, m) in maps.iter().enumerate() {
        s.push_str(&f.to_string());
        m.iter().for_each(|v| s.push_str(&format!(",{v:.9}")));
        s.push('\n');
    }
    s
}

/// Writes `rollout_t*.ppm`, `ego_tokens_t*.ppm`, `rollout.csv` and `ego_tokens.csv`.
pub fn visualize_stage(cfg: &RunConfig, ws: &Workspace, checkpoint: &Path, clip: &str, out: &Path) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    require(checkpoint, "checkpoint", "train-student")?;
    let ck = load_checkpoint(checkpoint)?;
    let ds = open_dataset(ws)?;
    if !ds.manifest.clips.iter().any(|c| c.id == clip) {
        return Err(Error::Missing(format!("clip {clip} is not in the dataset")));
    }
    let ego = match strategy_of_role(&ck.meta.role) {
        Some(s) => eval_ego_input(s, &ck.model),
        None => ck.model.default_ego(),
    };
    let maps = clip_maps(&ck.model, &ego, &ds.exo(clip, cfg.eval.camera)?)?;
    io::ensure_dir(out)?;
    let grid = ck.model.cfg.image_size / ck.model.cfg.patch_size;
    let mut files = Vec::new();
    for (name, set) in [("rollout", &maps.rollout), ("ego_tokens", &maps.ego_tokens)] {
        for (t, m) in set.iter().enumerate() {
            let p = out.join(format!("{name}_t{t}.ppm"));
            heatmap(m, grid, 16).write_ppm(&p)?;
            files.push(p);
        }
        let p = out.join(format!("{name}.csv"));
        io::write_bytes(&p, maps_csv(set).as_bytes())?;
        files.push(p);
    }
    Ok(files)
}
