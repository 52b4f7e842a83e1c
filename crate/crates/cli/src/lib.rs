//! Command-line front end: one binary, one subcommand per pipeline stage.
//!
//! Exit codes: 0 ok, 2 configuration error, 3 I/O error, 4 missing
//! prerequisite, 5 contract violation (including a failed ordering
//! assertion), 6 partial failure or diverged training.

pub mod config;
pub mod pipeline;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use egoexo::distill::{Strategy, StrategySpec};
use egoexo::world::Viewpoint;
use egoexo::Error;

use crate::config::{resolve_seed, Preset, RunConfig, SEED_ENV};
use crate::pipeline::{GridFile, Suite, Workspace};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_MISSING: i32 = 4;
pub const EXIT_CONTRACT: i32 = 5;
pub const EXIT_PARTIAL: i32 = 6;

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_CONFIG,
        Error::Io { .. } | Error::Format { .. } => EXIT_IO,
        Error::Missing(_) => EXIT_MISSING,
        Error::Contract(_) | Error::Tensor(_) => EXIT_CONTRACT,
        Error::Diverged(_) => EXIT_PARTIAL,
    }
}

#[derive(Debug, Parser)]
#[command(name = "egoexo", version, about = "Ego-to-exo knowledge transfer for a miniature vision-language model")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON run configuration (strict: unknown keys are rejected).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Built-in configuration when no file is given: desk or paper-meta.
    #[arg(long, global = true)]
    pub preset: Option<String>,
    /// Global seed; overrides E2E_SEED, which overrides the file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Run directory holding every artifact.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render the paired dataset and curate the benchmark.
    GenData {
        #[arg(long)]
        overwrite: bool,
    },
    /// Pretrain and freeze the teacher on ego renders.
    TrainTeacher,
    /// Greedy teacher answers for every training clip.
    GenInstructions,
    /// Train one student on exo renders.
    TrainStudent {
        #[arg(long)]
        strategy: String,
        /// Ego tokens per layer (defaults to the model config).
        #[arg(long)]
        k: Option<usize>,
        /// Seed of this run (defaults to the global seed).
        #[arg(long)]
        run_seed: Option<u64>,
    },
    /// Evaluate a checkpoint on the benchmark.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// exo or ego.
        #[arg(long, default_value = "exo")]
        view: String,
        /// mcq, teacher-metrics, localization or all.
        #[arg(long, default_value = "mcq")]
        suite: String,
        /// Allow a student to be evaluated on ego input.
        #[arg(long)]
        upper_bound: bool,
        /// Report path (defaults to reports/<checkpoint>_<view>.json).
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Strategy × seed grid from a JSON grid file.
    Ablate {
        #[arg(long)]
        grid: PathBuf,
        /// Named ordering to enforce on the aggregate means (table3).
        #[arg(long)]
        assert_ordering: Option<String>,
    },
    /// Accuracy of the full recipe as a function of the ego-token count.
    SweepTokens {
        #[arg(long, value_delimiter = ',')]
        k_list: Vec<usize>,
        /// Defaults to the configured grid seeds.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
    },
    /// Rollout and ego-token heatmaps of one clip.
    Visualize {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        clip: String,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

/// File, then preset, then seed and output overrides.
pub fn resolve_config(common: &Common, env_seed: Option<&str>) -> Result<RunConfig, Error> {
    let mut cfg = match (&common.config, &common.preset) {
        (Some(path), preset) => {
            let cfg = RunConfig::load(path)?;
            if let Some(p) = preset {
                let p: Preset = p.parse()?;
                if p != cfg.preset {
                    return Err(Error::Config(format!("--preset {p} conflicts with the file's preset {}", cfg.preset)));
                }
            }
            cfg
        }
        (None, Some(p)) => RunConfig::preset(p.parse()?),
        (None, None) => RunConfig::preset(Preset::Desk),
    };
    cfg.seed = resolve_seed(common.seed, env_seed, cfg.seed)?;
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_view(s: &str) -> Result<Viewpoint, Error> {
    match s {
        "exo" => Ok(Viewpoint::Exo),
        "ego" => Ok(Viewpoint::Ego),
        o => Err(Error::Config(format!("unknown view `{o}`; valid views: exo, ego"))),
    }
}

fn pct(v: f64) -> String {
    format!("{:.2}", 100.0 * v)
}

/// Runs a parsed command; `Ok` carries the exit code of a completed command.
pub fn execute(cli: &Cli, env_seed: Option<&str>) -> Result<i32, Error> {
    let cfg = resolve_config(&cli.common, env_seed)?;
    let ws = Workspace::new(&cfg.output_dir);
    match &cli.command {
        Command::GenData { overwrite } => {
            let m = pipeline::gen_data(&cfg, &ws, *overwrite)?;
            let hash = egoexo::io::sha256_file(&ws.data().join("manifest.json"))?;
            println!("dataset {} train {} eval {} manifest {hash}", ws.data().display(), m.train_count, m.eval_count);
            if m.config.dry_run {
                println!("dry run: no clips rendered");
            }
        }
        Command::TrainTeacher => {
            let log = pipeline::train_teacher_stage(&cfg, &ws)?;
            println!("teacher {} epochs {} losses {:?}", ws.teacher().display(), log.epochs, log.log.losses());
            println!("held-out ego NLL {:?}", log.metrics);
        }
        Command::GenInstructions => {
            let r = pipeline::gen_instructions_stage(&cfg, &ws)?;
            println!("instructions {} generated {} dropped {}", ws.instructions().display(), r.generated, r.dropped_empty);
        }
        Command::TrainStudent { strategy, k, run_seed } => {
            let s: Strategy = strategy.parse()?;
            let spec = StrategySpec::new(s).with_k(k.unwrap_or(cfg.model.k_tokens));
            let (path, log) = pipeline::train_student_stage(&cfg, &ws, &spec, run_seed.unwrap_or(cfg.seed))?;
            println!("student {} epochs {} losses {:?}", path.display(), log.epochs, log.log.losses());
        }
        Command::Eval { checkpoint, view, suite, upper_bound, report } => {
            let view = parse_view(view)?;
            let suite: Suite = suite.parse()?;
            let stem = checkpoint.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let name = format!("{stem}_{}", if view == Viewpoint::Ego { "ego" } else { "exo" });
            let out = report.clone().unwrap_or_else(|| ws.report(&name));
            let r = pipeline::eval_stage(&cfg, &ws, checkpoint, view, suite, *upper_bound, &out)?;
            print!("{}", r.summary_table());
            println!("report {}", out.display());
        }
        Command::Ablate { grid, assert_ordering } => {
            let g = GridFile::load(grid)?;
            let out = pipeline::ablate_stage(&cfg, &ws, &g, assert_ordering.as_deref(), |r| {
                println!("{} k={} seed={} avg={}", r.strategy, r.k_tokens, r.seed, pct(r.average))
            })?;
            for a in &out.result.aggregates {
                println!("{:<22} k={} mean {} ± {} over {}", a.strategy.name(), a.k_tokens, pct(a.average), pct(a.spread), a.runs);
            }
            println!("table {}", out.csv.display());
            if let Some(v) = &out.violations {
                if !v.is_empty() {
                    for line in v {
                        eprintln!("ordering violated: {line}");
                    }
                    return Ok(EXIT_CONTRACT);
                }
                println!("ordering holds");
            }
            if out.result.failures() > 0 {
                eprintln!("{} run(s) failed; see rows marked FAILED", out.result.failures());
                return Ok(EXIT_PARTIAL);
            }
        }
        Command::SweepTokens { k_list, seeds } => {
            let ks = if k_list.is_empty() { cfg.eval.sweep_k.clone() } else { k_list.clone() };
            let seeds = if seeds.is_empty() { cfg.eval.grid_seeds.clone() } else { seeds.clone() };
            let sweep = pipeline::sweep_stage(&cfg, &ws, &ks, &seeds, |r| {
                println!("k={} seed={} avg={}", r.k_tokens, r.seed, pct(r.average))
            })?;
            for (k, m) in sweep.means() {
                println!("k={k} mean {}", m.map(pct).unwrap_or_else(|| "FAILED".into()));
            }
            if let Some(s) = sweep.spread() {
                println!("spread {} points", pct(s));
            }
            if sweep.grid.failures() > 0 {
                return Ok(EXIT_PARTIAL);
            }
        }
        Command::Visualize { checkpoint, clip, out_dir } => {
            let out = out_dir.clone().unwrap_or_else(|| ws.root.join("viz").join(clip));
            let files = pipeline::visualize_stage(&cfg, &ws, checkpoint, clip, &out)?;
            println!("{} files in {}", files.len(), out.display());
        }
    }
    Ok(EXIT_OK)
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let env_seed = std::env::var(SEED_ENV).ok();
    match execute(&cli, env_seed.as_deref()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
