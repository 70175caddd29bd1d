//! Command-line front end: `synth`, `train`, `infer` and `eval`.
//!
//! Training hyper-parameters resolve in the order defaults, `--config` TOML
//! file, `TABLEGRAPH_*` environment variables, command-line flags; later
//! sources win.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{list_json, read_chunks_with, write_atomic, write_structure, YAxis};
use crate::metrics::EvalReport;
use crate::model::{load_checkpoint, save_checkpoint, train, HyperParams};
use crate::pipeline::{evaluate_dirs, infer_chunks, load_training_set, EvalSettings};
use crate::synth::{write_dataset, GenConfig, Manifest};

/// Coverage below this fraction triggers a warning during training.
pub const COVERAGE_WARNING: f64 = 0.9;

#[derive(Debug, Parser)]
#[command(name = "tablegraph", version, about = "Table structure recognition from cell boxes")]
pub struct Cli {
    /// Worker threads for per-table stages (0 = all cores).
    #[arg(long, global = true, default_value_t = 0, env = "TABLEGRAPH_THREADS")]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic chunk/structure pairs and a manifest.
    Synth(SynthArgs),
    /// Train an edge classifier on a dataset directory.
    Train(TrainArgs),
    /// Predict structures for a directory of chunk files.
    Infer(InferArgs),
    /// Score predicted structures against ground truth.
    Eval(EvalArgs),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
pub enum YAxisArg {
    #[default]
    Up,
    Down,
}

impl From<YAxisArg> for YAxis {
    fn from(a: YAxisArg) -> Self {
        match a {
            YAxisArg::Up => YAxis::Up,
            YAxisArg::Down => YAxis::Down,
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, env = "TABLEGRAPH_N")]
    pub n: usize,
    #[arg(long, default_value_t = 0, env = "TABLEGRAPH_SEED")]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, env = "TABLEGRAPH_COMPLICATED_PROB")]
    pub complicated_prob: Option<f64>,
    /// TOML file with generator settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory holding `chunk/` and `structure/`.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for the checkpoint, loss log and coverage report.
    #[arg(long)]
    pub out: PathBuf,
    /// TOML file with a top-level `seed` and a `[hyper]` table.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, env = "TABLEGRAPH_SEED")]
    pub seed: Option<u64>,
    #[arg(long, env = "TABLEGRAPH_K")]
    pub k: Option<usize>,
    #[arg(long, env = "TABLEGRAPH_BLOCKS")]
    pub blocks: Option<usize>,
    /// Model width; the feed-forward width follows as four times this.
    #[arg(long, env = "TABLEGRAPH_DIM")]
    pub dim: Option<usize>,
    #[arg(long, env = "TABLEGRAPH_LR")]
    pub lr: Option<f64>,
    #[arg(long, env = "TABLEGRAPH_DROPOUT")]
    pub dropout: Option<f64>,
    #[arg(long, env = "TABLEGRAPH_WEIGHT_DECAY")]
    pub weight_decay: Option<f64>,
    #[arg(long, env = "TABLEGRAPH_EPOCHS")]
    pub epochs: Option<usize>,
    #[arg(long, value_enum, default_value_t = YAxisArg::Up)]
    pub y_axis: YAxisArg,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Directory of chunk files.
    #[arg(long)]
    pub chunks: PathBuf,
    /// Output directory for structure files.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write per-edge logits to `<out>/edges/`.
    #[arg(long)]
    pub dump_edges: bool,
    #[arg(long, value_enum, default_value_t = YAxisArg::Up)]
    pub y_axis: YAxisArg,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long)]
    pub only_complicated: bool,
    #[arg(long)]
    pub spanning_only: bool,
    /// Drop relations whose endpoints have empty content.
    #[arg(long)]
    pub exclude_empty: bool,
    /// Write the JSON report here (a text summary goes next to it).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainFile {
    seed: Option<u64>,
    hyper: Option<HyperParams>,
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

impl TrainArgs {
    /// Hyper-parameters and seed after applying config file and flags.
    pub fn resolve(&self) -> Result<(HyperParams, u64)> {
        let file: TrainFile = match &self.config {
            Some(p) => read_toml(p)?,
            None => TrainFile::default(),
        };
        let mut h = file.hyper.unwrap_or_default();
        if let Some(d) = self.dim {
            h = h.with_dim(d);
        }
        macro_rules! set {
            ($($flag:ident => $field:ident),*) => { $(if let Some(v) = self.$flag { h.$field = v; })* };
        }
        set!(k => k, blocks => blocks, lr => learning_rate, dropout => dropout,
             weight_decay => weight_decay, epochs => epochs);
        h.validate()?;
        Ok((h, self.seed.or(file.seed).unwrap_or(0)))
    }
}

pub fn cmd_synth(args: &SynthArgs) -> Result<Manifest> {
    let mut cfg: GenConfig = match &args.config {
        Some(p) => read_toml(p)?,
        None => GenConfig::default(),
    };
    cfg.seed = args.seed;
    if let Some(p) = args.complicated_prob {
        cfg.complicated_prob = p;
    }
    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let manifest = write_dataset(&args.out, &cfg, args.n)?;
    log::info!("wrote {} tables to {}", manifest.tables.len(), args.out.display());
    Ok(manifest)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CoverageReport {
    pub covered: usize,
    pub total: usize,
    pub ratio: f64,
    pub tables: usize,
    pub skipped_edgeless: usize,
}

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const LOSS_FILE: &str = "loss.csv";
pub const COVERAGE_FILE: &str = "coverage.json";

pub fn cmd_train(args: &TrainArgs) -> Result<CoverageReport> {
    let (hyper, seed) = args.resolve()?;
    let set = load_training_set(&args.data, hyper.k, args.y_axis.into())?;
    for o in &set.orphans {
        log::warn!("skipping unpaired file {o}");
    }
    if set.tables.is_empty() {
        return Err(Error::EmptyDataset(format!("no chunk/structure pairs under {}", args.data.display())));
    }
    let cov = set.coverage();
    let ratio = cov.ratio();
    if ratio < COVERAGE_WARNING {
        log::warn!(
            "WARNING: candidate edges cover only {:.1}% of truth relations (k = {}); consider a larger k",
            100.0 * ratio,
            hyper.k
        );
    }
    let (model, log) = train(&set.graphs(), &hyper, seed)?;
    save_checkpoint(&model, seed, args.out.join(CHECKPOINT_FILE))?;
    let mut csv = String::from("epoch,mean_loss\n");
    for (i, l) in log.epoch_losses.iter().enumerate() {
        csv.push_str(&format!("{},{}\n", i + 1, l));
    }
    write_atomic(&args.out.join(LOSS_FILE), csv.as_bytes())?;
    let report = CoverageReport {
        covered: cov.covered,
        total: cov.total,
        ratio,
        tables: set.tables.len(),
        skipped_edgeless: log.skipped_edgeless,
    };
    let json = serde_json::to_string_pretty(&report).map_err(|e| Error::Config(e.to_string()))?;
    write_atomic(&args.out.join(COVERAGE_FILE), json.as_bytes())?;
    Ok(report)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct InferSummary {
    pub written: usize,
    pub failed: Vec<(String, String)>,
}

pub fn cmd_infer(args: &InferArgs) -> Result<InferSummary> {
    let (model, _) = load_checkpoint(&args.checkpoint)?;
    let inputs = list_json(&args.chunks)?;
    let y_axis: YAxis = args.y_axis.into();
    let results: Vec<(String, Result<()>)> = inputs
        .par_iter()
        .map(|(name, path)| {
            let run = || -> Result<()> {
                let chunks = read_chunks_with(path, y_axis)?;
                let inf = infer_chunks(&chunks, &model)?;
                if args.dump_edges {
                    let json = serde_json::to_string_pretty(&inf.edge_records())
                        .map_err(|e| Error::Config(e.to_string()))?;
                    write_atomic(&args.out.join("edges").join(format!("{name}.json")), json.as_bytes())?;
                }
                write_structure(&inf.structure, args.out.join(format!("{name}.json")))
            };
            (name.clone(), run())
        })
        .collect();
    let mut summary = InferSummary::default();
    for (name, r) in results {
        match r {
            Ok(()) => summary.written += 1,
            Err(e) => {
                log::error!("{name}: {e}");
                summary.failed.push((name, e.to_string()));
            }
        }
    }
    Ok(summary)
}

pub fn cmd_eval(args: &EvalArgs) -> Result<EvalReport> {
    let settings = EvalSettings {
        only_complicated: args.only_complicated,
        spanning_only: args.spanning_only,
        exclude_empty: args.exclude_empty,
    };
    let report = evaluate_dirs(&args.pred, &args.truth, settings)?;
    if let Some(out) = &args.out {
        let json = serde_json::to_string_pretty(&report).map_err(|e| Error::Config(e.to_string()))?;
        write_atomic(out, json.as_bytes())?;
        write_atomic(&out.with_extension("txt"), report.to_text().as_bytes())?;
    }
    Ok(report)
}

/// Runs a parsed command line. Returns an error for any failed table.
pub fn run(cli: Cli) -> Result<()> {
    if cli.threads > 0 {
        // Only the first call can set the global pool; later calls keep it.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global();
    }
    match &cli.command {
        Command::Synth(a) => {
            let m = cmd_synth(a)?;
            println!("{} tables written to {}", m.tables.len(), a.out.display());
        }
        Command::Train(a) => {
            let r = cmd_train(a)?;
            println!(
                "trained on {} tables; coverage {}/{} ({:.2}%); checkpoint {}",
                r.tables,
                r.covered,
                r.total,
                100.0 * r.ratio,
                a.out.join(CHECKPOINT_FILE).display()
            );
        }
        Command::Infer(a) => {
            let s = cmd_infer(a)?;
            println!("{} structures written to {}", s.written, a.out.display());
            if !s.failed.is_empty() {
                return Err(Error::TablesFailed(s.failed.len()));
            }
        }
        Command::Eval(a) => print!("{}", cmd_eval(a)?.to_text()),
    }
    Ok(())
}
