//! The `hedge` command line.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::ablation::{run_ablation, AblationConfig, Variant};
use crate::baselines::{generate_baseline, BaselineKind};
use crate::config::{Provenance, RunConfig};
use crate::datasets::{
    load_incidence_with, read_batch_dir, sample_subhypergraphs, synth_regime, write_batch_dir, RegimeKind,
};
use crate::error::{HedgeError, Result};
use crate::forward::DiffusionConfig;
use crate::incidence::{Constraints, IncidenceMatrix};
use crate::metrics::evaluate_with;
use crate::net::{DriftNet, NetArch};
use crate::sampler::generate;
use crate::trainer::{TrainConfig, Trainer};
use crate::validation::{run_validation, ValidationBudget};

pub const MODEL_CHECKPOINT: &str = "model.bin";
pub const MODEL_SIDECAR: &str = "model.json";
pub const TRAIN_LOG: &str = "train_log.jsonl";
pub const THREADS_ENV: &str = "HEDGE_THREADS";

#[derive(Debug, Parser)]
#[command(name = "hedge", version, about = "Heat-OU diffusion for hypergraph incidence matrices")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Root seed; overrides the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum BaselineArg {
    ErHg,
    HcmMcmc,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a drift network to a batch directory or a single incidence file.
    Train {
        data: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Sample hypergraphs from a trained model directory.
    Generate {
        model: PathBuf,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Compare two batch directories.
    Evaluate {
        real: PathBuf,
        generated: PathBuf,
        #[arg(long)]
        truncation: Option<usize>,
    },
    /// Comparator samples from a reference batch.
    Baseline {
        reference: PathBuf,
        #[arg(long, value_enum)]
        kind: Option<BaselineArg>,
        #[arg(long)]
        count: Option<usize>,
    },
    /// Fixed-shape sub-hypergraphs of one large incidence file.
    Subsample {
        input: PathBuf,
        #[arg(long)]
        n_sub: Option<usize>,
        #[arg(long)]
        m_sub: Option<usize>,
        #[arg(long)]
        count: Option<usize>,
    },
    /// A synthetic regime batch.
    Synth {
        #[arg(long, value_parser = parse_regime)]
        regime: Option<RegimeKind>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        m: Option<usize>,
        #[arg(long)]
        count: Option<usize>,
    },
    /// Numerical checks; exits 1 if any check fails.
    Validate {
        /// Reduced Monte Carlo budgets.
        #[arg(long)]
        quick: bool,
        /// Include equivariance of this model's network.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Heat-term ablation on a synthetic regime.
    Ablate {
        #[arg(long, value_parser = parse_regime)]
        regime: Option<RegimeKind>,
        #[arg(long)]
        seeds: Option<usize>,
        /// Comma-separated subset of full, ou_only, node_only, edge_only.
        #[arg(long, value_delimiter = ',', value_parser = parse_variant)]
        variants: Option<Vec<Variant>>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        count: Option<usize>,
    },
}

fn parse_regime(s: &str) -> std::result::Result<RegimeKind, String> {
    RegimeKind::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
        let names: Vec<&str> = RegimeKind::ALL.iter().map(|k| k.name()).collect();
        format!("unknown regime {s:?}; expected one of {}", names.join(", "))
    })
}

fn parse_variant(s: &str) -> std::result::Result<Variant, String> {
    Variant::parse(s).ok_or_else(|| format!("unknown variant {s:?}"))
}

/// Metadata written next to a checkpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSidecar {
    pub provenance: Provenance,
    pub diffusion: DiffusionConfig,
    pub arch: NetArch,
    pub train: TrainConfig,
    pub data_count: usize,
    pub final_loss: f64,
    pub final_zero_loss: f64,
    pub clip_threshold: Option<f64>,
    pub params_checksum: u64,
}

fn log_event(event: &str, fields: serde_json::Value) {
    let mut line = json!({ "event": event });
    if let (Some(obj), Some(extra)) = (line.as_object_mut(), fields.as_object()) {
        obj.extend(extra.clone());
    }
    eprintln!("{line}");
}

fn require_out(out: &Option<PathBuf>) -> Result<&Path> {
    out.as_deref()
        .ok_or_else(|| HedgeError::InvalidConfig("this subcommand requires --out DIR".into()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// A batch directory, or a single incidence file as a batch of one.
pub fn read_data(path: &Path, constraints: Constraints) -> Result<Vec<IncidenceMatrix>> {
    if !path.exists() {
        return Err(HedgeError::NotFound(path.to_path_buf()));
    }
    if path.is_dir() {
        read_batch_dir(path, constraints)
    } else {
        Ok(vec![load_incidence_with(path, constraints)?])
    }
}

fn emit_report(out: &Option<PathBuf>, file: &str, value: &impl Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        write_json(&dir.join(file), value)?;
    }
    Ok(())
}

fn cmd_train(cfg: &RunConfig, out: &Path, data: &Path) -> Result<()> {
    let data = read_data(data, Constraints::ALLOW_ISOLATED)?;
    let diffusion = cfg.diffusion.build(&data)?;
    fs::create_dir_all(out)?;
    log_event(
        "train_start",
        json!({ "count": data.len(), "shape": diffusion.shape(), "steps": cfg.train.steps }),
    );
    let arch = NetArch::default();
    let mut trainer = Trainer::new(&data, diffusion.clone(), arch.clone(), cfg.train.clone())?;
    let mut log = BufWriter::new(File::create(out.join(TRAIN_LOG))?);
    let records = trainer.run(Some(&mut log))?;
    log.flush()?;
    let (net, report) = trainer.finish(records);
    net.save(&out.join(MODEL_CHECKPOINT))?;
    let last = report.records.last();
    let sidecar = ModelSidecar {
        provenance: cfg.provenance(),
        diffusion,
        arch,
        train: cfg.train.clone(),
        data_count: data.len(),
        final_loss: last.map_or(f64::NAN, |r| r.loss),
        final_zero_loss: last.map_or(f64::NAN, |r| r.zero_loss),
        clip_threshold: report.clip_threshold,
        params_checksum: report.params_checksum,
    };
    write_json(&out.join(MODEL_SIDECAR), &sidecar)?;
    log_event(
        "train_done",
        json!({ "final_loss": sidecar.final_loss, "checksum": sidecar.params_checksum }),
    );
    Ok(())
}

pub fn load_model(dir: &Path) -> Result<(DriftNet, ModelSidecar)> {
    let sidecar: ModelSidecar = serde_json::from_reader(File::open(dir.join(MODEL_SIDECAR))?)?;
    let net = DriftNet::load(&dir.join(MODEL_CHECKPOINT))?;
    if net.checksum() != sidecar.params_checksum {
        return Err(HedgeError::Checkpoint(format!(
            "{} does not match the checksum in {}",
            MODEL_CHECKPOINT, MODEL_SIDECAR
        )));
    }
    Ok((net, sidecar))
}

fn cmd_generate(cfg: &RunConfig, out: &Path, model: &Path) -> Result<()> {
    let (net, sidecar) = load_model(model)?;
    let sc = cfg.sample_config();
    let output = generate(&net, &sidecar.diffusion, &sc, cfg.sample.count)?;
    for f in &output.failures {
        log_event("sample_failed", json!(f));
    }
    let empty: usize = output.samples.iter().map(|s| s.empty_hyperedges.len()).sum();
    let manifest = json!({
        "provenance": cfg.provenance(),
        "generator": "hedge",
        "model_checksum": sidecar.params_checksum,
        "model_provenance": sidecar.provenance,
        "sample": sc,
        "requested": cfg.sample.count,
        "failures": output.failures,
        "mean_saturation": output.mean_saturation(),
        "empty_hyperedges": empty,
    });
    write_batch_dir(out, &output.matrices(), &manifest)?;
    log_event(
        "generate_done",
        json!({ "samples": output.samples.len(), "failures": output.failures.len() }),
    );
    Ok(())
}

fn cmd_baseline(cfg: &RunConfig, out: &Path, reference: &Path) -> Result<()> {
    let reference = read_data(reference, Constraints::RELAXED)?;
    let bc = cfg.baseline_config();
    let output = generate_baseline(&reference, cfg.baseline.count, &bc)?;
    for w in &output.warnings {
        log_event("baseline_warning", json!({ "message": w }));
    }
    let manifest = json!({
        "provenance": cfg.provenance(),
        "generator": bc.kind,
        "baseline": bc,
        "warnings": output.warnings,
    });
    write_batch_dir(out, &output.samples, &manifest)
}

fn run_command(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.common.seed {
        cfg.seed = seed;
    }
    // Flag overrides are applied before hashing so the hash describes the run.
    match &cli.command {
        Command::Train { steps, batch, lr, .. } => {
            if let Some(v) = *steps {
                cfg.train.steps = v;
            }
            if let Some(v) = *batch {
                cfg.train.batch = v;
            }
            if let Some(v) = *lr {
                cfg.train.lr = v;
            }
        }
        Command::Generate { count, steps, threshold, .. } => {
            if let Some(v) = *count {
                cfg.sample.count = v;
            }
            if let Some(v) = *steps {
                cfg.sample.steps = v;
            }
            if let Some(v) = *threshold {
                cfg.sample.threshold = v;
            }
        }
        Command::Evaluate { truncation, .. } => {
            if truncation.is_some() {
                cfg.metrics.truncation = *truncation;
            }
        }
        Command::Baseline { kind, count, .. } => {
            if let Some(k) = kind {
                cfg.baseline.kind = match k {
                    BaselineArg::ErHg => BaselineKind::ErHg,
                    BaselineArg::HcmMcmc => BaselineKind::HcmMcmc,
                };
            }
            if let Some(v) = *count {
                cfg.baseline.count = v;
            }
        }
        Command::Subsample { n_sub, m_sub, count, .. } => {
            if let Some(v) = *n_sub {
                cfg.subsample.n_sub = v;
            }
            if let Some(v) = *m_sub {
                cfg.subsample.m_sub = v;
            }
            if let Some(v) = *count {
                cfg.subsample.count = v;
            }
        }
        Command::Synth { regime, n, m, count } => {
            if let Some(k) = *regime {
                cfg.regime.kind = k;
            }
            if let Some(v) = *n {
                cfg.regime.n = v;
            }
            if let Some(v) = *m {
                cfg.regime.m = v;
            }
            if let Some(v) = *count {
                cfg.regime.count = v;
            }
        }
        Command::Ablate { regime, seeds, steps, count, .. } => {
            if let Some(k) = *regime {
                cfg.regime.kind = k;
            }
            if let Some(v) = *seeds {
                cfg.ablate.seeds = v;
            }
            if let Some(v) = *steps {
                cfg.train.steps = v;
            }
            if let Some(v) = *count {
                cfg.regime.count = v;
                cfg.ablate.test_count = v;
                cfg.sample.count = v;
            }
        }
        Command::Validate { .. } => {}
    }
    let cfg = cfg.resolved();
    let out = &cli.common.out;

    match cli.command {
        Command::Train { data, .. } => cmd_train(&cfg, require_out(out)?, &data),
        Command::Generate { model, .. } => cmd_generate(&cfg, require_out(out)?, &model),
        Command::Evaluate { real, generated, .. } => {
            let r = read_data(&real, Constraints::RELAXED)?;
            let g = read_data(&generated, Constraints::RELAXED)?;
            let report = evaluate_with(&r, &g, cfg.metrics.truncation)?;
            let value = json!({ "provenance": cfg.provenance(), "metrics": report });
            emit_report(out, "metrics.json", &value)
        }
        Command::Baseline { reference, .. } => cmd_baseline(&cfg, require_out(out)?, &reference),
        Command::Subsample { input, .. } => {
            let h = load_incidence_with(&input, Constraints::RELAXED)?;
            let batch = sample_subhypergraphs(&h, &cfg.subsample)?;
            let manifest = json!({
                "provenance": cfg.provenance(),
                "source": input.display().to_string(),
                "subsample": cfg.subsample,
            });
            write_batch_dir(require_out(out)?, &batch, &manifest)
        }
        Command::Synth { .. } => {
            let batch = synth_regime(&cfg.regime)?;
            let manifest = json!({ "provenance": cfg.provenance(), "regime": cfg.regime });
            write_batch_dir(require_out(out)?, &batch, &manifest)
        }
        Command::Validate { quick, model } => {
            let budget = if quick {
                ValidationBudget::quick()
            } else {
                ValidationBudget::default()
            };
            let net = match &model {
                Some(dir) => Some(load_model(dir)?.0),
                None => None,
            };
            let report = run_validation(cfg.seed, &budget, net.as_ref());
            let value = json!({ "provenance": cfg.provenance(), "report": report });
            emit_report(out, "validation.json", &value)?;
            if report.passed {
                Ok(())
            } else {
                let failed: Vec<&str> = report
                    .checks
                    .iter()
                    .filter(|c| !c.passed())
                    .map(|c| c.name.as_str())
                    .collect();
                Err(HedgeError::ChecksFailed(failed.join(", ")))
            }
        }
        Command::Ablate { variants, .. } => {
            let mut ac = AblationConfig::new(cfg.regime.clone(), cfg.ablate.seeds, cfg.seed);
            ac.test_count = cfg.ablate.test_count;
            ac.generate_count = cfg.sample.count;
            ac.train = cfg.train.clone();
            ac.sample = cfg.sample_config();
            ac.gamma = cfg.diffusion.gamma;
            ac.truncation = cfg.metrics.truncation;
            if let Some(v) = variants {
                ac.variants = v;
            }
            let mut progress = |r: &crate::ablation::RunResult| {
                log_event(
                    "ablate_run",
                    json!({
                        "variant": r.variant,
                        "seed_index": r.seed_index,
                        "intersection_wd": r.metrics.intersection_wd,
                        "final_loss": r.final_loss,
                    }),
                );
            };
            let report = run_ablation(&ac, Some(&mut progress))?;
            print!("{}", report.table());
            if let Some(dir) = out {
                fs::create_dir_all(dir)?;
                write_json(
                    &dir.join("ablation.json"),
                    &json!({ "provenance": cfg.provenance(), "ablation": report }),
                )?;
                fs::write(dir.join("ablation.txt"), report.table())?;
            }
            Ok(())
        }
    }
}

fn configure_threads() -> std::result::Result<(), String> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let k: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&k| k > 0)
        .ok_or_else(|| format!("{THREADS_ENV} must be a positive integer, got {raw:?}"))?;
    // A pool may already exist when called more than once in one process.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(k).build_global();
    Ok(())
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit status: 0 on success, 1 on runtime failure, 2 on usage errors.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return 2;
    }
    match run_command(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
