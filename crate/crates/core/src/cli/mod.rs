//! Command-line surface.
//!
//! Exit codes: 0 success, 2 validation error, 3 job divergence, 4 I/O error.

pub mod config;
pub mod grid;
pub mod report;

use std::ffi::OsString;
use std::fs::File;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

pub use config::{Config, DataConfig, ModelConfig};
pub use grid::{run_grid, GridOutcome, GridSpec};
pub use report::{emit_report, ReportFormat, ReportRow, CSV_HEADER};

use crate::data::{ltds, Dataset};
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::merge::{recursive_merge, uniform_average};
use crate::nn::checkpoint::{self, Checkpoint, CheckpointMeta};
use crate::nn::ModelWeights;
use crate::pipeline::{self, job_data, replica_seeds, run_method, Method, Subset, TrainJob};

#[derive(Debug, Parser)]
#[command(name = "ltsoups", version, about = "Long-tailed fine-tuning lab on synthetic embeddings")]
pub struct Cli {
    /// Flat `section.key = value` config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override a config key, e.g. `--set train.epochs=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,
    /// Root seed (beats the config file and LTSOUPS_SEED).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic benchmark and its pretrained model.
    Generate {
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one fine-tuning job.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        init: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        val: Option<PathBuf>,
        /// Train on a capped subset at this ratio (bootstrap-resampled).
        #[arg(long)]
        rho: Option<f64>,
        #[arg(long, default_value_t = 0, requires = "rho")]
        bootstrap: usize,
    },
    /// Merge checkpoints: recursively in order of subset ratio, or uniformly.
    Merge {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, conflicts_with = "uniform")]
        lambda: Option<f64>,
        #[arg(long)]
        uniform: bool,
        /// Pretrained weights that seed the recursion.
        #[arg(long)]
        theta0: Option<PathBuf>,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Full two-stage soup: subset replicas, recursive merge, classifier retraining.
    Soup {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        init: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        val: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        skip_failed: bool,
        /// Directory for per-job and per-level checkpoints plus a manifest.
        #[arg(long)]
        artifacts: Option<PathBuf>,
    },
    /// Run a baseline: full-ft, linear-probe, model-soups, soups-rho, crt, lora.
    Baseline {
        name: Method,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        init: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        val: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Evaluate a checkpoint; prints a JSON metrics report.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        test: PathBuf,
        /// Training split, for group membership.
        #[arg(long)]
        train: PathBuf,
        /// Validation split for temperature fitting.
        #[arg(long)]
        val: Option<PathBuf>,
        /// Checkpoint to measure the weight change against.
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep (rho, eta) cells and append rows to a CSV; reruns skip finished rows.
    Grid {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Aggregate a grid CSV over seeds and eta.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value = "csv")]
        format: ReportFormat,
    },
}

fn overrides(cli: &Cli) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for s in &cli.set {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Error::validation("--set", format!("expected KEY=VALUE, got `{s}`")))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    if let Some(seed) = cli.seed {
        out.push(("run.seed".into(), seed.to_string()));
    }
    let mut push = |k: &str, v: Option<String>| {
        if let Some(v) = v {
            out.push((k.to_string(), v));
        }
    };
    match &cli.command {
        Command::Merge { lambda, .. } => push("merge.lambda", lambda.map(|l| l.to_string())),
        Command::Soup {
            workers, skip_failed, ..
        } => {
            push("run.workers", workers.map(|w| w.to_string()));
            push("run.skip_failed", skip_failed.then(|| "true".to_string()));
        }
        Command::Baseline { workers, .. } | Command::Grid { workers, .. } => {
            push("run.workers", workers.map(|w| w.to_string()))
        }
        _ => {}
    }
    Ok(out)
}

fn load_data(path: &Path) -> Result<Dataset> {
    let d = ltds::load(path)?;
    d.check_finite()?;
    Ok(d)
}

fn load_weights(path: &Path) -> Result<ModelWeights> {
    Ok(checkpoint::load(path)?.weights)
}

fn save(weights: ModelWeights, meta: CheckpointMeta, path: &Path) -> Result<()> {
    checkpoint::save(&Checkpoint { weights, meta }, path)
}

fn write_json<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => serde_json::to_writer_pretty(File::create(p)?, value)?,
        None => {
            serde_json::to_writer_pretty(std::io::stdout().lock(), value)?;
            println!();
        }
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = Config::load(cli.config.as_deref(), &overrides(&cli)?)?;
    match cli.command {
        Command::Generate { out } => {
            std::fs::create_dir_all(&out)?;
            let bench = cfg.data.benchmark(cfg.seed)?;
            let theta0 = cfg.model.pretrained(&bench, cfg.seed)?;
            ltds::save(&bench.train, out.join("train.ltds"))?;
            ltds::save(&bench.val, out.join("val.ltds"))?;
            ltds::save(&bench.test, out.join("test.ltds"))?;
            save(theta0, CheckpointMeta::untrained(1.0), &out.join("theta0.ltwt"))?;
            println!(
                "{} train / {} val / {} test rows, rho = {}, counts = {:?}",
                bench.train.len(),
                bench.val.len(),
                bench.test.len(),
                bench.train_counts.imbalance_ratio(),
                bench.train_counts.as_slice()
            );
        }
        Command::Train {
            data,
            init,
            out,
            val,
            rho,
            bootstrap,
        } => {
            let full = load_data(&data)?;
            let val = val.as_deref().map(load_data).transpose()?;
            let theta0 = load_weights(&init)?;
            let t = &cfg.methods.train;
            let (job, train_data) = match rho {
                None => (
                    TrainJob {
                        job_id: 0,
                        subset: Subset::Full,
                        config: t.clone(),
                    },
                    full.clone(),
                ),
                Some(r) => (
                    TrainJob {
                        job_id: 0,
                        subset: Subset::Capped { rho: r, bootstrap },
                        config: t.with_seed(replica_seeds(t.seed, r, bootstrap).1),
                    },
                    job_data(&full, t.seed, r, bootstrap),
                ),
            };
            let o = pipeline::finetune_job(&theta0, &train_data, val.as_ref(), &job.config, &job.name())?;
            let meta = CheckpointMeta {
                seed: job.config.seed,
                subset_rho: rho.unwrap_or_else(|| train_data.imbalance_ratio()),
                loss: Some(job.config.loss),
            };
            save(o.weights, meta, &out)?;
            println!("{}: {} steps, best epoch {:?}", job.name(), o.steps, o.best_epoch);
        }
        Command::Merge {
            out,
            uniform,
            theta0,
            inputs,
            ..
        } => {
            let mut ckpts = inputs.iter().map(checkpoint::load).collect::<Result<Vec<_>>>()?;
            let merged = if uniform {
                uniform_average(&ckpts.iter().map(|c| c.weights.clone()).collect::<Vec<_>>())?
            } else {
                ckpts.sort_by(|a, b| a.meta.subset_rho.total_cmp(&b.meta.subset_rho));
                let models: Vec<ModelWeights> = ckpts.iter().map(|c| c.weights.clone()).collect();
                let lambda = cfg.methods.merge.lambda;
                match theta0 {
                    Some(p) => recursive_merge(&models, &load_weights(&p)?, lambda)?,
                    None => recursive_merge(&models[1..], &models[0], lambda)?,
                }
            };
            let rho = ckpts.iter().map(|c| c.meta.subset_rho).fold(f64::NAN, f64::max);
            save(merged, CheckpointMeta::untrained(rho), &out)?;
        }
        Command::Soup {
            data,
            init,
            out,
            val,
            artifacts,
            ..
        } => {
            let d = load_data(&data)?;
            let val = val.as_deref().map(load_data).transpose()?;
            let theta0 = load_weights(&init)?;
            let m = &cfg.methods;
            let schedule = m.schedule(d.imbalance_ratio())?;
            let (model, art) = pipeline::lt_soups(&theta0, &d, val.as_ref(), &schedule, &m.merge, &m.train, &m.run)?;
            if let Some(dir) = artifacts {
                write_artifacts(&dir, &art)?;
            }
            let meta = CheckpointMeta {
                seed: m.train.seed,
                subset_rho: d.imbalance_ratio(),
                loss: None,
            };
            save(model, meta, &out)?;
            for (job, msg) in &art.failures {
                eprintln!("skipped {}: {msg}", job.name());
            }
        }
        Command::Baseline {
            name,
            data,
            init,
            out,
            val,
            ..
        } => {
            if matches!(name, Method::LtSoups | Method::LtSoupsStage1) {
                return Err(Error::validation("baseline", "use `soup` for the two-stage method"));
            }
            let d = load_data(&data)?;
            let val = val.as_deref().map(load_data).transpose()?;
            let theta0 = load_weights(&init)?;
            let model = run_method(name, &theta0, &d, val.as_ref(), &cfg.methods)?;
            let meta = CheckpointMeta {
                seed: cfg.methods.train.seed,
                subset_rho: d.imbalance_ratio(),
                loss: None,
            };
            save(model, meta, &out)?;
        }
        Command::Eval {
            model,
            test,
            train,
            val,
            reference,
            out,
        } => {
            let m = load_weights(&model)?;
            let test = load_data(&test)?;
            let sizes = load_data(&train)?.class_sizes();
            let val = val.as_deref().map(load_data).transpose()?;
            let reference = reference.as_deref().map(load_weights).transpose()?;
            let report = evaluate(&m, &test, val.as_ref(), &sizes, &cfg.eval, reference.as_ref())?;
            write_json(&report, out.as_deref())?;
        }
        Command::Grid { out, .. } => {
            let o = run_grid(&cfg, &out, cfg.methods.run.workers)?;
            println!(
                "{} rows written, {} already present, {} failed",
                o.written,
                o.skipped,
                o.failures.len()
            );
        }
        Command::Report { input, out_dir, format } => {
            let rows = report::load_csv(&input)?;
            for f in emit_report(rows, format, &out_dir)? {
                println!("{}", f.display());
            }
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct ManifestJob<'a> {
    file: String,
    job: &'a TrainJob,
    best_epoch: Option<usize>,
    val_bal_acc: Option<f64>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    jobs: Vec<ManifestJob<'a>>,
    levels: Vec<(f64, Vec<usize>, String)>,
    merge_recipe: Option<&'a str>,
    failures: Vec<(&'a TrainJob, &'a str)>,
}

/// Writes every job, level and stage checkpoint plus `manifest.json`.
pub fn write_artifacts(dir: &Path, art: &pipeline::RunArtifacts) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut jobs = Vec::new();
    for r in &art.jobs {
        let file = format!("job{:03}.ltwt", r.job.job_id);
        checkpoint::save(&r.checkpoint, dir.join(&file))?;
        jobs.push(ManifestJob {
            file,
            job: &r.job,
            best_epoch: r.best_epoch,
            val_bal_acc: r.val_bal_acc,
        });
    }
    let mut levels = Vec::new();
    for l in &art.levels {
        let file = format!("level_rho{}.ltwt", l.rho);
        save(l.weights.clone(), CheckpointMeta::untrained(l.rho), &dir.join(&file))?;
        levels.push((l.rho, l.jobs.clone(), file));
    }
    if let Some((m, _)) = &art.merged {
        save(m.clone(), CheckpointMeta::untrained(f64::NAN), &dir.join("stage1.ltwt"))?;
    }
    if let Some(m) = &art.stage2 {
        save(m.clone(), CheckpointMeta::untrained(f64::NAN), &dir.join("stage2.ltwt"))?;
    }
    let manifest = Manifest {
        jobs,
        levels,
        merge_recipe: art.merged.as_ref().map(|(_, r)| r.as_str()),
        failures: art.failures.iter().map(|(j, m)| (j, m.as_str())).collect(),
    };
    serde_json::to_writer_pretty(File::create(dir.join("manifest.json"))?, &manifest)?;
    Ok(())
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
