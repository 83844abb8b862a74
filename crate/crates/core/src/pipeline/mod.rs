//! Training jobs and the methods built from them.
//!
//! Every job owns its random streams: the subset seed comes from the root seed
//! and the subset ratio, the bootstrap and training seeds from that plus the
//! bootstrap index. Jobs run on a bounded rayon pool and results are collected
//! in job order, so the worker count never changes the output.

mod lora;
mod train;

pub use lora::LoraConfig;
pub use train::TrainOutcome;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{bootstrap_resample, subsample_to_ratio, Dataset, SubsetSchedule};
use crate::error::{Error, Result};
use crate::losses::LossKind;
use crate::merge::{recursive_merge, uniform_average, MergeConfig};
use crate::nn::checkpoint::{Checkpoint, CheckpointMeta};
use crate::nn::{ModelWeights, TrainConfig};
use crate::rng::derive_seed;

const STAGE2_TAG: u64 = 0x5354_4147_4532;
const TRAIN_TAG: u64 = 0x5452_4149_4e;

/// Training data of a job.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Subset {
    Full,
    /// Bootstrap `bootstrap` of the subset capped at ratio `rho`.
    Capped { rho: f64, bootstrap: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainJob {
    pub job_id: usize,
    pub subset: Subset,
    pub config: TrainConfig,
}

impl TrainJob {
    pub fn name(&self) -> String {
        match self.subset {
            Subset::Full => format!("job{}:full", self.job_id),
            Subset::Capped { rho, bootstrap } => format!("job{}:rho{rho}:b{bootstrap}", self.job_id),
        }
    }
}

/// Seed of the cap-based subset at ratio `rho`.
pub fn subset_seed(root: u64, rho: f64) -> u64 {
    derive_seed(root, rho.to_bits())
}

/// Bootstrap and training seeds of replica `bootstrap` at ratio `rho`.
pub fn replica_seeds(root: u64, rho: f64, bootstrap: usize) -> (u64, u64) {
    let b = derive_seed(subset_seed(root, rho), bootstrap as u64 + 1);
    (b, derive_seed(b, TRAIN_TAG))
}

/// Builds the training set of a capped job.
pub fn job_data(data: &Dataset, root: u64, rho: f64, bootstrap: usize) -> Dataset {
    let subset = subsample_to_ratio(data, rho, subset_seed(root, rho));
    bootstrap_resample(&subset, replica_seeds(root, rho, bootstrap).0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct JobRecord {
    pub job: TrainJob,
    pub checkpoint: Checkpoint,
    pub best_epoch: Option<usize>,
    pub val_bal_acc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelRecord {
    pub rho: f64,
    /// Job ids averaged into this level.
    pub jobs: Vec<usize>,
    pub weights: ModelWeights,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunArtifacts {
    pub jobs: Vec<JobRecord>,
    pub failures: Vec<(TrainJob, String)>,
    pub levels: Vec<LevelRecord>,
    /// Stage-1 result and the recipe that produced it.
    pub merged: Option<(ModelWeights, String)>,
    pub stage2: Option<ModelWeights>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunOptions {
    pub workers: usize,
    /// Drop diverged jobs as long as each level keeps one replica.
    pub skip_failed: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            workers: 1,
            skip_failed: false,
        }
    }
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidSpec(format!("worker pool: {e}")))
}

/// Trains every parameter from `theta0` and returns the EMA weights of the
/// epoch with the best validation balanced accuracy (final EMA without `val`).
pub fn finetune(theta0: &ModelWeights, data: &Dataset, val: Option<&Dataset>, cfg: &TrainConfig) -> Result<ModelWeights> {
    finetune_job(theta0, data, val, cfg, "finetune").map(|o| o.weights)
}

pub fn finetune_job(
    theta0: &ModelWeights,
    data: &Dataset,
    val: Option<&Dataset>,
    cfg: &TrainConfig,
    job: &str,
) -> Result<TrainOutcome> {
    let obj = train::Direct {
        theta0,
        trainable: vec![0..theta0.layout().len()],
    };
    train::run(&obj, data, val, cfg, job)
}

/// Refits the prototypes only; backbone and log-temperature keep their bits.
pub fn classifier_retrain(
    theta: &ModelWeights,
    data: &Dataset,
    val: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<ModelWeights> {
    let obj = train::Direct {
        theta0: theta,
        trainable: vec![theta.layout().prototype_range()],
    };
    train::run(&obj, data, val, cfg, "classifier-retrain").map(|o| o.weights)
}

/// Runs `jobs` on the pool and returns their outcomes in job order.
fn run_jobs(
    theta0: &ModelWeights,
    data: &Dataset,
    val: Option<&Dataset>,
    jobs: &[TrainJob],
    opts: &RunOptions,
) -> Result<Vec<Result<TrainOutcome>>> {
    let run = |job: &TrainJob| -> Result<TrainOutcome> {
        match job.subset {
            Subset::Full => finetune_job(theta0, data, val, &job.config, &job.name()),
            Subset::Capped { .. } => unreachable!("capped jobs carry their own data"),
        }
    };
    Ok(pool(opts.workers)?.install(|| jobs.par_iter().map(run).collect()))
}

fn checkpoint_of(job: &TrainJob, weights: ModelWeights) -> Checkpoint {
    let subset_rho = match job.subset {
        Subset::Full => f64::NAN,
        Subset::Capped { rho, .. } => rho,
    };
    Checkpoint {
        weights,
        meta: CheckpointMeta {
            seed: job.config.seed,
            subset_rho,
            loss: Some(job.config.loss),
        },
    }
}

/// Trains `count` replicas per ratio on bootstrap resamples of the capped
/// subsets and groups the surviving weights by ratio (ascending).
#[allow(clippy::too_many_arguments)]
fn train_levels(
    theta0: &ModelWeights,
    data: &Dataset,
    val: Option<&Dataset>,
    ratios: &[f64],
    count: usize,
    cfg: &TrainConfig,
    opts: &RunOptions,
    art: &mut RunArtifacts,
) -> Result<Vec<LevelRecord>> {
    let mut sorted = ratios.to_vec();
    sorted.sort_by(f64::total_cmp);
    let root = cfg.seed;
    let mut jobs = Vec::new();
    for &rho in &sorted {
        for b in 0..count {
            jobs.push(TrainJob {
                job_id: jobs.len(),
                subset: Subset::Capped { rho, bootstrap: b },
                config: cfg.with_seed(replica_seeds(root, rho, b).1),
            });
        }
    }
    let run = |job: &TrainJob| -> Result<TrainOutcome> {
        let Subset::Capped { rho, bootstrap } = job.subset else {
            unreachable!()
        };
        let d = job_data(data, root, rho, bootstrap);
        finetune_job(theta0, &d, val, &job.config, &job.name())
    };
    let outcomes: Vec<Result<TrainOutcome>> = pool(opts.workers)?.install(|| jobs.par_iter().map(run).collect());

    let mut levels: Vec<LevelRecord> = Vec::new();
    for (job, outcome) in jobs.into_iter().zip(outcomes) {
        let Subset::Capped { rho, .. } = job.subset else { unreachable!() };
        match outcome {
            Ok(o) => {
                if levels.last().is_none_or(|l| l.rho != rho) {
                    levels.push(LevelRecord {
                        rho,
                        jobs: Vec::new(),
                        weights: theta0.clone(),
                    });
                }
                levels.last_mut().unwrap().jobs.push(job.job_id);
                art.jobs.push(JobRecord {
                    checkpoint: checkpoint_of(&job, o.weights),
                    best_epoch: o.best_epoch,
                    val_bal_acc: o.best_val_bal_acc,
                    job,
                });
            }
            Err(e) if opts.skip_failed && matches!(e, Error::Diverged { .. }) => {
                art.failures.push((job, e.to_string()));
            }
            Err(e) => return Err(e),
        }
    }
    for &rho in &sorted {
        if !levels.iter().any(|l| l.rho == rho) {
            let msg = art
                .failures
                .iter()
                .find(|(j, _)| matches!(j.subset, Subset::Capped { rho: r, .. } if r == rho))
                .map(|(_, m)| m.clone())
                .unwrap_or_default();
            return Err(Error::Diverged {
                job: format!("every replica at rho {rho} ({msg})"),
                step: 0,
                loss: f64::NAN,
            });
        }
    }
    for level in &mut levels {
        let members: Vec<ModelWeights> = art
            .jobs
            .iter()
            .filter(|r| level.jobs.contains(&r.job.job_id))
            .map(|r| r.checkpoint.weights.clone())
            .collect();
        level.weights = uniform_average(&members)?;
    }
    Ok(levels)
}

fn stage2_config(cfg: &TrainConfig) -> TrainConfig {
    cfg.with_seed(derive_seed(cfg.seed, STAGE2_TAG))
}

/// Replicas per subset ratio, averaged per level and merged recursively from
/// the least to the most imbalanced level.
#[allow(clippy::too_many_arguments)]
pub fn stage1(
    theta0: &ModelWeights,
    data: &Dataset,
    val: Option<&Dataset>,
    schedule: &SubsetSchedule,
    merge_cfg: &MergeConfig,
    cfg: &TrainConfig,
    opts: &RunOptions,
    art: &mut RunArtifacts,
) -> Result<ModelWeights> {
    merge_cfg.validate()?;
    cfg.validate()?;
    let levels = train_levels(theta0, data, val, schedule.ratios(), schedule.bootstraps(), cfg, opts, art)?;
    let averages: Vec<ModelWeights> = levels.iter().map(|l| l.weights.clone()).collect();
    let ratios: Vec<String> = levels.iter().map(|l| l.rho.to_string()).collect();
    let (merged, recipe) = if merge_cfg.include_pretrained_as_theta0 {
        (
            recursive_merge(&averages, theta0, merge_cfg.lambda)?,
            format!("recursive(lambda={}, theta0, [{}])", merge_cfg.lambda, ratios.join(", ")),
        )
    } else {
        (
            recursive_merge(&averages[1..], &averages[0], merge_cfg.lambda)?,
            format!("recursive(lambda={}, [{}])", merge_cfg.lambda, ratios.join(", ")),
        )
    };
    art.levels = levels;
    art.merged = Some((merged.clone(), recipe));
    Ok(merged)
}

/// Stage 1: replicas per subset ratio, averaged per level and merged
/// recursively from the least to the most imbalanced level. Stage 2:
/// classifier retraining on the full data.
pub fn lt_soups(
    theta0: &ModelWeights,
    data: &Dataset,
    val: Option<&Dataset>,
    schedule: &SubsetSchedule,
    merge_cfg: &MergeConfig,
    cfg: &TrainConfig,
    opts: &RunOptions,
) -> Result<(ModelWeights, RunArtifacts)> {
    let mut art = RunArtifacts::default();
    let merged = stage1(theta0, data, val, schedule, merge_cfg, cfg, opts, &mut art)?;
    let last = classifier_retrain(&merged, data, val, &stage2_config(cfg))?;
    art.stage2 = Some(last.clone());
    Ok((last, art))
}

/// Fine-tunes everything on the full data with logit adjustment.
pub fn baseline_full_ft(theta0: &ModelWeights, data: &Dataset, val: Option<&Dataset>, cfg: &TrainConfig) -> Result<ModelWeights> {
    finetune(theta0, data, val, &cfg.with_loss(LossKind::La))
}

pub fn baseline_linear_probe(
    theta0: &ModelWeights,
    data: &Dataset,
    val: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<ModelWeights> {
    classifier_retrain(theta0, data, val, &cfg.with_loss(LossKind::La))
}

/// Configurations of the soup members: member 0 is `cfg` itself, later
/// members draw fresh seeds and alternate `lr_max` between `lr` and `lr / 3`.
pub fn model_soup_configs(cfg: &TrainConfig, count: usize) -> Vec<TrainConfig> {
    (0..count)
        .map(|i| {
            let mut c = cfg.with_loss(LossKind::La);
            if i > 0 {
                c.seed = derive_seed(cfg.seed, i as u64);
            }
            if i % 2 == 1 {
                c.lr_max = cfg.lr_max / 3.0;
            }
            c
        })
        .collect()
}

/// Uniform average of `count` full fine-tuning runs.
pub fn baseline_model_soups(
    theta0: &ModelWeights,
    data: &Dataset,
    val: Option<&Dataset>,
    cfg: &TrainConfig,
    count: usize,
    opts: &RunOptions,
) -> Result<ModelWeights> {
    if count == 0 {
        return Err(Error::validation("soups.count", "must be >= 1"));
    }
    let jobs: Vec<TrainJob> = model_soup_configs(cfg, count)
        .into_iter()
        .enumerate()
        .map(|(job_id, config)| TrainJob {
            job_id,
            subset: Subset::Full,
            config,
        })
        .collect();
    let mut members = Vec::with_capacity(count);
    for (job, outcome) in jobs.iter().zip(run_jobs(theta0, data, val, &jobs, opts)?) {
        match outcome {
            Ok(o) => members.push(o.weights),
            Err(e) if opts.skip_failed && matches!(e, Error::Diverged { .. }) => {
                eprintln!("skipping {}: {e}", job.name());
            }
            Err(e) => return Err(e),
        }
    }
    uniform_average(&members)
}

/// `count` replicas at a single subset ratio, averaged uniformly, then
/// classifier retraining on the full data.
pub fn baseline_soups_rho(
    theta0: &ModelWeights,
    data: &Dataset,
    val: Option<&Dataset>,
    rho_n: f64,
    count: usize,
    cfg: &TrainConfig,
    opts: &RunOptions,
) -> Result<ModelWeights> {
    if count == 0 {
        return Err(Error::validation("soups.count", "must be >= 1"));
    }
    let mut art = RunArtifacts::default();
    let cfg = cfg.with_loss(LossKind::La);
    let levels = train_levels(theta0, data, val, &[rho_n], count, &cfg, opts, &mut art)?;
    classifier_retrain(&levels[0].weights, data, val, &stage2_config(&cfg))
}

/// Stage 1 with plain cross-entropy, stage 2 retrains the classifier with
/// class-balanced sampling.
pub fn baseline_crt(theta0: &ModelWeights, data: &Dataset, val: Option<&Dataset>, cfg: &TrainConfig) -> Result<ModelWeights> {
    let stage1 = finetune(theta0, data, val, &cfg.with_loss(LossKind::Ce))?;
    classifier_retrain(&stage1, data, val, &stage2_config(cfg).with_loss(LossKind::Cb))
}

/// Low-rank adapters with logit adjustment; the adapter product is folded
/// into the base weights on return.
pub fn baseline_lora(
    theta0: &ModelWeights,
    data: &Dataset,
    val: Option<&Dataset>,
    lora: &LoraConfig,
    cfg: &TrainConfig,
) -> Result<ModelWeights> {
    let obj = lora::Adapted::new(theta0, lora, cfg.seed)?;
    train::run(&obj, data, val, &cfg.with_loss(LossKind::La), "lora").map(|o| o.weights)
}

/// Every method the CLI and grid can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    LtSoups,
    LtSoupsStage1,
    FullFt,
    LinearProbe,
    ModelSoups,
    SoupsRho,
    Crt,
    Lora,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::LtSoups,
        Method::LtSoupsStage1,
        Method::FullFt,
        Method::LinearProbe,
        Method::ModelSoups,
        Method::SoupsRho,
        Method::Crt,
        Method::Lora,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::LtSoups => "lt-soups",
            Method::LtSoupsStage1 => "lt-soups-stage1",
            Method::FullFt => "full-ft",
            Method::LinearProbe => "linear-probe",
            Method::ModelSoups => "model-soups",
            Method::SoupsRho => "soups-rho",
            Method::Crt => "crt",
            Method::Lora => "lora",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Method::ALL.iter().map(|m| m.name()).collect();
                Error::validation("method", format!("unknown method `{s}` (expected one of {})", names.join(", ")))
            })
    }
}

/// Settings shared by all methods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodConfig {
    pub train: TrainConfig,
    /// Subset ratios for the soup schedule; `None` uses `2^1 .. 2^levels`.
    pub ratios: Option<Vec<f64>>,
    pub levels: usize,
    pub bootstraps: usize,
    pub merge: MergeConfig,
    pub soups_count: usize,
    pub soups_rho: f64,
    pub lora: LoraConfig,
    pub run: RunOptions,
}

impl Default for MethodConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            ratios: None,
            levels: 4,
            bootstraps: 2,
            merge: MergeConfig::default(),
            soups_count: 4,
            soups_rho: 8.0,
            lora: LoraConfig::default(),
            run: RunOptions::default(),
        }
    }
}

impl MethodConfig {
    pub fn schedule(&self, data_rho: f64) -> Result<SubsetSchedule> {
        match &self.ratios {
            Some(r) => SubsetSchedule::new(r.clone(), self.bootstraps),
            None => crate::data::make_schedule(data_rho, self.levels, self.bootstraps),
        }
    }
}

/// Runs one method end to end.
pub fn run_method(
    method: Method,
    theta0: &ModelWeights,
    data: &Dataset,
    val: Option<&Dataset>,
    cfg: &MethodConfig,
) -> Result<ModelWeights> {
    let t = &cfg.train;
    match method {
        Method::LtSoups | Method::LtSoupsStage1 => {
            let schedule = cfg.schedule(data.imbalance_ratio())?;
            if method == Method::LtSoupsStage1 {
                let mut art = RunArtifacts::default();
                return stage1(theta0, data, val, &schedule, &cfg.merge, t, &cfg.run, &mut art);
            }
            lt_soups(theta0, data, val, &schedule, &cfg.merge, t, &cfg.run).map(|(m, _)| m)
        }
        Method::FullFt => baseline_full_ft(theta0, data, val, t),
        Method::LinearProbe => baseline_linear_probe(theta0, data, val, t),
        Method::ModelSoups => baseline_model_soups(theta0, data, val, t, cfg.soups_count, &cfg.run),
        Method::SoupsRho => baseline_soups_rho(theta0, data, val, cfg.soups_rho, cfg.soups_count, t, &cfg.run),
        Method::Crt => baseline_crt(theta0, data, val, t),
        Method::Lora => baseline_lora(theta0, data, val, &cfg.lora, t),
    }
}
