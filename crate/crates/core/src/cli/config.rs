//! Flat `section.key = value` configuration.
//!
//! Values are resolved as defaults, then the config file, then the
//! `LTSOUPS_SEED` environment variable, then command-line overrides. Blank
//! lines and `#` comments are ignored; unknown keys are errors.

use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::grid::GridSpec;
use crate::data::{
    dual_axis_counts, exp_decay_counts, split_eval, Benchmark, ClassCounts, LongTailSpec, SyntheticSpec,
    DEFAULT_TAU,
};
use crate::error::{Error, Result};
use crate::eval::GroupThresholds;
use crate::nn::{init_pretrained, BackboneConfig, ModelWeights, TrainConfig, WarmupRule};
use crate::pipeline::{LoraConfig, Method, MethodConfig};
use crate::rng::derive_seed;

pub const SEED_ENV: &str = "LTSOUPS_SEED";

const MODEL_TAG: u64 = 0x4d4f_4445_4c;
const TRAIN_TAG: u64 = 0x5452_4149_4e;

/// Synthetic benchmark settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub classes: usize,
    pub n_max: usize,
    pub rho: f64,
    pub eta: Option<f64>,
    pub tau: usize,
    /// Smallest head count for dual-axis generation; defaults to `tau + 1`.
    pub head_min: Option<usize>,
    /// Largest tail count for dual-axis generation; defaults to `tau`.
    pub tail_max: Option<usize>,
    pub dim: usize,
    pub class_sep: f64,
    pub noise_sigma: f64,
    pub val_per_class: usize,
    pub test_per_class: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            classes: 20,
            n_max: 500,
            rho: 100.0,
            eta: None,
            tau: DEFAULT_TAU,
            head_min: None,
            tail_max: None,
            dim: 64,
            class_sep: SyntheticSpec::default().class_sep,
            noise_sigma: 0.28,
            val_per_class: 50,
            test_per_class: 200,
        }
    }
}

impl DataConfig {
    pub fn counts(&self) -> Result<ClassCounts> {
        match self.eta {
            None => exp_decay_counts(self.classes, self.n_max, self.rho),
            Some(eta) => {
                let spec = LongTailSpec {
                    tau: self.tau,
                    ..LongTailSpec::new(self.classes, self.n_max, self.rho).with_eta(eta)
                };
                dual_axis_counts(
                    &spec,
                    self.head_min.unwrap_or(self.tau + 1),
                    self.tail_max.unwrap_or(self.tau),
                )
            }
        }
    }

    pub fn synthetic(&self, seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            dim: self.dim,
            class_sep: self.class_sep,
            noise_sigma: self.noise_sigma,
            seed,
        }
    }

    pub fn benchmark(&self, seed: u64) -> Result<Benchmark> {
        let plan = split_eval(&self.counts()?, self.test_per_class, self.val_per_class, seed);
        Benchmark::generate(&self.synthetic(seed), &plan)
    }
}

/// Stand-in pretrained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub residual: bool,
    /// Noise added to the class means before they become prototypes.
    pub anchor_noise: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: vec![256],
            residual: true,
            anchor_noise: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn pretrained(&self, bench: &Benchmark, seed: u64) -> Result<ModelWeights> {
        let backbone = BackboneConfig {
            dim: bench.train.dim(),
            hidden: self.hidden.clone(),
            residual: self.residual,
        };
        init_pretrained(
            &backbone,
            &bench.means,
            bench.train.num_classes(),
            self.anchor_noise,
            derive_seed(seed, MODEL_TAG),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Config {
    /// Root seed; benchmark, model and training seeds derive from it.
    pub seed: u64,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub methods: MethodConfig,
    pub eval: GroupThresholds,
    pub grid: GridSpec,
}

/// Training defaults sized for the desk benchmark: a few thousand rows train
/// for only a few hundred steps, so smaller batches, a proportional warmup and
/// a larger step size than the large-scale recipe.
fn desk_train() -> TrainConfig {
    TrainConfig {
        lr_max: 2e-3,
        batch_size: 32,
        epochs: 10,
        warmup: WarmupRule::Fraction(0.1),
        seed: derive_seed(0, TRAIN_TAG),
        ..TrainConfig::default()
    }
}

impl Default for Config {
    fn default() -> Self {
        let mut methods = MethodConfig::default();
        methods.train = desk_train();
        methods.lora = LoraConfig { rank: 1, alpha: 1.0 };
        Self {
            seed: 0,
            data: DataConfig::default(),
            model: ModelConfig::default(),
            methods,
            eval: GroupThresholds::default(),
            grid: GridSpec::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> std::result::Result<T, String>
where
    T::Err: Display,
{
    value
        .parse::<T>()
        .map_err(|e| format!("bad value `{value}` for `{key}`: {e}"))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> std::result::Result<Vec<T>, String>
where
    T::Err: Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn parse_optional<T: FromStr>(key: &str, value: &str) -> std::result::Result<Option<T>, String>
where
    T::Err: Display,
{
    match value {
        "" | "none" => Ok(None),
        v => parse(key, v).map(Some),
    }
}

pub const KEYS: &[&str] = &[
    "run.seed",
    "run.workers",
    "run.skip_failed",
    "data.classes",
    "data.n_max",
    "data.rho",
    "data.eta",
    "data.tau",
    "data.head_min",
    "data.tail_max",
    "data.dim",
    "data.class_sep",
    "data.noise_sigma",
    "data.val_per_class",
    "data.test_per_class",
    "model.hidden",
    "model.residual",
    "model.anchor_noise",
    "train.lr_max",
    "train.weight_decay",
    "train.beta1",
    "train.beta2",
    "train.eps",
    "train.batch_size",
    "train.epochs",
    "train.warmup",
    "train.lr_floor_fraction",
    "train.loss",
    "train.ema_mu",
    "schedule.levels",
    "schedule.bootstraps",
    "schedule.ratios",
    "merge.lambda",
    "merge.include_pretrained",
    "soups.count",
    "soups.rho",
    "lora.rank",
    "lora.alpha",
    "eval.many_min",
    "eval.few_max",
    "grid.rho",
    "grid.eta",
    "grid.methods",
    "grid.repeats",
];

impl Config {
    /// Defaults, then `path`, then the seed environment variable, then
    /// `overrides` (`key=value` pairs), then validation.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut cfg = Config::default();
        if let Some(p) = path {
            cfg.apply_text(&std::fs::read_to_string(p)?)?;
        }
        if let Ok(seed) = std::env::var(SEED_ENV) {
            cfg.set("run.seed", seed.trim())
                .map_err(|msg| Error::validation(SEED_ENV, msg))?;
        }
        for (k, v) in overrides {
            cfg.set(k, v).map_err(|msg| Error::validation(k.clone(), msg))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses config text without validating.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Config::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                msg: format!("expected `section.key = value`, got `{line}`"),
            })?;
            self.set(key.trim(), value.trim())
                .map_err(|msg| Error::Parse { line: i + 1, msg })?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let m = &mut self.methods;
        let t = &mut m.train;
        let d = &mut self.data;
        match key {
            "run.seed" => {
                self.seed = parse(key, value)?;
                t.seed = derive_seed(self.seed, TRAIN_TAG);
            }
            "run.workers" => m.run.workers = parse(key, value)?,
            "run.skip_failed" => m.run.skip_failed = parse(key, value)?,
            "data.classes" => d.classes = parse(key, value)?,
            "data.n_max" => d.n_max = parse(key, value)?,
            "data.rho" => d.rho = parse(key, value)?,
            "data.eta" => d.eta = parse_optional(key, value)?,
            "data.tau" => d.tau = parse(key, value)?,
            "data.head_min" => d.head_min = parse_optional(key, value)?,
            "data.tail_max" => d.tail_max = parse_optional(key, value)?,
            "data.dim" => d.dim = parse(key, value)?,
            "data.class_sep" => d.class_sep = parse(key, value)?,
            "data.noise_sigma" => d.noise_sigma = parse(key, value)?,
            "data.val_per_class" => d.val_per_class = parse(key, value)?,
            "data.test_per_class" => d.test_per_class = parse(key, value)?,
            "model.hidden" => self.model.hidden = parse_list(key, value)?,
            "model.residual" => self.model.residual = parse(key, value)?,
            "model.anchor_noise" => self.model.anchor_noise = parse(key, value)?,
            "train.lr_max" => t.lr_max = parse(key, value)?,
            "train.weight_decay" => t.weight_decay = parse(key, value)?,
            "train.beta1" => t.betas.0 = parse(key, value)?,
            "train.beta2" => t.betas.1 = parse(key, value)?,
            "train.eps" => t.eps = parse(key, value)?,
            "train.batch_size" => t.batch_size = parse(key, value)?,
            "train.epochs" => t.epochs = parse(key, value)?,
            "train.warmup" => t.warmup = parse(key, value)?,
            "train.lr_floor_fraction" => t.lr_floor_fraction = parse(key, value)?,
            "train.loss" => t.loss = parse(key, value)?,
            "train.ema_mu" => t.ema_mu = parse(key, value)?,
            "schedule.levels" => m.levels = parse(key, value)?,
            "schedule.bootstraps" => m.bootstraps = parse(key, value)?,
            "schedule.ratios" => {
                let r: Vec<f64> = parse_list(key, value)?;
                m.ratios = (!r.is_empty()).then_some(r);
            }
            "merge.lambda" => m.merge.lambda = parse(key, value)?,
            "merge.include_pretrained" => m.merge.include_pretrained_as_theta0 = parse(key, value)?,
            "soups.count" => m.soups_count = parse(key, value)?,
            "soups.rho" => m.soups_rho = parse(key, value)?,
            "lora.rank" => m.lora.rank = parse(key, value)?,
            "lora.alpha" => m.lora.alpha = parse(key, value)?,
            "eval.many_min" => self.eval.many_min = parse(key, value)?,
            "eval.few_max" => self.eval.few_max = parse(key, value)?,
            "grid.rho" => self.grid.rho_values = parse_list(key, value)?,
            "grid.eta" => self.grid.eta_values = parse_list(key, value)?,
            "grid.methods" => {
                self.grid.methods = parse_list::<Method>(key, value)?;
            }
            "grid.repeats" => self.grid.repeats = parse(key, value)?,
            other => return Err(format!("unknown key `{other}`")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        if d.classes < 2 {
            return Err(Error::validation("data.classes", "must be >= 2"));
        }
        if !(d.rho >= 1.0) || !d.rho.is_finite() {
            return Err(Error::validation("data.rho", "must be >= 1"));
        }
        if (d.n_max as f64) < d.rho {
            return Err(Error::validation("data.n_max", "must be >= data.rho"));
        }
        if let Some(eta) = d.eta {
            if !(eta > 0.0) || !eta.is_finite() {
                return Err(Error::validation("data.eta", "must be > 0"));
            }
        }
        if d.val_per_class == 0 {
            return Err(Error::validation("data.val_per_class", "must be >= 1"));
        }
        if d.test_per_class == 0 {
            return Err(Error::validation("data.test_per_class", "must be >= 1"));
        }
        self.data.synthetic(self.seed).validate()?;
        if self.model.hidden.contains(&0) {
            return Err(Error::validation("model.hidden", "widths must be positive"));
        }
        if !(self.model.anchor_noise >= 0.0) {
            return Err(Error::validation("model.anchor_noise", "must be >= 0"));
        }
        let m = &self.methods;
        m.train.validate()?;
        m.merge.validate()?;
        if m.run.workers == 0 {
            return Err(Error::validation("run.workers", "must be >= 1"));
        }
        if m.bootstraps == 0 {
            return Err(Error::validation("schedule.bootstraps", "must be >= 1"));
        }
        if m.ratios.is_none() && m.levels == 0 {
            return Err(Error::validation("schedule.levels", "must be >= 1"));
        }
        if m.soups_count == 0 {
            return Err(Error::validation("soups.count", "must be >= 1"));
        }
        if !(m.soups_rho >= 1.0) {
            return Err(Error::validation("soups.rho", "must be >= 1"));
        }
        if m.lora.rank == 0 {
            return Err(Error::validation("lora.rank", "must be >= 1"));
        }
        if !(m.lora.alpha > 0.0) {
            return Err(Error::validation("lora.alpha", "must be > 0"));
        }
        self.eval.validate()?;
        self.grid.validate()?;
        Ok(())
    }

    /// The configuration with the data axes set to one grid cell.
    pub fn for_cell(&self, rho: f64, eta: f64, seed: u64) -> Config {
        let mut c = self.clone();
        c.data.rho = rho;
        c.data.eta = Some(eta);
        c.seed = seed;
        c.methods.train.seed = derive_seed(seed, TRAIN_TAG);
        c
    }
}
