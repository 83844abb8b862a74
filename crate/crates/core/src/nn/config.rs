use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossKind;

/// How many warmup steps a run gets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum WarmupRule {
    /// `max(100, 0.01 * total_steps)`.
    Recipe,
    Steps(usize),
    Fraction(f64),
}

impl WarmupRule {
    pub fn steps(self, total_steps: usize) -> usize {
        match self {
            WarmupRule::Recipe => 100.max((0.01 * total_steps as f64).floor() as usize),
            WarmupRule::Steps(n) => n,
            WarmupRule::Fraction(f) => (f * total_steps as f64).round() as usize,
        }
    }
}

impl std::str::FromStr for WarmupRule {
    type Err = String;

    /// `recipe`, an integer step count, or a fraction such as `0.05`.
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("recipe") {
            return Ok(WarmupRule::Recipe);
        }
        if let Ok(n) = s.parse::<usize>() {
            return Ok(WarmupRule::Steps(n));
        }
        match s.parse::<f64>() {
            Ok(f) if (0.0..=1.0).contains(&f) => Ok(WarmupRule::Fraction(f)),
            _ => Err(format!("bad warmup `{s}` (expected recipe, a step count or a fraction)")),
        }
    }
}

impl std::fmt::Display for WarmupRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            WarmupRule::Recipe => write!(f, "recipe"),
            WarmupRule::Steps(n) => write!(f, "{n}"),
            WarmupRule::Fraction(x) => write!(f, "{x}"),
        }
    }
}

/// Hyperparameters of one fine-tuning job.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr_max: f64,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup: WarmupRule,
    pub lr_floor_fraction: f64,
    pub loss: LossKind,
    pub ema_mu: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_max: 3e-4,
            weight_decay: 0.01,
            betas: (0.9, 0.999),
            eps: 1e-8,
            batch_size: 128,
            epochs: 10,
            warmup: WarmupRule::Recipe,
            lr_floor_fraction: 0.1,
            loss: LossKind::La,
            ema_mu: 0.99,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_max > 0.0) || !self.lr_max.is_finite() {
            return Err(Error::validation("train.lr_max", "must be > 0"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::validation("train.weight_decay", "must be >= 0"));
        }
        let (b1, b2) = self.betas;
        if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) {
            return Err(Error::validation("train.betas", "must lie in [0, 1)"));
        }
        if self.batch_size == 0 {
            return Err(Error::validation("train.batch_size", "must be >= 1"));
        }
        if !(self.lr_floor_fraction > 0.0 && self.lr_floor_fraction <= 1.0) {
            return Err(Error::validation("train.lr_floor_fraction", "must lie in (0, 1]"));
        }
        if !(self.ema_mu > 0.0 && self.ema_mu <= 1.0) {
            return Err(Error::validation("train.ema_mu", "must lie in (0, 1]"));
        }
        Ok(())
    }

    pub fn with_loss(&self, loss: LossKind) -> Self {
        Self {
            loss,
            ..self.clone()
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_warmup() {
        assert_eq!("recipe".parse::<WarmupRule>().unwrap(), WarmupRule::Recipe);
        assert_eq!("25".parse::<WarmupRule>().unwrap(), WarmupRule::Steps(25));
        assert_eq!("0.05".parse::<WarmupRule>().unwrap(), WarmupRule::Fraction(0.05));
        assert!("-1.5".parse::<WarmupRule>().is_err());
    }

    #[test]
    fn validation_names_fields() {
        let bad = TrainConfig { ema_mu: 0.0, ..TrainConfig::default() };
        match bad.validate() {
            Err(Error::Validation { field, .. }) => assert_eq!(field, "train.ema_mu"),
            other => panic!("{other:?}"),
        }
        let bad = TrainConfig { lr_floor_fraction: 1.5, ..TrainConfig::default() };
        assert!(bad.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }
}
