//! Long-tailed label distributions and datasets.
//!
//! Class counts are always stored most-frequent first. The imbalance ratio is
//! `max / min` (so it is at least one) and the head-tail ratio counts classes
//! strictly above a sample threshold against those at or below it.

mod dataset;
pub mod ltds;
mod synth;

pub use dataset::{bootstrap_resample, subsample_to_ratio, Dataset};
pub use synth::{split_eval, synth_gaussians, Benchmark, SplitPlan, SyntheticSpec};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default head/tail sample threshold.
pub const DEFAULT_TAU: usize = 100;

/// Rounds half away from zero for the non-negative values used here, then
/// clamps to at least one sample.
pub(crate) fn round_count(x: f64) -> usize {
    ((x + 0.5).floor() as usize).max(1)
}

/// Per-class sample counts, sorted non-increasing, each at least one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts(Vec<usize>);

impl ClassCounts {
    pub fn new(counts: Vec<usize>) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::Empty("class counts"));
        }
        if let Some(j) = counts.iter().position(|&c| c == 0) {
            return Err(Error::InvalidSpec(format!("class {j} has zero samples")));
        }
        if counts.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::InvalidSpec(
                "class counts must be sorted non-increasing".into(),
            ));
        }
        Ok(Self(counts))
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn num_classes(&self) -> usize {
        self.0.len()
    }

    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }

    pub fn max(&self) -> usize {
        self.0[0]
    }

    pub fn min(&self) -> usize {
        self.0[self.0.len() - 1]
    }

    pub fn imbalance_ratio(&self) -> f64 {
        imbalance_ratio(self)
    }

    pub fn head_tail_ratio(&self, tau: usize) -> Result<f64> {
        head_tail_ratio(self, tau)
    }

    /// Number of classes with more than `tau` samples.
    pub fn num_head(&self, tau: usize) -> usize {
        self.0.iter().filter(|&&c| c > tau).count()
    }

    pub fn into_inner(self) -> Vec<usize> {
        self.0
    }
}

/// Target shape of a long-tailed benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongTailSpec {
    pub num_classes: usize,
    pub n_max: usize,
    pub rho: f64,
    pub eta: Option<f64>,
    pub tau: usize,
}

impl LongTailSpec {
    pub fn new(num_classes: usize, n_max: usize, rho: f64) -> Self {
        Self {
            num_classes,
            n_max,
            rho,
            eta: None,
            tau: DEFAULT_TAU,
        }
    }

    pub fn with_eta(mut self, eta: f64) -> Self {
        self.eta = Some(eta);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::InvalidSpec("need at least two classes".into()));
        }
        if !(self.rho >= 1.0) || !self.rho.is_finite() {
            return Err(Error::InvalidSpec(format!(
                "imbalance ratio must be >= 1, got {}",
                self.rho
            )));
        }
        if (self.n_max as f64) < self.rho {
            return Err(Error::InvalidSpec(format!(
                "n_max = {} is smaller than rho = {}, tail would be empty",
                self.n_max, self.rho
            )));
        }
        if let Some(eta) = self.eta {
            if !(eta > 0.0) || !eta.is_finite() {
                return Err(Error::InvalidSpec(format!("eta must be > 0, got {eta}")));
            }
        }
        Ok(())
    }

    /// Smallest class size implied by `n_max` and `rho`.
    pub fn n_min(&self) -> usize {
        round_count(self.n_max as f64 / self.rho)
    }
}

/// Geometric interpolation from `start` down to `end` over `len` classes.
fn decay_between(start: f64, end: f64, len: usize) -> Vec<usize> {
    if len == 1 {
        return vec![round_count(start)];
    }
    let ratio = end / start;
    (0..len)
        .map(|j| round_count(start * ratio.powf(j as f64 / (len - 1) as f64)))
        .collect()
}

/// Exponentially decaying counts from `n_max` down to `n_max / rho`.
pub fn exp_decay_counts(num_classes: usize, n_max: usize, rho: f64) -> Result<ClassCounts> {
    LongTailSpec::new(num_classes, n_max, rho).validate()?;
    let counts = decay_between(n_max as f64, n_max as f64 / rho, num_classes);
    ClassCounts::new(counts)
}

/// Splits the classes into `H = round(K * eta / (1 + eta))` head classes and
/// `K - H` tail classes, each group with its own exponential decay: head from
/// `n_max` to `head_min`, tail from `tail_max` to `n_max / rho`.
pub fn dual_axis_counts(spec: &LongTailSpec, head_min: usize, tail_max: usize) -> Result<ClassCounts> {
    spec.validate()?;
    let eta = spec
        .eta
        .ok_or_else(|| Error::InvalidSpec("dual-axis generation needs eta".into()))?;
    let k = spec.num_classes;
    let head = round_count_allow_zero(k as f64 * eta / (1.0 + eta)).min(k);
    let tail = k - head;
    if head == 0 || tail == 0 {
        return Err(Error::DegenerateSplit { head, tail });
    }
    let tail_min = spec.n_max as f64 / spec.rho;
    if head_min > spec.n_max {
        return Err(Error::InvalidSpec(format!(
            "head_min = {head_min} exceeds n_max = {}",
            spec.n_max
        )));
    }
    if head_min <= tail_max {
        return Err(Error::InvalidSpec(format!(
            "head_min = {head_min} must exceed tail_max = {tail_max}"
        )));
    }
    if (tail_max as f64) < tail_min {
        return Err(Error::InvalidSpec(format!(
            "tail_max = {tail_max} is below n_max / rho = {tail_min}"
        )));
    }
    let mut counts = decay_between(spec.n_max as f64, head_min as f64, head);
    counts.extend(decay_between(tail_max as f64, tail_min, tail));
    ClassCounts::new(counts)
}

fn round_count_allow_zero(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

pub fn imbalance_ratio(counts: &ClassCounts) -> f64 {
    counts.max() as f64 / counts.min() as f64
}

/// `|{c : n_c > tau}| / |{c : n_c <= tau}|`.
pub fn head_tail_ratio(counts: &ClassCounts, tau: usize) -> Result<f64> {
    let head = counts.num_head(tau);
    let tail = counts.num_classes() - head;
    if head == 0 || tail == 0 {
        return Err(Error::DegenerateSplit { head, tail });
    }
    Ok(head as f64 / tail as f64)
}

/// Imbalance ratios of the progressively subsampled training subsets, plus the
/// number of bootstrap replicas trained per ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetSchedule {
    ratios: Vec<f64>,
    bootstraps: usize,
}

impl SubsetSchedule {
    /// Accepts the ratios in any order; they must be distinct and `>= 1`.
    pub fn new(ratios: Vec<f64>, bootstraps: usize) -> Result<Self> {
        if ratios.is_empty() {
            return Err(Error::Empty("schedule ratios"));
        }
        if bootstraps == 0 {
            return Err(Error::InvalidSpec("need at least one bootstrap per level".into()));
        }
        if ratios.iter().any(|r| !(*r >= 1.0) || !r.is_finite()) {
            return Err(Error::InvalidSpec("schedule ratios must be finite and >= 1".into()));
        }
        let mut sorted = ratios.clone();
        sorted.sort_by(f64::total_cmp);
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidSpec("schedule ratios must be distinct".into()));
        }
        Ok(Self { ratios, bootstraps })
    }

    pub fn ratios(&self) -> &[f64] {
        &self.ratios
    }

    pub fn levels(&self) -> usize {
        self.ratios.len()
    }

    pub fn bootstraps(&self) -> usize {
        self.bootstraps
    }
}

/// `{2^1, ..., 2^levels}` with `bootstraps` replicas per level.
pub fn make_schedule(rho: f64, levels: usize, bootstraps: usize) -> Result<SubsetSchedule> {
    if levels == 0 {
        return Err(Error::InvalidSpec("need at least one level".into()));
    }
    if !(rho >= 1.0) {
        return Err(Error::InvalidSpec(format!("rho must be >= 1, got {rho}")));
    }
    let max_levels = rho.log2().ceil() as usize;
    if levels > max_levels {
        return Err(Error::ScheduleExceedsData { levels, rho });
    }
    let ratios = (1..=levels).map(|i| 2f64.powi(i as i32)).collect();
    SubsetSchedule::new(ratios, bootstraps)
}
