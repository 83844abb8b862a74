//! Accuracy and calibration metrics.
//!
//! Accuracies are unweighted means of per-class accuracy on a class-balanced
//! evaluation set. Groups are decided from TRAINING counts: many-shot has more
//! than `many_min` samples, few-shot fewer than `few_max`, medium-shot the
//! rest. Head is many-shot and tail is everything else.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::losses::{log_softmax_into, softmax};
use crate::nn::{self, weight_distance, ModelWeights};

pub const DEFAULT_ECE_BINS: usize = 15;
/// Probabilities below this are clamped before taking logs.
pub const NLL_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupThresholds {
    /// Many-shot classes have strictly more training samples than this.
    pub many_min: usize,
    /// Few-shot classes have strictly fewer training samples than this.
    pub few_max: usize,
}

impl Default for GroupThresholds {
    fn default() -> Self {
        Self {
            many_min: 100,
            few_max: 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shot {
    Many,
    Medium,
    Few,
}

impl GroupThresholds {
    pub fn validate(&self) -> Result<()> {
        if self.many_min < self.few_max {
            return Err(Error::validation("eval.many_min", "must be >= eval.few_max"));
        }
        Ok(())
    }

    pub fn shot(&self, train_count: usize) -> Shot {
        if train_count > self.many_min {
            Shot::Many
        } else if train_count < self.few_max {
            Shot::Few
        } else {
            Shot::Medium
        }
    }

    pub fn is_head(&self, train_count: usize) -> bool {
        train_count > self.many_min
    }
}

pub fn per_class_accuracy(preds: &[usize], labels: &[usize], num_classes: usize) -> Result<Vec<f64>> {
    if preds.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let mut hits = vec![0usize; num_classes];
    let mut totals = vec![0usize; num_classes];
    for (&p, &y) in preds.iter().zip(labels) {
        if y >= num_classes {
            return Err(Error::ShapeMismatch(format!("label {y} out of range")));
        }
        totals[y] += 1;
        hits[y] += usize::from(p == y);
    }
    if let Some(c) = totals.iter().position(|&t| t == 0) {
        return Err(Error::MissingClass(c));
    }
    Ok(hits.iter().zip(&totals).map(|(&h, &t)| h as f64 / t as f64).collect())
}

pub fn balanced_accuracy(preds: &[usize], labels: &[usize], num_classes: usize) -> Result<f64> {
    let acc = per_class_accuracy(preds, labels, num_classes)?;
    Ok(acc.iter().sum::<f64>() / num_classes as f64)
}

/// Mean per-class accuracy within each group; `None` marks an empty group.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GroupAccuracies {
    pub many: Option<f64>,
    pub medium: Option<f64>,
    pub few: Option<f64>,
    pub head: Option<f64>,
    pub tail: Option<f64>,
}

fn mean_of(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

pub fn group_accuracies(
    preds: &[usize],
    labels: &[usize],
    train_sizes: &[usize],
    thresholds: &GroupThresholds,
) -> Result<GroupAccuracies> {
    let acc = per_class_accuracy(preds, labels, train_sizes.len())?;
    Ok(group_means(&acc, train_sizes, thresholds))
}

fn group_means(acc: &[f64], train_sizes: &[usize], t: &GroupThresholds) -> GroupAccuracies {
    let pick = |f: &dyn Fn(usize) -> bool| mean_of(acc.iter().zip(train_sizes).filter(|(_, &n)| f(n)).map(|(&a, _)| a));
    GroupAccuracies {
        many: pick(&|n| t.shot(n) == Shot::Many),
        medium: pick(&|n| t.shot(n) == Shot::Medium),
        few: pick(&|n| t.shot(n) == Shot::Few),
        head: pick(&|n| t.is_head(n)),
        tail: pick(&|n| !t.is_head(n)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemperatureFit {
    pub temperature: f64,
    /// The optimum sits on an edge of the search interval.
    pub at_bound: bool,
}

pub const TEMPERATURE_BOUNDS: (f64, f64) = (0.05, 20.0);

fn nll_at_temperature(logits: &[f64], labels: &[usize], k: usize, t: f64) -> f64 {
    let mut scaled = vec![0.0; k];
    let mut logp = vec![0.0; k];
    let mut total = 0.0;
    for (row, &y) in logits.chunks(k).zip(labels) {
        scaled.iter_mut().zip(row).for_each(|(s, l)| *s = l / t);
        log_softmax_into(&scaled, &mut logp);
        total -= logp[y];
    }
    total / labels.len().max(1) as f64
}

/// Temperature minimising validation NLL of `softmax(logits / T)`, found by
/// golden-section search over `log T` in `[log 0.05, log 20]`.
pub fn fit_temperature(logits: &[f64], labels: &[usize], num_classes: usize) -> Result<TemperatureFit> {
    if labels.is_empty() {
        return Err(Error::Empty("validation labels"));
    }
    if logits.len() != labels.len() * num_classes {
        return Err(Error::ShapeMismatch("logits do not match labels".into()));
    }
    let f = |log_t: f64| nll_at_temperature(logits, labels, num_classes, log_t.exp());
    let (lo0, hi0) = (TEMPERATURE_BOUNDS.0.ln(), TEMPERATURE_BOUNDS.1.ln());
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (lo0, hi0);
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > 1e-4 {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        }
    }
    let log_t = 0.5 * (lo + hi);
    Ok(TemperatureFit {
        temperature: log_t.exp(),
        at_bound: log_t - lo0 < 1e-3 || hi0 - log_t < 1e-3,
    })
}

/// Softmax of `logits / temperature`.
pub fn probabilities(logits: &[f64], num_classes: usize, temperature: f64) -> Vec<f64> {
    let scaled: Vec<f64> = logits.iter().map(|l| l / temperature).collect();
    softmax(&scaled, num_classes)
}

fn argmax(row: &[f64]) -> (usize, f64) {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (j, &v)| if v > best.1 { (j, v) } else { best })
}

/// Equal-width confidence bins over the top-class probability.
pub fn ece(probs: &[f64], labels: &[usize], num_classes: usize, bins: usize) -> f64 {
    let mut conf = vec![0.0; bins];
    let mut hits = vec![0.0; bins];
    let mut count = vec![0usize; bins];
    for (row, &y) in probs.chunks(num_classes).zip(labels) {
        let (pred, p) = argmax(row);
        let b = ((p * bins as f64) as usize).min(bins - 1);
        conf[b] += p;
        hits[b] += f64::from(u8::from(pred == y));
        count[b] += 1;
    }
    let n = labels.len() as f64;
    (0..bins)
        .filter(|&b| count[b] > 0)
        .map(|b| (count[b] as f64 / n) * (hits[b] / count[b] as f64 - conf[b] / count[b] as f64).abs())
        .sum()
}

/// Squared distance to the one-hot label, summed over classes and averaged
/// over samples.
pub fn brier(probs: &[f64], labels: &[usize], num_classes: usize) -> f64 {
    let total: f64 = probs
        .chunks(num_classes)
        .zip(labels)
        .map(|(row, &y)| {
            row.iter()
                .enumerate()
                .map(|(j, &p)| {
                    let t = if j == y { 1.0 } else { 0.0 };
                    (p - t) * (p - t)
                })
                .sum::<f64>()
        })
        .sum();
    total / labels.len().max(1) as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Nll {
    pub value: f64,
    /// Samples whose label probability was below [`NLL_FLOOR`].
    pub clamped: usize,
}

pub fn nll(probs: &[f64], labels: &[usize], num_classes: usize) -> Nll {
    let mut clamped = 0;
    let total: f64 = probs
        .chunks(num_classes)
        .zip(labels)
        .map(|(row, &y)| {
            let p = row[y];
            if p < NLL_FLOOR {
                clamped += 1;
            }
            -p.max(NLL_FLOOR).ln()
        })
        .sum();
    Nll {
        value: total / labels.len().max(1) as f64,
        clamped,
    }
}

/// Brier and NLL restricted to samples of one class group.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GroupCalibration {
    pub brier: Option<f64>,
    pub nll: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub bal_acc: f64,
    pub groups: GroupAccuracies,
    pub ece: f64,
    pub brier: f64,
    pub nll: f64,
    pub nll_clamped: usize,
    pub temperature: f64,
    pub temperature_at_bound: bool,
    pub head_calibration: GroupCalibration,
    pub tail_calibration: GroupCalibration,
    pub weight_change: f64,
}

fn restricted(probs: &[f64], labels: &[usize], k: usize, keep: impl Fn(usize) -> bool) -> GroupCalibration {
    let mut p = Vec::new();
    let mut y = Vec::new();
    for (row, &label) in probs.chunks(k).zip(labels) {
        if keep(label) {
            p.extend_from_slice(row);
            y.push(label);
        }
    }
    if y.is_empty() {
        return GroupCalibration::default();
    }
    GroupCalibration {
        brier: Some(brier(&p, &y, k)),
        nll: Some(nll(&p, &y, k).value),
    }
}

/// Evaluates a model on a balanced test split. Calibration metrics use a
/// temperature fitted on `val` (or `T = 1` without one); the weight change is
/// measured against `reference` when given.
pub fn evaluate(
    model: &ModelWeights,
    test: &Dataset,
    val: Option<&Dataset>,
    train_sizes: &[usize],
    thresholds: &GroupThresholds,
    reference: Option<&ModelWeights>,
) -> Result<MetricsReport> {
    let k = model.layout().num_classes();
    if train_sizes.len() != k || test.num_classes() != k {
        return Err(Error::ShapeMismatch("class count differs between model and data".into()));
    }
    let logits = nn::forward(model, test.features())?;
    let preds: Vec<usize> = logits.chunks(k).map(|r| argmax(r).0).collect();
    let acc = per_class_accuracy(&preds, test.labels(), k)?;
    let bal_acc = acc.iter().sum::<f64>() / k as f64;
    let groups = group_means(&acc, train_sizes, thresholds);

    let fit = match val {
        Some(v) => fit_temperature(&nn::forward(model, v.features())?, v.labels(), k)?,
        None => TemperatureFit {
            temperature: 1.0,
            at_bound: false,
        },
    };
    let probs = probabilities(&logits, k, fit.temperature);
    let labels = test.labels();
    let n = nll(&probs, labels, k);
    let weight_change = match reference {
        Some(r) => weight_distance(model, r)?,
        None => 0.0,
    };
    Ok(MetricsReport {
        bal_acc,
        groups,
        ece: ece(&probs, labels, k, DEFAULT_ECE_BINS),
        brier: brier(&probs, labels, k),
        nll: n.value,
        nll_clamped: n.clamped,
        temperature: fit.temperature,
        temperature_at_bound: fit.at_bound,
        head_calibration: restricted(&probs, labels, k, |y| thresholds.is_head(train_sizes[y])),
        tail_calibration: restricted(&probs, labels, k, |y| !thresholds.is_head(train_sizes[y])),
        weight_change,
    })
}
