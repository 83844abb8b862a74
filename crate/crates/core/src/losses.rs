//! Classification objectives and class-balanced sampling.
//!
//! Logit adjustment adds `log pi_y` to every logit before the softmax
//! cross-entropy, with natural log and unit scale. Class-balanced sampling is
//! a sampler, not a reweighting of the loss: it draws each class with equal
//! probability in expectation.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::data::ClassCounts;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Class prior probabilities, strictly positive and summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassPriors(Vec<f64>);

impl ClassPriors {
    pub fn new(pi: Vec<f64>) -> Result<Self> {
        if pi.is_empty() {
            return Err(Error::Empty("class priors"));
        }
        if pi.iter().any(|&p| !(p > 0.0) || !p.is_finite()) {
            return Err(Error::InvalidSpec("class priors must be strictly positive".into()));
        }
        let total: f64 = pi.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidSpec(format!("class priors sum to {total}, not 1")));
        }
        Ok(Self(pi))
    }

    pub fn uniform(num_classes: usize) -> Self {
        Self(vec![1.0 / num_classes as f64; num_classes])
    }

    /// Empirical frequencies of the given class sizes.
    pub fn from_sizes(sizes: &[usize]) -> Result<Self> {
        let total: usize = sizes.iter().sum();
        if sizes.iter().any(|&n| n == 0) {
            return Err(Error::InvalidSpec(
                "every class needs at least one sample to estimate its prior".into(),
            ));
        }
        Self::new(sizes.iter().map(|&n| n as f64 / total as f64).collect())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn num_classes(&self) -> usize {
        self.0.len()
    }

    /// `log pi` shifted so the largest entry is zero. Softmax is invariant to
    /// the shift, and uniform priors then give exactly zero offsets.
    fn log_offsets(&self) -> Vec<f64> {
        let logs: Vec<f64> = self.0.iter().map(|p| p.ln()).collect();
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        logs.iter().map(|l| l - max).collect()
    }
}

pub fn class_priors(counts: &ClassCounts) -> ClassPriors {
    ClassPriors::from_sizes(counts.as_slice()).expect("class counts are positive")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// Plain softmax cross-entropy with instance-balanced batches.
    Ce,
    /// Logit-adjusted cross-entropy.
    La,
    /// Cross-entropy with class-balanced batches.
    Cb,
}

impl LossKind {
    pub fn tag(self) -> u8 {
        match self {
            LossKind::Ce => 0,
            LossKind::La => 1,
            LossKind::Cb => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(LossKind::Ce),
            1 => Some(LossKind::La),
            2 => Some(LossKind::Cb),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Ce => "ce",
            LossKind::La => "la",
            LossKind::Cb => "cb",
        }
    }

    pub fn class_balanced_batches(self) -> bool {
        self == LossKind::Cb
    }
}

impl std::str::FromStr for LossKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "ce" => Ok(LossKind::Ce),
            "la" => Ok(LossKind::La),
            "cb" => Ok(LossKind::Cb),
            other => Err(format!("unknown loss `{other}` (expected ce, la or cb)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossSpec {
    pub kind: LossKind,
    pub priors: Option<ClassPriors>,
}

impl LossSpec {
    pub fn new(kind: LossKind, priors: Option<ClassPriors>) -> Result<Self> {
        if kind == LossKind::La && priors.is_none() {
            return Err(Error::InvalidSpec("logit adjustment needs class priors".into()));
        }
        Ok(Self { kind, priors })
    }

    pub fn ce() -> Self {
        Self {
            kind: LossKind::Ce,
            priors: None,
        }
    }

    pub fn la(priors: ClassPriors) -> Self {
        Self {
            kind: LossKind::La,
            priors: Some(priors),
        }
    }

    /// Additive logit offsets applied before the softmax, if any.
    pub fn offsets(&self) -> Option<Vec<f64>> {
        match (self.kind, &self.priors) {
            (LossKind::La, Some(p)) => Some(p.log_offsets()),
            _ => None,
        }
    }
}

/// Numerically stable `log softmax(row)`, written into `out`.
pub fn log_softmax_into(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
    for (o, &v) in out.iter_mut().zip(row) {
        *o = v - lse;
    }
}

pub fn softmax(logits: &[f64], num_classes: usize) -> Vec<f64> {
    let mut out = vec![0.0; logits.len()];
    for (row, o) in logits.chunks(num_classes).zip(out.chunks_mut(num_classes)) {
        log_softmax_into(row, o);
        o.iter_mut().for_each(|v| *v = v.exp());
    }
    out
}

/// Mean loss and its gradient with respect to the logits (row-major
/// `batch x K`). The gradient already carries the `1 / batch` factor.
pub fn loss_with_grad(logits: &[f64], num_classes: usize, labels: &[usize], spec: &LossSpec) -> (f64, Vec<f64>) {
    let k = num_classes;
    let b = labels.len();
    assert_eq!(logits.len(), b * k, "logit buffer does not match batch");
    let offsets = spec.offsets();
    let mut shifted = vec![0.0; k];
    let mut logp = vec![0.0; k];
    let mut grad = vec![0.0; b * k];
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let row = &logits[i * k..(i + 1) * k];
        match &offsets {
            Some(off) => shifted.iter_mut().zip(row.iter().zip(off)).for_each(|(s, (l, o))| *s = l + o),
            None => shifted.copy_from_slice(row),
        }
        log_softmax_into(&shifted, &mut logp);
        total -= logp[y];
        let g = &mut grad[i * k..(i + 1) * k];
        for (gc, lp) in g.iter_mut().zip(&logp) {
            *gc = lp.exp() / b as f64;
        }
        g[y] -= 1.0 / b as f64;
    }
    (total / b as f64, grad)
}

pub fn ce_loss(logits: &[f64], num_classes: usize, labels: &[usize]) -> f64 {
    loss_with_grad(logits, num_classes, labels, &LossSpec::ce()).0
}

/// `-log softmax(logits + log pi)[y]`, averaged over the batch.
pub fn la_loss(logits: &[f64], num_classes: usize, labels: &[usize], priors: &ClassPriors) -> f64 {
    loss_with_grad(logits, num_classes, labels, &LossSpec::la(priors.clone())).0
}

/// Per-sample draw weight for a member of each class, `1 / (K * n_j)`, so
/// that every class carries the same total mass.
pub fn cb_sampling_weights(counts: &ClassCounts) -> Vec<f64> {
    class_balanced_weights(counts.as_slice())
}

fn class_balanced_weights(sizes: &[usize]) -> Vec<f64> {
    let present = sizes.iter().filter(|&&n| n > 0).count() as f64;
    sizes
        .iter()
        .map(|&n| if n == 0 { 0.0 } else { 1.0 / (present * n as f64) })
        .collect()
}

/// Draws row indices with probability proportional to `1 / n_{label}`.
pub struct ClassBalancedSampler {
    dist: WeightedIndex<f64>,
}

impl ClassBalancedSampler {
    pub fn new(labels: &[usize], sizes: &[usize]) -> Result<Self> {
        let per_class = class_balanced_weights(sizes);
        let weights: Vec<f64> = labels.iter().map(|&y| per_class[y]).collect();
        let dist = WeightedIndex::new(&weights).map_err(|e| Error::InvalidSpec(e.to_string()))?;
        Ok(Self { dist })
    }

    pub fn draw(&self, rng: &mut Rng, count: usize) -> Vec<usize> {
        (0..count).map(|_| self.dist.sample(rng)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;

    #[test]
    fn priors_examples() {
        let p = class_priors(&ClassCounts::new(vec![1, 1]).unwrap());
        assert_eq!(p.as_slice(), &[0.5, 0.5]);
        let p = class_priors(&ClassCounts::new(vec![90, 10]).unwrap());
        assert_eq!(p.as_slice(), &[0.9, 0.1]);
        assert!(ClassPriors::new(vec![0.5, 0.6]).is_err());
        assert!(ClassPriors::new(vec![1.0, 0.0]).is_err());
        assert!(LossSpec::new(LossKind::La, None).is_err());
    }

    #[test]
    fn la_hand_value() {
        let pi = ClassPriors::new(vec![0.9, 0.1]).unwrap();
        let v = la_loss(&[0.0, 0.0], 2, &[1], &pi);
        // softmax(log 0.9, log 0.1)[1] = 0.1
        assert!((v - 2.302585092994046).abs() < 1e-12, "{v}");
    }

    #[test]
    fn la_shift_invariant() {
        let pi = ClassPriors::new(vec![0.7, 0.2, 0.1]).unwrap();
        let logits = [0.3, -1.2, 2.0, 0.5, 0.5, -0.1];
        let shifted: Vec<f64> = logits.iter().map(|v| v + 7.25).collect();
        let a = la_loss(&logits, 3, &[2, 0], &pi);
        let b = la_loss(&shifted, 3, &[2, 0], &pi);
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn cb_weights_examples() {
        let w = cb_sampling_weights(&ClassCounts::new(vec![4, 4, 4]).unwrap());
        assert!(w.iter().all(|&x| x == w[0]));
        let w = cb_sampling_weights(&ClassCounts::new(vec![7]).unwrap());
        assert_eq!(w, vec![1.0 / 7.0]);
        assert!((w[0] * 7.0 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn cb_sampler_balances_classes() {
        let mut labels = vec![0; 90];
        labels.extend(vec![1; 10]);
        let s = ClassBalancedSampler::new(&labels, &[90, 10]).unwrap();
        let mut r = rng::stream(11, 0);
        let draws = s.draw(&mut r, 100_000);
        let ones = draws.iter().filter(|&&i| labels[i] == 1).count() as f64 / 1e5;
        // binomial std at p = 0.5 over 1e5 draws is ~0.0016
        assert!((ones - 0.5).abs() < 0.01, "{ones}");
    }

    #[test]
    fn gradient_descent_on_la_drives_adjusted_softmax_to_one_hot() {
        let pi = ClassPriors::new(vec![0.8, 0.15, 0.05]).unwrap();
        let spec = LossSpec::la(pi.clone());
        let mut logits = vec![0.0; 3];
        for _ in 0..20_000 {
            let (_, g) = loss_with_grad(&logits, 3, &[2], &spec);
            logits.iter_mut().zip(&g).for_each(|(l, gi)| *l -= 1.0 * gi);
        }
        let adjusted: Vec<f64> = logits.iter().zip(pi.as_slice()).map(|(l, p)| l + p.ln()).collect();
        let p = softmax(&adjusted, 3);
        assert!(p[2] > 0.999, "{p:?}");
        assert!(la_loss(&logits, 3, &[2], &pi) < 1e-3);
    }

    proptest! {
        #[test]
        fn uniform_priors_match_ce(logits in proptest::collection::vec(-20.0f64..20.0, 12), y in 0usize..4) {
            let labels = [y, (y + 1) % 4, 3];
            let (a, ga) = loss_with_grad(&logits, 4, &labels, &LossSpec::ce());
            let (b, gb) = loss_with_grad(&logits, 4, &labels, &LossSpec::la(ClassPriors::uniform(4)));
            prop_assert_eq!(a, b);
            prop_assert_eq!(ga, gb);
        }

        #[test]
        fn priors_normalised(sizes in proptest::collection::vec(1usize..100_000, 1..50)) {
            let p = ClassPriors::from_sizes(&sizes).unwrap();
            prop_assert!((p.as_slice().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }
}
