//! Weight-space arithmetic over flat parameter vectors.
//!
//! Recursive merging walks models sorted by the imbalance ratio of their
//! training subset, starting from the pretrained weights:
//!
//! ```text
//! merged_0 = theta_0
//! merged_n = (1 - lambda) * theta_n + lambda * merged_{n-1}
//! ```
//!
//! which unrolls to `lambda^N theta_0 + sum_n (1 - lambda) lambda^(N - n) theta_n`
//! (see [`effective_coefficients`]).

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ModelWeights;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MergeConfig {
    pub lambda: f64,
    pub include_pretrained_as_theta0: bool,
}

impl Default for MergeConfig {
    fn default() -> Self {
        Self {
            lambda: 0.7,
            include_pretrained_as_theta0: true,
        }
    }
}

impl MergeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::validation("merge.lambda", format!("{} is outside [0, 1]", self.lambda)));
        }
        Ok(())
    }
}

/// Coordinate-wise mean. Each coordinate is summed in sorted order, so the
/// result does not depend on the order of `models`.
pub fn uniform_average(models: &[ModelWeights]) -> Result<ModelWeights> {
    let first = models.first().ok_or(Error::Empty("model list"))?;
    for m in &models[1..] {
        first.check_same_layout(m)?;
    }
    if models.len() == 1 {
        return Ok(first.clone());
    }
    let n = models.len() as f64;
    let mut column = Vec::with_capacity(models.len());
    let flat = (0..first.flat().len())
        .map(|i| {
            column.clear();
            column.extend(models.iter().map(|m| m.flat()[i]));
            column.sort_by(f64::total_cmp);
            column.iter().sum::<f64>() / n
        })
        .collect();
    first.with_flat(flat)
}

/// Averages the bootstrap replicas trained at one imbalance ratio.
pub fn bootstrap_average(models: &[ModelWeights]) -> Result<ModelWeights> {
    uniform_average(models)
}

/// `models` must already be sorted by ascending subset ratio.
pub fn recursive_merge(models: &[ModelWeights], theta0: &ModelWeights, lambda: f64) -> Result<ModelWeights> {
    MergeConfig {
        lambda,
        include_pretrained_as_theta0: true,
    }
    .validate()?;
    let mut acc = theta0.flat().to_vec();
    for m in models {
        theta0.check_same_layout(m)?;
        for (a, &t) in acc.iter_mut().zip(m.flat()) {
            *a = (1.0 - lambda) * t + lambda * *a;
        }
    }
    theta0.with_flat(acc)
}

/// Weights of `[theta_0, theta_1, ..., theta_N]` in the unrolled recursion.
pub fn effective_coefficients(levels: usize, lambda: f64) -> Vec<f64> {
    let mut coeffs = Vec::with_capacity(levels + 1);
    coeffs.push(lambda.powi(levels as i32));
    for n in 1..=levels {
        coeffs.push((1.0 - lambda) * lambda.powi((levels - n) as i32));
    }
    coeffs
}

/// Running average of weights along a training trajectory, updated as
/// `ema = (1 - mu) * ema + mu * theta`. With `mu = 1` the average tracks the
/// iterate exactly; with `mu = 0` it never moves.
#[derive(Debug, Clone, PartialEq)]
pub struct EmaState {
    theta: Vec<f64>,
    mu: f64,
}

impl EmaState {
    pub fn new(initial: &[f64], mu: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&mu) {
            return Err(Error::validation("train.ema_mu", format!("{mu} is outside [0, 1]")));
        }
        Ok(Self {
            theta: initial.to_vec(),
            mu,
        })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn weights(&self) -> &[f64] {
        &self.theta
    }

    pub fn update(&mut self, theta: &[f64]) -> Result<()> {
        let all = 0..self.theta.len();
        self.update_ranges(theta, std::slice::from_ref(&all))
    }

    /// Updates only the coordinates in `ranges`; the rest keep their bits,
    /// which `(1 - mu) x + mu x` would not guarantee.
    pub fn update_ranges(&mut self, theta: &[f64], ranges: &[Range<usize>]) -> Result<()> {
        if theta.len() != self.theta.len() || ranges.iter().any(|r| r.end > theta.len()) {
            return Err(Error::LayoutMismatch);
        }
        let mu = self.mu;
        for r in ranges {
            for (e, &t) in self.theta[r.clone()].iter_mut().zip(&theta[r.clone()]) {
                *e = (1.0 - mu) * *e + mu * t;
            }
        }
        Ok(())
    }
}

/// Functional form of [`EmaState::update`].
pub fn ema_update(mut state: EmaState, theta: &[f64]) -> Result<EmaState> {
    state.update(theta)?;
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{BackboneConfig, Layout};

    fn layout() -> Layout {
        BackboneConfig::new(2, vec![]).layout(1).unwrap()
    }

    fn model(v: &[f64]) -> ModelWeights {
        ModelWeights::from_flat(layout(), v.to_vec()).unwrap()
    }

    #[test]
    fn uniform_examples() {
        let a = model(&[1.0, -2.0, 0.5, 3.0, 0.25, 0.0, 1.0, 1.0, -4.0]);
        assert_eq!(uniform_average(std::slice::from_ref(&a)).unwrap(), a);
        let neg = model(&a.flat().iter().map(|v| -v).collect::<Vec<_>>());
        assert!(uniform_average(&[a.clone(), neg]).unwrap().flat().iter().all(|&v| v == 0.0));
        assert!(matches!(uniform_average(&[]), Err(Error::Empty(_))));
        let other = ModelWeights::zeros(BackboneConfig::new(3, vec![]).layout(1).unwrap());
        assert!(matches!(uniform_average(&[a, other]), Err(Error::LayoutMismatch)));
    }

    #[test]
    fn bootstrap_pair_midpoint() {
        let a = model(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]);
        let b = model(&a.flat().iter().map(|v| v + 2.0 * 0.5).collect::<Vec<_>>());
        let mid = bootstrap_average(&[a.clone(), b]).unwrap();
        for (m, x) in mid.flat().iter().zip(a.flat()) {
            assert_eq!(*m, x + 0.5);
        }
    }

    #[test]
    fn coefficient_examples() {
        assert_eq!(effective_coefficients(1, 0.5), vec![0.5, 0.5]);
        let c = effective_coefficients(3, 0.7);
        let want = [0.343, 0.147, 0.21, 0.3];
        for (x, y) in c.iter().zip(want) {
            assert!((x - y).abs() < 1e-15, "{c:?}");
        }
        assert!((c.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lambda_validated() {
        let a = model(&[0.0; 9]);
        assert!(matches!(
            recursive_merge(&[a.clone()], &a, 1.5),
            Err(Error::Validation { field, .. }) if field == "merge.lambda"
        ));
    }

    #[test]
    fn ema_examples() {
        let mut s = EmaState::new(&[1.0, 2.0], 1.0).unwrap();
        s.update(&[5.0, -1.0]).unwrap();
        assert_eq!(s.weights(), &[5.0, -1.0]);
        let mut s = EmaState::new(&[1.0, 2.0], 0.0).unwrap();
        s.update(&[5.0, -1.0]).unwrap();
        assert_eq!(s.weights(), &[1.0, 2.0]);
        assert!(s.update(&[1.0]).is_err());

        let frozen = 0.1 + 0.2;
        let mut s = EmaState::new(&[frozen, 0.0], 0.99).unwrap();
        s.update_ranges(&[frozen, 1.0], &[1..2]).unwrap();
        assert_eq!(s.weights()[0].to_bits(), frozen.to_bits());
        assert_eq!(s.weights()[1], 0.99);
        assert!(s.update_ranges(&[0.0, 0.0], &[1..3]).is_err());
    }

    #[test]
    fn ema_geometric_closed_form() {
        let mu = 0.3;
        let start = [4.0, -2.0];
        let target = [1.0, 1.0];
        let mut s = EmaState::new(&start, mu).unwrap();
        let mut prev_gap = f64::INFINITY;
        for k in 1..=20 {
            s = ema_update(s, &target).unwrap();
            let decay = (1.0f64 - mu).powi(k);
            for i in 0..2 {
                let want = target[i] + decay * (start[i] - target[i]);
                assert!((s.weights()[i] - want).abs() < 1e-12);
            }
            let gap: f64 = s.weights().iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            assert!(gap < prev_gap);
            prev_gap = gap;
        }
    }
}
