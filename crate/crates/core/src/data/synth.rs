//! Gaussian class clusters standing in for a pretrained embedding space.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{ClassCounts, Dataset};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub dim: usize,
    pub class_sep: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            dim: 64,
            class_sep: 1.0,
            noise_sigma: 0.15,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::validation("data.dim", "must be >= 2"));
        }
        if !(self.noise_sigma > 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::validation("data.noise_sigma", "must be > 0"));
        }
        if !self.class_sep.is_finite() {
            return Err(Error::validation("data.class_sep", "must be finite"));
        }
        Ok(())
    }

    /// Class means: `class_sep` times random unit vectors, row-major `K x dim`.
    pub fn class_means(&self, num_classes: usize) -> Vec<f64> {
        let mut rng = rng::stream(self.seed, 0);
        let mut means = Vec::with_capacity(num_classes * self.dim);
        for _ in 0..num_classes {
            let v: Vec<f64> = (0..self.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            means.extend(v.iter().map(|x| self.class_sep * x / norm));
        }
        means
    }

    fn sample(&self, means: &[f64], sizes: &[usize], sample_seed: u64) -> Dataset {
        let d = self.dim;
        let mut rng = rng::stream(sample_seed, 1);
        let total: usize = sizes.iter().sum();
        let mut features = Vec::with_capacity(total * d);
        let mut labels = Vec::with_capacity(total);
        for (class, &n) in sizes.iter().enumerate() {
            let mean = &means[class * d..(class + 1) * d];
            for _ in 0..n {
                features.extend(mean.iter().map(|&m| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    m + self.noise_sigma * z
                }));
                labels.push(class);
            }
        }
        Dataset::new(features, d, labels, sizes.len()).expect("generated shapes are consistent")
    }
}

/// Draws `counts[j]` samples around each class mean, rows grouped by class.
pub fn synth_gaussians(spec: &SyntheticSpec, counts: &ClassCounts) -> Result<Dataset> {
    spec.validate()?;
    let means = spec.class_means(counts.num_classes());
    Ok(spec.sample(&means, counts.as_slice(), spec.seed))
}

/// Sizes and seeds of a long-tailed training split plus balanced
/// validation and test splits drawn independently from the same clusters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train: ClassCounts,
    pub val_per_class: usize,
    pub test_per_class: usize,
    pub train_seed: u64,
    pub val_seed: u64,
    pub test_seed: u64,
}

impl SplitPlan {
    pub fn val_sizes(&self) -> Vec<usize> {
        vec![self.val_per_class; self.train.num_classes()]
    }

    pub fn test_sizes(&self) -> Vec<usize> {
        vec![self.test_per_class; self.train.num_classes()]
    }
}

pub fn split_eval(counts: &ClassCounts, test_per_class: usize, val_per_class: usize, seed: u64) -> SplitPlan {
    SplitPlan {
        train: counts.clone(),
        val_per_class,
        test_per_class,
        train_seed: rng::derive_seed(seed, 1),
        val_seed: rng::derive_seed(seed, 2),
        test_seed: rng::derive_seed(seed, 3),
    }
}

/// A generated benchmark: splits plus the cluster means they came from.
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    pub means: Vec<f64>,
    pub train_counts: ClassCounts,
}

impl Benchmark {
    pub fn generate(spec: &SyntheticSpec, plan: &SplitPlan) -> Result<Self> {
        spec.validate()?;
        let k = plan.train.num_classes();
        let means = spec.class_means(k);
        Ok(Self {
            train: spec.sample(&means, plan.train.as_slice(), plan.train_seed),
            val: spec.sample(&means, &plan.val_sizes(), plan.val_seed),
            test: spec.sample(&means, &plan.test_sizes(), plan.test_seed),
            means,
            train_counts: plan.train.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::exp_decay_counts;

    #[test]
    fn tiny_noise_collapses_to_means() {
        let spec = SyntheticSpec {
            noise_sigma: 1e-300,
            ..SyntheticSpec::default()
        };
        let counts = ClassCounts::new(vec![3, 2]).unwrap();
        let d = synth_gaussians(&spec, &counts).unwrap();
        let means = spec.class_means(2);
        for i in 0..d.len() {
            let y = d.labels()[i];
            assert_eq!(d.row(i), &means[y * 64..(y + 1) * 64]);
        }
    }

    #[test]
    fn means_are_scaled_unit_vectors() {
        let spec = SyntheticSpec {
            class_sep: 2.5,
            ..SyntheticSpec::default()
        };
        let m = spec.class_means(4);
        for row in m.chunks(64) {
            let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 2.5).abs() < 1e-12);
        }
    }

    #[test]
    fn decay_counts_drive_class_sizes() {
        let counts = exp_decay_counts(20, 100, 100.0).unwrap();
        let d = synth_gaussians(&SyntheticSpec::default(), &counts).unwrap();
        let sizes = d.class_sizes();
        assert_eq!(sizes.len(), 20);
        assert_eq!((sizes[0], sizes[19]), (100, 1));
        assert_eq!(d.counts().unwrap(), counts);
    }

    #[test]
    fn seeds_are_deterministic() {
        let counts = ClassCounts::new(vec![7, 3]).unwrap();
        let spec = SyntheticSpec::default();
        assert_eq!(synth_gaussians(&spec, &counts).unwrap(), synth_gaussians(&spec, &counts).unwrap());
        let other = SyntheticSpec { seed: 1, ..spec };
        assert_ne!(synth_gaussians(&other, &counts).unwrap(), synth_gaussians(&SyntheticSpec::default(), &counts).unwrap());
    }

    #[test]
    fn split_is_balanced_for_eval() {
        let counts = ClassCounts::new(vec![150, 60, 10]).unwrap();
        let plan = split_eval(&counts, 50, 20, 7);
        let b = Benchmark::generate(&SyntheticSpec::default(), &plan).unwrap();
        assert_eq!(b.test.class_sizes(), vec![50, 50, 50]);
        assert_eq!(b.val.class_sizes(), vec![20, 20, 20]);
        assert_eq!(b.train.class_sizes(), vec![150, 60, 10]);
        assert_ne!(b.test.row(0), b.train.row(0));
        let again = Benchmark::generate(&SyntheticSpec::default(), &split_eval(&counts, 50, 20, 7)).unwrap();
        assert_eq!(again.test, b.test);
        assert_eq!(again.train, b.train);
    }

    #[test]
    fn rejects_bad_spec() {
        let counts = ClassCounts::new(vec![1, 1]).unwrap();
        let bad = SyntheticSpec { noise_sigma: 0.0, ..SyntheticSpec::default() };
        assert!(synth_gaussians(&bad, &counts).is_err());
        let bad = SyntheticSpec { dim: 1, ..SyntheticSpec::default() };
        assert!(synth_gaussians(&bad, &counts).is_err());
    }
}
