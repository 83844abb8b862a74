use rand::seq::index;
use rand::Rng as _;

use super::{round_count, ClassCounts};
use crate::error::{Error, Result};
use crate::rng;

/// Labeled feature vectors with a per-class row index.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    dim: usize,
    num_classes: usize,
    class_index: Vec<Vec<usize>>,
}

impl Dataset {
    /// `features` is row-major `labels.len() x dim`.
    pub fn new(features: Vec<f64>, dim: usize, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::ShapeMismatch("feature dimension is zero".into()));
        }
        if features.len() != labels.len() * dim {
            return Err(Error::ShapeMismatch(format!(
                "{} feature values for {} rows of width {dim}",
                features.len(),
                labels.len()
            )));
        }
        let mut class_index = vec![Vec::new(); num_classes];
        for (row, &y) in labels.iter().enumerate() {
            if y >= num_classes {
                return Err(Error::ShapeMismatch(format!(
                    "label {y} at row {row} out of range for {num_classes} classes"
                )));
            }
            class_index[y].push(row);
        }
        Ok(Self {
            features,
            labels,
            dim,
            num_classes,
            class_index,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn class_index(&self) -> &[Vec<usize>] {
        &self.class_index
    }

    /// Label histogram, indexed by class (not sorted).
    pub fn class_sizes(&self) -> Vec<usize> {
        self.class_index.iter().map(Vec::len).collect()
    }

    /// Label histogram as [`ClassCounts`]; fails if some class is empty or
    /// the classes are not ordered most-frequent first.
    pub fn counts(&self) -> Result<ClassCounts> {
        ClassCounts::new(self.class_sizes())
    }

    /// `max / min` over the non-empty classes.
    pub fn imbalance_ratio(&self) -> f64 {
        let sizes = self.class_sizes();
        let max = sizes.iter().copied().max().unwrap_or(0);
        let min = sizes.iter().copied().filter(|&n| n > 0).min().unwrap_or(0);
        if min == 0 {
            return 1.0;
        }
        max as f64 / min as f64
    }

    /// New dataset from the given rows, in the given order.
    pub fn select(&self, rows: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(rows.len() * self.dim);
        let mut labels = Vec::with_capacity(rows.len());
        for &r in rows {
            features.extend_from_slice(self.row(r));
            labels.push(self.labels[r]);
        }
        Dataset::new(features, self.dim, labels, self.num_classes)
            .expect("rows of a valid dataset form a valid dataset")
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.features.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(Error::NonFiniteInput { row: i / self.dim }),
            None => Ok(()),
        }
    }
}

/// Caps every class at `round(n_min * rho_i)` samples, drawn uniformly
/// without replacement. Classes at or below the cap are kept whole, and kept
/// rows stay in their original order.
pub fn subsample_to_ratio(data: &Dataset, rho_i: f64, seed: u64) -> Dataset {
    let sizes = data.class_sizes();
    let n_min = match sizes.iter().copied().filter(|&n| n > 0).min() {
        Some(n) => n,
        None => return data.clone(),
    };
    let cap = round_count(n_min as f64 * rho_i.max(1.0));
    if sizes.iter().all(|&n| n <= cap) {
        return data.clone();
    }
    let mut keep = Vec::with_capacity(data.len());
    for (class, rows) in data.class_index.iter().enumerate() {
        if rows.len() <= cap {
            keep.extend_from_slice(rows);
        } else {
            let mut rng = rng::stream(seed, class as u64);
            keep.extend(index::sample(&mut rng, rows.len(), cap).into_iter().map(|i| rows[i]));
        }
    }
    keep.sort_unstable();
    data.select(&keep)
}

/// Per-class sampling with replacement; every class keeps its size.
pub fn bootstrap_resample(data: &Dataset, seed: u64) -> Dataset {
    let mut rows = Vec::with_capacity(data.len());
    for (class, members) in data.class_index.iter().enumerate() {
        let mut rng = rng::stream(seed, class as u64);
        rows.extend((0..members.len()).map(|_| members[rng.random_range(0..members.len())]));
    }
    data.select(&rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::exp_decay_counts;
    use proptest::prelude::*;

    /// One-dimensional dataset whose feature is the row number.
    fn toy(sizes: &[usize]) -> Dataset {
        let mut labels = Vec::new();
        for (c, &n) in sizes.iter().enumerate() {
            labels.extend(std::iter::repeat_n(c, n));
        }
        let features = (0..labels.len()).map(|i| i as f64).collect();
        Dataset::new(features, 1, labels, sizes.len()).unwrap()
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(Dataset::new(vec![0.0; 5], 2, vec![0, 1], 2).is_err());
        assert!(Dataset::new(vec![0.0; 4], 2, vec![0, 2], 2).is_err());
    }

    #[test]
    fn class_index_partitions_rows() {
        let d = Dataset::new(vec![0.0; 5], 1, vec![1, 0, 1, 1, 0], 2).unwrap();
        assert_eq!(d.class_index(), &[vec![1, 4], vec![0, 2, 3]]);
        assert_eq!(d.class_sizes(), vec![2, 3]);
        assert!(d.counts().is_err());
    }

    #[test]
    fn subsample_above_data_ratio_is_identity() {
        let d = toy(&[40, 20, 4]);
        assert_eq!(subsample_to_ratio(&d, 10.0, 1), d);
        assert_eq!(subsample_to_ratio(&d, 1000.0, 1), d);
    }

    #[test]
    fn subsample_to_one_balances() {
        let d = toy(&[40, 20, 4]);
        let s = subsample_to_ratio(&d, 1.0, 3);
        assert_eq!(s.class_sizes(), vec![4, 4, 4]);
        assert_eq!(s.imbalance_ratio(), 1.0);
    }

    #[test]
    fn subsample_keeps_tail_rows() {
        let d = toy(&[40, 20, 4]);
        let s = subsample_to_ratio(&d, 2.0, 9);
        assert_eq!(s.class_sizes(), vec![8, 8, 4]);
        // tail class rows are the last four row ids of the source
        let tail: Vec<f64> = s.class_index()[2].iter().map(|&r| s.row(r)[0]).collect();
        assert_eq!(tail, vec![60.0, 61.0, 62.0, 63.0]);
    }

    #[test]
    fn subsample_cifar_fraction() {
        let counts = exp_decay_counts(100, 500, 100.0).unwrap();
        let d = toy(counts.as_slice());
        let s = subsample_to_ratio(&d, 32.0, 0);
        // oracle: sum of min(n_j, 5 * 32)
        let expect: usize = counts.as_slice().iter().map(|&n| n.min(160)).sum();
        assert_eq!(s.len(), expect);
        let frac = s.len() as f64 / d.len() as f64;
        assert!((frac - 0.67).abs() < 0.01, "fraction {frac}");
    }

    #[test]
    fn bootstrap_single_sample_class() {
        let d = toy(&[5, 1]);
        let b = bootstrap_resample(&d, 4);
        assert_eq!(b.class_sizes(), vec![5, 1]);
        let r = b.class_index()[1][0];
        assert_eq!(b.row(r), &[5.0]);
    }

    #[test]
    fn bootstrap_seeds_differ() {
        let d = toy(&[12, 10]);
        let differing = (0..100u64)
            .filter(|&s| bootstrap_resample(&d, 2 * s) != bootstrap_resample(&d, 2 * s + 1))
            .count();
        assert_eq!(differing, 100);
    }

    proptest! {
        #[test]
        fn subsample_properties(
            sizes in proptest::collection::vec(1usize..60, 2..8),
            r1 in 1.0f64..30.0,
            r2 in 1.0f64..30.0,
            seed in any::<u64>(),
        ) {
            let mut sizes = sizes;
            sizes.sort_unstable_by(|a, b| b.cmp(a));
            let d = toy(&sizes);
            let once = subsample_to_ratio(&d, r1, seed);
            let twice = subsample_to_ratio(&once, r1, seed);
            prop_assert_eq!(&once, &twice);

            let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
            prop_assert!(subsample_to_ratio(&d, lo, seed).len() <= subsample_to_ratio(&d, hi, seed).len());

            let n_min = *sizes.last().unwrap();
            let cap = ((n_min as f64 * r1) + 0.5).floor() as usize;
            for (c, &n) in sizes.iter().enumerate() {
                let kept = once.class_sizes()[c];
                prop_assert_eq!(kept, n.min(cap));
            }
            prop_assert!(once.imbalance_ratio() <= d.imbalance_ratio() + 1e-12);
        }

        #[test]
        fn bootstrap_preserves_histogram(sizes in proptest::collection::vec(1usize..30, 1..6), seed in any::<u64>()) {
            let d = toy(&sizes);
            let b = bootstrap_resample(&d, seed);
            prop_assert_eq!(b.class_sizes(), d.class_sizes());
            prop_assert_eq!(&b, &bootstrap_resample(&d, seed));
        }
    }
}
