//! Residual MLP backbone with a cosine prototype head.
//!
//! All parameters of a model live in one flat `Vec<f64>` described by a
//! [`Layout`]: backbone layers (weight, then bias) in order, then the `K x d`
//! prototype matrix, then the scalar log-temperature. Merging, EMA and the
//! optimizer all work on that flat vector.

pub mod checkpoint;
mod config;
mod model;
mod optim;
mod schedule;

pub use config::{TrainConfig, WarmupRule};
pub use model::{forward, init_pretrained, loss_and_grads, predict, DEFAULT_LOG_TEMPERATURE};
pub use optim::AdamW;
pub use schedule::LRSchedule;

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub dim: usize,
    pub hidden: Vec<usize>,
    pub residual: bool,
}

impl BackboneConfig {
    pub fn new(dim: usize, hidden: Vec<usize>) -> Self {
        Self {
            dim,
            hidden,
            residual: true,
        }
    }

    pub fn layout(&self, num_classes: usize) -> Result<Layout> {
        if self.dim == 0 || self.hidden.contains(&0) {
            return Err(Error::InvalidSpec("layer widths must be positive".into()));
        }
        if num_classes == 0 {
            return Err(Error::InvalidSpec("need at least one class".into()));
        }
        let mut dims = Vec::with_capacity(self.hidden.len() + 2);
        dims.push(self.dim);
        dims.extend_from_slice(&self.hidden);
        dims.push(self.dim);
        Ok(Layout::new(dims, self.residual, num_classes))
    }
}

/// Shape of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    dims: Vec<usize>,
    residual: bool,
    num_classes: usize,
    offsets: Vec<usize>,
}

impl Layout {
    /// `dims` lists layer widths from input to output, so there are
    /// `dims.len() - 1` linear layers.
    pub fn new(dims: Vec<usize>, residual: bool, num_classes: usize) -> Self {
        assert!(dims.len() >= 2, "need at least one linear layer");
        let mut offsets = Vec::with_capacity(dims.len());
        let mut at = 0;
        for w in dims.windows(2) {
            offsets.push(at);
            at += w[1] * w[0] + w[1];
        }
        offsets.push(at);
        Self {
            dims,
            residual,
            num_classes,
            offsets,
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn residual(&self) -> bool {
        self.residual
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn feature_dim(&self) -> usize {
        self.dims[self.dims.len() - 1]
    }

    /// `(out, in)` of layer `l`.
    pub fn layer_shape(&self, l: usize) -> (usize, usize) {
        (self.dims[l + 1], self.dims[l])
    }

    pub fn weight_range(&self, l: usize) -> Range<usize> {
        let (o, i) = self.layer_shape(l);
        self.offsets[l]..self.offsets[l] + o * i
    }

    pub fn bias_range(&self, l: usize) -> Range<usize> {
        let (o, i) = self.layer_shape(l);
        let start = self.offsets[l] + o * i;
        start..start + o
    }

    pub fn backbone_range(&self) -> Range<usize> {
        0..self.offsets[self.num_layers()]
    }

    pub fn prototype_range(&self) -> Range<usize> {
        let start = self.offsets[self.num_layers()];
        start..start + self.num_classes * self.feature_dim()
    }

    pub fn log_temperature_index(&self) -> usize {
        self.prototype_range().end
    }

    pub fn len(&self) -> usize {
        self.log_temperature_index() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    layout: Layout,
    params: Vec<f64>,
}

impl ModelWeights {
    pub fn zeros(layout: Layout) -> Self {
        let params = vec![0.0; layout.len()];
        Self { layout, params }
    }

    pub fn from_flat(layout: Layout, params: Vec<f64>) -> Result<Self> {
        if params.len() != layout.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} parameters for a layout of {}",
                params.len(),
                layout.len()
            )));
        }
        Ok(Self { layout, params })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn flat(&self) -> &[f64] {
        &self.params
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.params
    }

    /// Same layout, new parameters.
    pub fn with_flat(&self, params: Vec<f64>) -> Result<Self> {
        Self::from_flat(self.layout.clone(), params)
    }

    pub fn backbone(&self) -> &[f64] {
        &self.params[self.layout.backbone_range()]
    }

    pub fn prototypes(&self) -> &[f64] {
        &self.params[self.layout.prototype_range()]
    }

    pub fn log_temperature(&self) -> f64 {
        self.params[self.layout.log_temperature_index()]
    }

    /// Logit scale `exp(-log_temperature)`.
    pub fn scale(&self) -> f64 {
        (-self.log_temperature()).exp()
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|v| v.is_finite())
    }

    pub fn check_same_layout(&self, other: &ModelWeights) -> Result<()> {
        if self.layout != other.layout {
            return Err(Error::LayoutMismatch);
        }
        Ok(())
    }
}

/// Euclidean norm of the flat difference.
pub fn weight_distance(a: &ModelWeights, b: &ModelWeights) -> Result<f64> {
    a.check_same_layout(b)?;
    Ok(a.params
        .iter()
        .zip(&b.params)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn layout() -> Layout {
        BackboneConfig::new(3, vec![4]).layout(2).unwrap()
    }

    #[test]
    fn layout_ranges_tile_the_vector() {
        let l = layout();
        assert_eq!(l.weight_range(0), 0..12);
        assert_eq!(l.bias_range(0), 12..16);
        assert_eq!(l.weight_range(1), 16..28);
        assert_eq!(l.bias_range(1), 28..31);
        assert_eq!(l.backbone_range(), 0..31);
        assert_eq!(l.prototype_range(), 31..37);
        assert_eq!(l.log_temperature_index(), 37);
        assert_eq!(l.len(), 38);
        assert_eq!(l, BackboneConfig::new(3, vec![4]).layout(2).unwrap());
    }

    #[test]
    fn distance_examples() {
        let a = ModelWeights::from_flat(layout(), (0..38).map(|i| i as f64 * 0.1).collect()).unwrap();
        assert_eq!(weight_distance(&a, &a).unwrap(), 0.0);
        let mut b = a.clone();
        b.flat_mut()[5] += 1.0;
        assert!((weight_distance(&a, &b).unwrap() - 1.0).abs() < 1e-15);
        let other = ModelWeights::zeros(BackboneConfig::new(3, vec![5]).layout(2).unwrap());
        assert!(matches!(weight_distance(&a, &other), Err(Error::LayoutMismatch)));
        assert!(ModelWeights::from_flat(layout(), vec![0.0; 3]).is_err());
    }

    proptest! {
        #[test]
        fn triangle_inequality(
            a in proptest::collection::vec(-5.0f64..5.0, 38),
            b in proptest::collection::vec(-5.0f64..5.0, 38),
            c in proptest::collection::vec(-5.0f64..5.0, 38),
        ) {
            let [a, b, c] = [a, b, c].map(|v| ModelWeights::from_flat(layout(), v).unwrap());
            let ab = weight_distance(&a, &b).unwrap();
            let bc = weight_distance(&b, &c).unwrap();
            let ac = weight_distance(&a, &c).unwrap();
            prop_assert!(ac <= ab + bc + 1e-12);
        }
    }
}
