//! Low-rank adapters on the backbone's linear layers.
//!
//! Each layer `W` (out x in) gets `W + (alpha / r) * B A` with `A` (r x in)
//! drawn from `U(-1/sqrt(in), 1/sqrt(in))` and `B` (out x r) starting at zero, so the adapted
//! model equals the base model before the first step. Only the adapters
//! train; base weights, biases and the prototype head stay frozen.

use std::ops::Range;

use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use super::train::Objective;
use crate::error::{Error, Result};
use crate::losses::LossSpec;
use crate::nn::{self, ModelWeights};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoraConfig {
    pub rank: usize,
    pub alpha: f64,
}

impl Default for LoraConfig {
    fn default() -> Self {
        Self { rank: 4, alpha: 8.0 }
    }
}

impl LoraConfig {
    /// Rank must be at least 1 and below the smallest layer width.
    pub fn validate(&self, base: &ModelWeights) -> Result<()> {
        let limit = base.layout().dims().iter().copied().min().unwrap_or(0);
        if self.rank == 0 || self.rank >= limit {
            return Err(Error::RankTooLarge { rank: self.rank, limit });
        }
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::validation("lora.alpha", "must be > 0"));
        }
        Ok(())
    }

    pub fn scale(&self) -> f64 {
        self.alpha / self.rank as f64
    }
}

pub(crate) struct Adapted<'a> {
    base: &'a ModelWeights,
    rank: usize,
    scale: f64,
    /// `(A range, B range)` per layer in the adapter vector.
    slots: Vec<(Range<usize>, Range<usize>)>,
    init: Vec<f64>,
}

impl<'a> Adapted<'a> {
    pub fn new(base: &'a ModelWeights, cfg: &LoraConfig, seed: u64) -> Result<Self> {
        cfg.validate(base)?;
        let layout = base.layout();
        let r = cfg.rank;
        let mut slots = Vec::new();
        let mut at = 0;
        for l in 0..layout.num_layers() {
            let (out, inp) = layout.layer_shape(l);
            let a = at..at + r * inp;
            let b = a.end..a.end + out * r;
            at = b.end;
            slots.push((a, b));
        }
        let mut init = vec![0.0; at];
        let mut g = rng::stream(seed, 2);
        for (l, (a, _)) in slots.iter().enumerate() {
            let bound = 1.0 / (layout.layer_shape(l).1 as f64).sqrt();
            let dist = Uniform::new(-bound, bound).expect("finite bound");
            for v in &mut init[a.clone()] {
                *v = dist.sample(&mut g);
            }
        }
        Ok(Self {
            base,
            rank: r,
            scale: cfg.scale(),
            slots,
            init,
        })
    }

    /// `scale * B A` for layer `l`, row-major `out x in`.
    pub fn delta(&self, params: &[f64], l: usize) -> Vec<f64> {
        let (out, inp) = self.base.layout().layer_shape(l);
        let (ar, br) = &self.slots[l];
        let (a, b) = (&params[ar.clone()], &params[br.clone()]);
        let mut w = vec![0.0; out * inp];
        for o in 0..out {
            for k in 0..self.rank {
                let bk = self.scale * b[o * self.rank + k];
                if bk == 0.0 {
                    continue;
                }
                let arow = &a[k * inp..(k + 1) * inp];
                for (x, &av) in w[o * inp..(o + 1) * inp].iter_mut().zip(arow) {
                    *x += bk * av;
                }
            }
        }
        w
    }
}

impl Objective for Adapted<'_> {
    fn init(&self) -> Vec<f64> {
        self.init.clone()
    }

    fn trainable(&self) -> Vec<Range<usize>> {
        vec![0..self.init.len()]
    }

    fn model(&self, params: &[f64]) -> Result<ModelWeights> {
        let layout = self.base.layout();
        let mut flat = self.base.flat().to_vec();
        for l in 0..layout.num_layers() {
            let delta = self.delta(params, l);
            for (w, d) in flat[layout.weight_range(l)].iter_mut().zip(delta) {
                *w += d;
            }
        }
        self.base.with_flat(flat)
    }

    fn loss_and_grads(
        &self,
        params: &[f64],
        features: &[f64],
        labels: &[usize],
        loss: &LossSpec,
    ) -> Result<(f64, Vec<f64>)> {
        let layout = self.base.layout();
        let (value, full) = nn::loss_and_grads(&self.model(params)?, features, labels, loss)?;
        let r = self.rank;
        let mut grads = vec![0.0; params.len()];
        for l in 0..layout.num_layers() {
            let (out, inp) = layout.layer_shape(l);
            let gw = &full[layout.weight_range(l)];
            let (ar, br) = &self.slots[l];
            let (a, b) = (&params[ar.clone()], &params[br.clone()]);
            // dB = s G A^T, dA = s B^T G
            let mut ga = vec![0.0; r * inp];
            let mut gb = vec![0.0; out * r];
            for o in 0..out {
                let grow = &gw[o * inp..(o + 1) * inp];
                for k in 0..r {
                    let arow = &a[k * inp..(k + 1) * inp];
                    gb[o * r + k] = self.scale * grow.iter().zip(arow).map(|(g, a)| g * a).sum::<f64>();
                    let bk = self.scale * b[o * r + k];
                    if bk != 0.0 {
                        for (x, &g) in ga[k * inp..(k + 1) * inp].iter_mut().zip(grow) {
                            *x += bk * g;
                        }
                    }
                }
            }
            grads[ar.clone()].copy_from_slice(&ga);
            grads[br.clone()].copy_from_slice(&gb);
        }
        Ok((value, grads))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::{ClassPriors, LossSpec};
    use crate::nn::{init_pretrained, BackboneConfig};

    fn base() -> ModelWeights {
        let means: Vec<f64> = (0..3 * 4).map(|i| ((i * 7) % 5) as f64 - 2.0).collect();
        init_pretrained(&BackboneConfig::new(4, vec![5]), &means, 3, 0.3, 9).unwrap()
    }

    #[test]
    fn rank_limits() {
        let b = base();
        assert!(Adapted::new(&b, &LoraConfig { rank: 3, alpha: 1.0 }, 0).is_ok());
        for rank in [0, 4, 9] {
            assert!(matches!(
                Adapted::new(&b, &LoraConfig { rank, alpha: 1.0 }, 0),
                Err(Error::RankTooLarge { limit: 4, .. })
            ));
        }
    }

    #[test]
    fn starts_at_base() {
        let b = base();
        let a = Adapted::new(&b, &LoraConfig { rank: 2, alpha: 4.0 }, 1).unwrap();
        assert_eq!(a.model(&a.init()).unwrap(), b);
    }

    #[test]
    fn adapter_gradients_match_finite_differences() {
        let b = base();
        let a = Adapted::new(&b, &LoraConfig { rank: 2, alpha: 4.0 }, 1).unwrap();
        let mut p = a.init();
        for (i, v) in p.iter_mut().enumerate() {
            *v += 0.05 * (((i * 13) % 7) as f64 - 3.0);
        }
        let x: Vec<f64> = (0..3 * 4).map(|i| ((i * 5) % 9) as f64 * 0.2 - 0.8).collect();
        let y = [0, 2, 1];
        let loss = LossSpec::la(ClassPriors::new(vec![0.5, 0.3, 0.2]).unwrap());
        let (_, g) = a.loss_and_grads(&p, &x, &y, &loss).unwrap();
        let h = 1e-6;
        for i in 0..p.len() {
            let mut up = p.clone();
            up[i] += h;
            let mut dn = p.clone();
            dn[i] -= h;
            let fd = (a.loss_and_grads(&up, &x, &y, &loss).unwrap().0 - a.loss_and_grads(&dn, &x, &y, &loss).unwrap().0)
                / (2.0 * h);
            let err = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-3);
            assert!(err < 1e-5, "coordinate {i}: fd {fd} analytic {}", g[i]);
        }
    }
}
