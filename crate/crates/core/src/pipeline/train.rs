use std::ops::Range;

use rand::seq::SliceRandom;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::eval::balanced_accuracy;
use crate::losses::{ClassBalancedSampler, ClassPriors, LossKind, LossSpec};
use crate::merge::EmaState;
use crate::nn::{self, AdamW, LRSchedule, ModelWeights, TrainConfig};
use crate::rng;

/// What the optimiser sees: a flat parameter vector, the coordinates it may
/// move, a map back to model weights and the gradient of the batch loss.
pub(crate) trait Objective {
    fn init(&self) -> Vec<f64>;
    fn trainable(&self) -> Vec<Range<usize>>;
    fn model(&self, params: &[f64]) -> Result<ModelWeights>;
    fn loss_and_grads(&self, params: &[f64], features: &[f64], labels: &[usize], loss: &LossSpec)
        -> Result<(f64, Vec<f64>)>;
}

/// Plain model training over a subset of the flat vector.
pub(crate) struct Direct<'a> {
    pub theta0: &'a ModelWeights,
    pub trainable: Vec<Range<usize>>,
}

impl Objective for Direct<'_> {
    fn init(&self) -> Vec<f64> {
        self.theta0.flat().to_vec()
    }

    fn trainable(&self) -> Vec<Range<usize>> {
        self.trainable.clone()
    }

    fn model(&self, params: &[f64]) -> Result<ModelWeights> {
        self.theta0.with_flat(params.to_vec())
    }

    fn loss_and_grads(
        &self,
        params: &[f64],
        features: &[f64],
        labels: &[usize],
        loss: &LossSpec,
    ) -> Result<(f64, Vec<f64>)> {
        nn::loss_and_grads(&self.model(params)?, features, labels, loss)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub weights: ModelWeights,
    /// Epoch (1-based) whose EMA weights were kept; `None` means the final
    /// EMA weights (no validation set) or no training at all.
    pub best_epoch: Option<usize>,
    pub best_val_bal_acc: Option<f64>,
    pub steps: usize,
}

pub(crate) fn loss_spec(kind: LossKind, data: &Dataset) -> Result<LossSpec> {
    match kind {
        LossKind::La => Ok(LossSpec::la(ClassPriors::from_sizes(&data.class_sizes())?)),
        LossKind::Ce | LossKind::Cb => Ok(LossSpec::ce()),
    }
}

pub(crate) fn run<O: Objective>(
    objective: &O,
    data: &Dataset,
    val: Option<&Dataset>,
    cfg: &TrainConfig,
    job: &str,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let init = objective.init();
    if cfg.epochs == 0 {
        return Ok(TrainOutcome {
            weights: objective.model(&init)?,
            best_epoch: None,
            best_val_bal_acc: None,
            steps: 0,
        });
    }
    if data.is_empty() {
        return Err(Error::Empty("training data"));
    }
    let loss = loss_spec(cfg.loss, data)?;
    let sampler = if cfg.loss.class_balanced_batches() {
        Some(ClassBalancedSampler::new(data.labels(), &data.class_sizes())?)
    } else {
        None
    };
    let n = data.len();
    let per_epoch = n.div_ceil(cfg.batch_size);
    let total = per_epoch * cfg.epochs;
    let schedule = LRSchedule::new(cfg.lr_max, total, cfg.warmup, cfg.lr_floor_fraction);
    let trainable = objective.trainable();
    let mut params = init;
    let mut opt = AdamW::new(params.len(), cfg.betas, cfg.eps, cfg.weight_decay);
    let mut ema = EmaState::new(&params, cfg.ema_mu)?;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = rng::stream(cfg.seed, 0);
    let dim = data.dim();
    let mut feats = Vec::with_capacity(cfg.batch_size * dim);
    let mut labels = Vec::with_capacity(cfg.batch_size);
    let mut best: Option<(f64, usize, Vec<f64>)> = None;
    let mut step = 0;

    for epoch in 1..=cfg.epochs {
        match &sampler {
            Some(s) => order = s.draw(&mut rng, n),
            None => order.shuffle(&mut rng),
        }
        for batch in order.chunks(cfg.batch_size) {
            feats.clear();
            labels.clear();
            for &i in batch {
                feats.extend_from_slice(data.row(i));
                labels.push(data.labels()[i]);
            }
            let (value, grads) = objective
                .loss_and_grads(&params, &feats, &labels, &loss)
                .map_err(|e| match e {
                    Error::Diverged { loss, .. } => Error::Diverged {
                        job: job.to_string(),
                        step,
                        loss,
                    },
                    other => other,
                })?;
            if !value.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged {
                    job: job.to_string(),
                    step,
                    loss: value,
                });
            }
            opt.step(&mut params, &grads, schedule.lr_at(step), &trainable);
            ema.update_ranges(&params, &trainable)?;
            step += 1;
        }
        if let Some(v) = val {
            let model = objective.model(ema.weights())?;
            let preds = nn::predict(&model, v.features())?;
            let score = balanced_accuracy(&preds, v.labels(), v.num_classes())?;
            if best.as_ref().is_none_or(|(b, _, _)| score > *b) {
                best = Some((score, epoch, ema.weights().to_vec()));
            }
        }
    }
    let (weights, best_epoch, best_val_bal_acc) = match best {
        Some((score, epoch, w)) => (objective.model(&w)?, Some(epoch), Some(score)),
        None => (objective.model(ema.weights())?, None, None),
    };
    if !weights.is_finite() {
        return Err(Error::Diverged {
            job: job.to_string(),
            step,
            loss: f64::NAN,
        });
    }
    Ok(TrainOutcome {
        weights,
        best_epoch,
        best_val_bal_acc,
        steps: step,
    })
}
