//! Mini-batch training with best-dev selection.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::N_CLASSES;
use crate::error::{Error, Result};
use crate::eval::metrics::{macro_f1, ConfusionMatrix};
use crate::scalar::Scalar;

use super::network::{batch_loss_and_grad, forward, Example};
use super::optim::{Adam, AdamConfig};
use super::params::{ModelShape, Params, DEFAULT_HIDDEN};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub clip_norm: f64,
    pub hidden: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            learning_rate: adam.learning_rate,
            batch_size: 32,
            epochs: 20,
            seed: 0,
            beta1: adam.beta1,
            beta2: adam.beta2,
            epsilon: adam.epsilon,
            clip_norm: adam.clip_norm,
            hidden: DEFAULT_HIDDEN,
        }
    }
}

impl TrainConfig {
    /// Rejects configurations the trainer cannot run. A zero learning rate is allowed
    /// so that frozen runs can be reproduced.
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(
                "train.learning_rate",
                "must be finite and non-negative",
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be at least 1"));
        }
        if self.epochs == 0 {
            return Err(Error::config("train.epochs", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.beta1) {
            return Err(Error::config("train.beta1", "must lie in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("train.beta2", "must lie in [0, 1)"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::config("train.epsilon", "must be positive"));
        }
        if !(self.clip_norm >= 0.0) {
            return Err(Error::config("train.clip_norm", "must be non-negative"));
        }
        if self.hidden == 0 {
            return Err(Error::config("train.hidden", "must be at least 1"));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            clip_norm: self.clip_norm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Class-weighted mean loss over the epoch's batches.
    pub train_loss: f64,
    /// `None` when there is no dev split.
    pub dev_macro_f1: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    /// Parameters from the best dev epoch (the last epoch without a dev split).
    pub params: Params<T>,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

/// Inverse-frequency weights `N / (8 · N_c)` over the training labels.
pub fn class_weights(labels: &[usize]) -> Result<[f64; N_CLASSES]> {
    if labels.is_empty() {
        return Err(Error::Data("empty train split".into()));
    }
    let mut counts = [0usize; N_CLASSES];
    for &y in labels {
        if y >= N_CLASSES {
            return Err(Error::Data(format!("label {y} out of range")));
        }
        counts[y] += 1;
    }
    let mut out = [0.0; N_CLASSES];
    for (c, w) in out.iter_mut().enumerate() {
        if counts[c] == 0 {
            return Err(Error::ClassAbsent {
                class: c,
                split: "train".into(),
            });
        }
        *w = labels.len() as f64 / (N_CLASSES * counts[c]) as f64;
    }
    Ok(out)
}

/// The per-epoch batches used by [`train`]: a seeded shuffle of `0..n` cut into
/// consecutive chunks.
pub fn batch_schedule(
    n: usize,
    batch_size: usize,
    epochs: usize,
    seed: u64,
) -> Vec<Vec<Vec<usize>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5348_5546_464c_4500);
    (0..epochs)
        .map(|_| {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            order
                .chunks(batch_size.max(1))
                .map(<[usize]>::to_vec)
                .collect()
        })
        .collect()
}

/// Returns `(argmax class, attention weights)` for one example.
pub fn predict<T: Scalar>(params: &Params<T>, ex: &Example<T>) -> Result<(usize, Vec<T>)> {
    let cache = forward(params, ex)?;
    let mut best = 0;
    for (k, z) in cache.logits.iter().enumerate() {
        if *z > cache.logits[best] {
            best = k;
        }
    }
    Ok((best, cache.alpha))
}

pub fn confusion<T: Scalar>(
    params: &Params<T>,
    examples: &[Example<T>],
) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::default();
    for ex in examples {
        let (p, _) = predict(params, ex)?;
        cm.add(ex.label, p);
    }
    Ok(cm)
}

/// Trains a freshly initialized model on `train_set`, selecting the epoch with the best
/// dev Macro F1 (earliest on ties).
pub fn train<T: Scalar>(
    shape: &ModelShape,
    train_set: &[Example<T>],
    dev_set: &[Example<T>],
    config: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    let schedule = batch_schedule(
        train_set.len(),
        config.batch_size,
        config.epochs,
        config.seed,
    );
    train_on_schedule(shape, train_set, dev_set, config, &schedule)
}

/// [`train`] with an explicit batch schedule (`schedule[epoch][step]` lists example indices).
pub fn train_on_schedule<T: Scalar>(
    shape: &ModelShape,
    train_set: &[Example<T>],
    dev_set: &[Example<T>],
    config: &TrainConfig,
    schedule: &[Vec<Vec<usize>>],
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::Data("empty train split".into()));
    }
    let labels: Vec<usize> = train_set.iter().map(|e| e.label).collect();
    let weights = class_weights(&labels)?;
    let mut params = Params::<T>::init(shape, config.seed);
    params.head.class_weights = weights.iter().map(|&w| T::of(w)).collect();
    let mut opt = Adam::new(config.adam(), &params);

    let mut history = Vec::with_capacity(schedule.len());
    let mut best: Option<(f64, usize, Params<T>)> = None;
    for (epoch, batches) in schedule.iter().enumerate() {
        let mut loss_sum = 0.0;
        let mut weight_sum = 0.0;
        for batch in batches {
            if batch.iter().any(|&i| i >= train_set.len()) {
                return Err(Error::Data(format!(
                    "batch index out of range in epoch {epoch}"
                )));
            }
            let (loss, grads) = batch_loss_and_grad(&params, train_set, batch)?;
            let w: f64 = batch.iter().map(|&i| weights[train_set[i].label]).sum();
            loss_sum += loss.as_f64() * w;
            weight_sum += w;
            opt.step(&mut params, &grads);
            if !params.is_finite() {
                return Err(Error::NonFinite(format!(
                    "parameters after epoch {epoch} update"
                )));
            }
        }
        let dev_macro_f1 = if dev_set.is_empty() {
            None
        } else {
            Some(macro_f1(&confusion(&params, dev_set)?)?)
        };
        history.push(EpochRecord {
            epoch,
            train_loss: if weight_sum > 0.0 {
                loss_sum / weight_sum
            } else {
                0.0
            },
            dev_macro_f1,
        });
        let score = dev_macro_f1.unwrap_or(f64::INFINITY);
        let improved = match &best {
            None => true,
            Some((s, _, _)) => score > *s || dev_macro_f1.is_none(),
        };
        if improved {
            best = Some((score, epoch, params.clone()));
        }
    }
    let (_, best_epoch, params) =
        best.ok_or_else(|| Error::config("train.epochs", "no epochs scheduled"))?;
    Ok(TrainOutcome {
        params,
        best_epoch,
        history,
    })
}
