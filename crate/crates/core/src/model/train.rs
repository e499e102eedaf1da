//! Mini-batch SGD on binary cross-entropy with early stopping.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::TrainedModel;
use crate::error::ModelError;
use crate::preprocess::{apply_augmentation, sample_augmentation, NormalizedBScan};
use crate::rng::{derive_seed, seeded};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingItem {
    pub image: NormalizedBScan,
    pub positive: bool,
}

impl TrainingItem {
    pub fn new(image: NormalizedBScan, positive: bool) -> Self {
        Self { image, positive }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StopVerdict {
    /// This epoch is the new best (strict argmin so far).
    pub new_best: bool,
    pub stop: bool,
}

/// Patience-based stopping rule.
///
/// The patience counter resets only when the validation loss beats the
/// last counted improvement by more than `min_delta`. The kept epoch is the
/// argmin of all observed losses, earliest on ties.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    min_delta: f64,
    reference: f64,
    wait: usize,
    best_loss: f64,
    best_epoch: Option<usize>,
    epochs_seen: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize, min_delta: f64) -> Self {
        Self {
            patience,
            min_delta,
            reference: f64::INFINITY,
            wait: 0,
            best_loss: f64::INFINITY,
            best_epoch: None,
            epochs_seen: 0,
        }
    }

    pub fn observe(&mut self, val_loss: f64) -> StopVerdict {
        let epoch = self.epochs_seen;
        self.epochs_seen += 1;
        if val_loss < self.reference - self.min_delta {
            self.reference = val_loss;
            self.wait = 0;
        } else {
            self.wait += 1;
        }
        let new_best = val_loss < self.best_loss;
        if new_best {
            self.best_loss = val_loss;
            self.best_epoch = Some(epoch);
        }
        StopVerdict { new_best, stop: self.wait >= self.patience }
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best_loss
    }

    pub fn epochs_seen(&self) -> usize {
        self.epochs_seen
    }
}

fn check_split(items: &[TrainingItem], name: &'static str) -> Result<(), ModelError> {
    let pos = items.iter().filter(|i| i.positive).count();
    if pos == 0 || pos == items.len() {
        return Err(ModelError::DegenerateSplit(name));
    }
    Ok(())
}

/// Trains a copy of `model` and returns the weights of the best validation
/// epoch. Every item gets a fresh augmentation draw keyed by
/// (seed, epoch, item index); validation images are never augmented.
pub fn train(
    model: &TrainedModel,
    train_items: &[TrainingItem],
    val_items: &[TrainingItem],
    tc: &TrainConfig,
) -> Result<TrainedModel, ModelError> {
    tc.validate()?;
    check_split(train_items, "train")?;
    check_split(val_items, "validation")?;
    for item in train_items.iter().chain(val_items) {
        model.check_shape(&item.image)?;
    }

    let net = model.network().clone();
    let mut params = model.params().to_vec();
    let mut best = params.clone();
    let mut history = Vec::new();
    let mut stopper = EarlyStopping::new(tc.patience, tc.min_delta);
    let mut order: Vec<usize> = (0..train_items.len()).collect();

    for epoch in 0..tc.max_epochs {
        order.sort_unstable();
        order.shuffle(&mut seeded(derive_seed(tc.seed, &[0x5AFF1E, epoch as u64])));

        let mut loss_sum = 0.0;
        for batch in order.chunks(tc.batch_size) {
            // Per-example gradients are computed independently and summed in
            // batch order, so the result does not depend on thread count.
            let per_item: Vec<(f64, Vec<f64>)> = batch
                .par_iter()
                .map(|&idx| {
                    let item = &train_items[idx];
                    let aug = sample_augmentation(&tc.augment, tc.seed, epoch as u64, idx as u64);
                    let img = apply_augmentation(&item.image, &aug);
                    let mut g = vec![0.0; params.len()];
                    let loss = net.loss_and_grad(&params, img.pixels(), item.positive, &mut g);
                    (loss, g)
                })
                .collect();
            let scale = tc.learning_rate / batch.len() as f64;
            let mut grad = vec![0.0; params.len()];
            for (loss, g) in &per_item {
                loss_sum += loss;
                for (a, b) in grad.iter_mut().zip(g) {
                    *a += b;
                }
            }
            for (p, g) in params.iter_mut().zip(&grad) {
                *p -= scale * g;
            }
        }
        let train_loss = loss_sum / train_items.len() as f64;
        let val_loss = mean_loss(&net, &params, val_items);
        if !train_loss.is_finite() || !val_loss.is_finite() || params.iter().any(|p| !p.is_finite()) {
            return Err(ModelError::DivergedLoss { epoch });
        }
        history.push(EpochRecord { train_loss, val_loss });
        log::debug!("{} epoch {epoch}: train {train_loss:.5} val {val_loss:.5}", model.task());

        let verdict = stopper.observe(val_loss);
        if verdict.new_best {
            best.copy_from_slice(&params);
        }
        if verdict.stop {
            break;
        }
    }

    let weights = best.iter().map(|&p| p as f32).collect();
    let mut out = TrainedModel::from_parts(model.config().clone(), model.task(), weights);
    out.history = history;
    out.best_epoch = stopper.best_epoch();
    Ok(out)
}

fn mean_loss(net: &super::Network, params: &[f64], items: &[TrainingItem]) -> f64 {
    let losses: Vec<f64> = items
        .par_iter()
        .map(|item| net.loss(params, item.image.pixels(), item.positive))
        .collect();
    losses.iter().sum::<f64>() / items.len() as f64
}
