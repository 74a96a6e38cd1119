use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{augment_sample, AugmentConfig};
use crate::error::{invalid, Error, Result};
use crate::network::Model;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::{accuracy, backward, cross_entropy, AdadeltaState, PlateauScheduler};

/// Which accuracy decides the best checkpoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointMonitor {
    ValAccuracy,
    TrainAccuracy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub rho: f64,
    pub epsilon: f64,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub checkpoint_monitor: CheckpointMonitor,
    pub seed: u64,
    pub augment: AugmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            epochs: 200,
            learning_rate: 1.8,
            rho: 0.95,
            epsilon: 1e-6,
            plateau_factor: 0.1,
            plateau_patience: 5,
            checkpoint_monitor: CheckpointMonitor::ValAccuracy,
            seed: 0,
            augment: AugmentConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return invalid("batch_size must be >= 1");
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return invalid("plateau_factor must lie in (0, 1)");
        }
        if !(self.rho > 0.0 && self.rho < 1.0) || !(self.epsilon > 0.0) {
            return invalid("rho must lie in (0, 1) and epsilon be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return invalid("learning_rate must be positive");
        }
        self.augment.validate()
    }
}

/// Images of shape `(1, H, W, C)` with integer labels.
#[derive(Clone, Debug, Default)]
pub struct LabeledSet<T> {
    pub images: Vec<Tensor<T>>,
    pub labels: Vec<usize>,
}

impl<T: Scalar> LabeledSet<T> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn batch(&self, idx: &[usize]) -> Result<(Tensor<T>, Vec<usize>)> {
        let imgs: Vec<Tensor<T>> = idx.iter().map(|&i| self.images[i].clone()).collect();
        Ok((Tensor::stack(&imgs)?, idx.iter().map(|&i| self.labels[i]).collect()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["epoch", "lr", "train_loss", "train_acc", "val_loss", "val_acc"])?;
        for r in &self.epochs {
            out.write_record(&[
                r.epoch.to_string(),
                r.lr.to_string(),
                r.train_loss.to_string(),
                r.train_acc.to_string(),
                r.val_loss.to_string(),
                r.val_acc.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Result of [`fit`].
pub struct FitOutcome<T> {
    /// Parameters with the best monitored accuracy.
    pub best: Model<T>,
    /// Optimizer state at the time `best` was recorded.
    pub best_optimizer: AdadeltaState<T>,
    pub best_accuracy: f64,
    pub best_epoch: usize,
    /// Parameters after the last epoch.
    pub last: Model<T>,
    pub history: History,
}

/// Inference-mode loss and accuracy over a set.
pub fn evaluate<T: Scalar>(model: &Model<T>, set: &LabeledSet<T>, batch: usize) -> Result<(f64, f64)> {
    if set.is_empty() {
        return invalid("cannot evaluate an empty set");
    }
    let idx: Vec<usize> = (0..set.len()).collect();
    let (mut loss, mut hits) = (0.0, 0.0);
    for chunk in idx.chunks(batch.max(1)) {
        let (x, y) = set.batch(chunk)?;
        let p = model.infer(&x)?;
        loss += cross_entropy(&p, &y)? * chunk.len() as f64;
        hits += accuracy(&p, &y)? * chunk.len() as f64;
    }
    Ok((loss / set.len() as f64, hits / set.len() as f64))
}

/// Trains with seeded shuffling, per-sample augmentation, Adadelta and a
/// plateau schedule, keeping the parameters with the best monitored accuracy.
pub fn fit<T: Scalar>(
    mut model: Model<T>,
    train: &LabeledSet<T>,
    val: &LabeledSet<T>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<FitOutcome<T>> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return invalid("train and validation splits must be non-empty");
    }
    if train.images.len() != train.len() || val.images.len() != val.len() {
        return invalid("image and label counts differ");
    }
    let mut opt = AdadeltaState::with_hyper(&model, cfg.learning_rate, cfg.rho, cfg.epsilon);
    let mut scheduler = PlateauScheduler::new(cfg.plateau_factor, cfg.plateau_patience);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    let mut history = History::default();
    let mut best: Option<(Model<T>, AdadeltaState<T>, f64, usize)> = None;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let lr = opt.lr;
        let (mut loss_sum, mut hit_sum) = (0.0, 0.0);
        for chunk in order.chunks(cfg.batch_size) {
            let base = ((epoch - 1) * train.len()) as u64;
            let imgs = chunk
                .par_iter()
                .map(|&i| augment_sample(&train.images[i], &cfg.augment, base + i as u64))
                .collect::<Result<Vec<_>>>()?;
            let x = Tensor::stack(&imgs)?;
            let y: Vec<usize> = chunk.iter().map(|&i| train.labels[i]).collect();

            let cache = model.forward_train(&x, &mut dropout_rng)?;
            let loss = cross_entropy(&cache.probs, &y)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    detail: format!("batch loss {}", loss),
                });
            }
            loss_sum += loss * chunk.len() as f64;
            hit_sum += accuracy(&cache.probs, &y)? * chunk.len() as f64;
            let grads = backward(&model, &cache, &y)?;
            opt.step(&mut model, &grads)?;
            model.update_moving_stats(&cache);
        }
        let (val_loss, val_acc) = evaluate(&model, val, cfg.batch_size)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                detail: format!("validation loss {}", val_loss),
            });
        }
        let record = EpochRecord {
            epoch,
            lr,
            train_loss: loss_sum / train.len() as f64,
            train_acc: hit_sum / train.len() as f64,
            val_loss,
            val_acc,
        };
        let monitored = match cfg.checkpoint_monitor {
            CheckpointMonitor::ValAccuracy => record.val_acc,
            CheckpointMonitor::TrainAccuracy => record.train_acc,
        };
        if best.as_ref().is_none_or(|b| monitored > b.2) {
            best = Some((model.clone(), opt.clone(), monitored, epoch));
        }
        on_epoch(&record);
        log::info!(
            "epoch {:>3} lr {:.4} loss {:.4} acc {:.4} val_loss {:.4} val_acc {:.4}",
            record.epoch,
            record.lr,
            record.train_loss,
            record.train_acc,
            record.val_loss,
            record.val_acc
        );
        history.epochs.push(record);
        opt.lr = scheduler.observe(val_loss, opt.lr);
    }

    let (best, best_optimizer, best_accuracy, best_epoch) = match best {
        Some(b) => b,
        None => (model.clone(), opt.clone(), 0.0, 0),
    };
    Ok(FitOutcome {
        best,
        best_optimizer,
        best_accuracy,
        best_epoch,
        last: model,
        history,
    })
}
