//! Minibatch training with early stopping on validation AUC.

use std::path::Path;

use cyclesense_numerics::ops::ClassWeights;
use cyclesense_numerics::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::eval::roc_auc;
use crate::seed::derive_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Epochs without a validation AUC improvement before stopping.
    pub patience: usize,
    pub class_weights: bool,
    pub augmentation: bool,
    /// Pretrain and freeze the sensor subnets, then train the rest.
    pub stacking: bool,
    pub pretrain_epochs: usize,
    pub pretrain_patience: usize,
    /// Batch size for inference passes.
    pub eval_batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            learning_rate: 1e-4,
            batch_size: 64,
            patience: 10,
            class_weights: true,
            augmentation: true,
            stacking: true,
            pretrain_epochs: 20,
            pretrain_patience: 5,
            eval_batch_size: 128,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if self.epochs == 0 || self.batch_size == 0 || self.eval_batch_size == 0 {
            return bad("epochs and batch sizes must be positive".into());
        }
        if self.patience >= self.epochs {
            return bad(format!("patience {} must be below epochs {}", self.patience, self.epochs));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate {}", self.learning_rate));
        }
        Ok(())
    }

    /// The same schedule for subnet pretraining.
    pub fn pretrain(&self) -> Self {
        Self {
            epochs: self.pretrain_epochs,
            patience: self.pretrain_patience.min(self.pretrain_epochs.saturating_sub(1)),
            ..self.clone()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_auc: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose weights were restored.
    pub best_epoch: usize,
    pub best_auc: f64,
}

impl History {
    pub fn write_csv(&self, path: &Path) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.epochs {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// A model bound to its training and validation examples.
pub trait Learner {
    fn n_train(&self) -> usize;
    /// Forward, backward and one optimizer step on the given training
    /// indices; returns the batch loss.
    fn train_batch(&mut self, batch: &[usize], weights: ClassWeights, seed: u64) -> Result<f64, TrainError>;
    /// Inference-mode probabilities for the validation examples.
    fn validation_scores(&mut self) -> Result<Vec<f64>, TrainError>;
    fn validation_labels(&self) -> Vec<u8>;
    fn snapshot(&self) -> Vec<Tensor<f32>>;
    fn restore(&mut self, values: Vec<Tensor<f32>>);
}

/// Shuffled minibatch epochs; keeps the weights of the best validation AUC
/// and stops after `patience` epochs without improvement.
pub fn fit<L: Learner>(
    learner: &mut L,
    cfg: &TrainConfig,
    weights: ClassWeights,
    seed: u64,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<History, TrainError> {
    cfg.validate()?;
    let n = learner.n_train();
    if n == 0 {
        return Err(TrainError::InvalidConfig("empty training set".into()));
    }
    let labels = learner.validation_labels();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "shuffle"));
    let mut history = History {
        best_auc: f64::NEG_INFINITY,
        ..History::default()
    };
    let mut best = learner.snapshot();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let batch_seed = derive_seed(seed, &format!("dropout/{epoch}/{b}"));
            let loss = learner.train_batch(batch, weights, batch_seed)?;
            if !loss.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, batch: b, loss });
            }
            total += loss * batch.len() as f64;
        }
        let scores = learner.validation_scores()?;
        let val_auc = roc_auc(&scores, &labels)?.auc;
        let rec = EpochRecord {
            epoch,
            train_loss: total / n as f64,
            val_auc,
        };
        on_epoch(&rec);
        history.epochs.push(rec);
        if val_auc > history.best_auc {
            history.best_auc = val_auc;
            history.best_epoch = epoch;
            best = learner.snapshot();
        } else if epoch - history.best_epoch >= cfg.patience {
            break;
        }
    }
    learner.restore(best);
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Replays a fixed AUC sequence; the "weights" are the epoch counter.
    struct Scripted {
        aucs: Vec<f64>,
        epoch: usize,
        batches: usize,
    }

    impl Learner for Scripted {
        fn n_train(&self) -> usize {
            4
        }
        fn train_batch(&mut self, _: &[usize], _: ClassWeights, _: u64) -> Result<f64, TrainError> {
            self.batches += 1;
            Ok(0.5)
        }
        fn validation_scores(&mut self) -> Result<Vec<f64>, TrainError> {
            let a = self.aucs[self.epoch];
            self.epoch += 1;
            // One positive, one negative: AUC is 1, 0.5 or 0.
            Ok(vec![a, 0.5])
        }
        fn validation_labels(&self) -> Vec<u8> {
            vec![1, 0]
        }
        fn snapshot(&self) -> Vec<Tensor<f32>> {
            vec![Tensor::scalar(self.epoch as f32)]
        }
        fn restore(&mut self, v: Vec<Tensor<f32>>) {
            self.epoch = v[0].item() as usize;
        }
    }

    #[test]
    fn early_stopping_contract() {
        let mut l = Scripted {
            aucs: vec![0.0, 1.0, 0.5, 0.0, 0.5, 1.0, 1.0, 1.0],
            epoch: 0,
            batches: 0,
        };
        let cfg = TrainConfig {
            epochs: 8,
            patience: 3,
            batch_size: 2,
            ..TrainConfig::default()
        };
        let h = fit(&mut l, &cfg, ClassWeights::default(), 0, |_| {}).unwrap();
        assert_eq!(h.best_epoch, 1);
        assert_eq!(h.epochs.len(), 1 + 3 + 1);
        assert_eq!(l.epoch, 2, "weights snapshotted right after epoch 1");
        assert_eq!(l.batches, 2 * 5);
    }

    #[test]
    fn patience_below_epochs() {
        let cfg = TrainConfig {
            epochs: 3,
            patience: 3,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
