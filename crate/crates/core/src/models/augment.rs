//! Closing part of the class-imbalance gap with generated incident buckets.

use cyclesense_numerics::NumericsError;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::gan::{Gan, GanConfig, GanLosses};
use crate::data::{Dataset, Example, SplitTag};
use crate::spectral::SensorTensorSet;

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("no incident buckets to learn from")]
    NoPositives,
    #[error("only the training split may be augmented, got {0:?}")]
    NotTrainingSplit(SplitTag),
    #[error("gap fraction {0} outside (0, 1)")]
    GapFraction(f64),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// `floor(gap_fraction * (n_neg - n_pos))`, zero when positives dominate.
///
/// The fraction is taken in parts per million so the floor is computed on
/// integers: 0.1 * 90 is exactly 9, not 8.999….
pub fn augment_count(n_pos: usize, n_neg: usize, gap_fraction: f64) -> usize {
    let gap = n_neg.saturating_sub(n_pos) as u128;
    let per_million = (gap_fraction * 1e6).round().max(0.0) as u128;
    (gap * per_million / 1_000_000) as usize
}

/// Trains a GAN on the incident buckets of a training split.
pub fn fit_gan(
    train: &Dataset,
    config: GanConfig,
    seed: u64,
    mut on_step: impl FnMut(usize, &GanLosses),
) -> Result<Gan, AugmentError> {
    if train.tag != SplitTag::Train {
        return Err(AugmentError::NotTrainingSplit(train.tag));
    }
    let positives: Vec<&SensorTensorSet> = train
        .examples
        .iter()
        .filter(|e| e.label != 0)
        .map(|e| &e.tensors)
        .collect();
    if positives.is_empty() {
        return Err(AugmentError::NoPositives);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let batch = config.batch_size.min(positives.len());
    let steps = config.steps;
    let mut gan = Gan::new(config, train.spec, seed)?;
    for step in 0..steps {
        let idx = sample(&mut rng, positives.len(), batch);
        let real: Vec<&SensorTensorSet> = idx.iter().map(|i| positives[i]).collect();
        let losses = gan.train_step(&real)?;
        on_step(step, &losses);
    }
    Ok(gan)
}

/// Appends `augment_count` generated incidents (label 1, no time-domain
/// rows) to a training split.
pub fn augment_dataset(train: &Dataset, gan: &mut Gan, gap_fraction: f64, seed: u64) -> Result<Dataset, AugmentError> {
    if train.tag != SplitTag::Train {
        return Err(AugmentError::NotTrainingSplit(train.tag));
    }
    if !(gap_fraction > 0.0 && gap_fraction < 1.0) {
        return Err(AugmentError::GapFraction(gap_fraction));
    }
    let (n_pos, n_neg) = train.class_counts();
    if n_pos == 0 {
        return Err(AugmentError::NoPositives);
    }
    let n = augment_count(n_pos, n_neg, gap_fraction);
    let mut out = train.clone();
    for (i, tensors) in gan.generate(n, seed)?.into_iter().enumerate() {
        out.examples.push(Example {
            ride_hash: 0,
            bucket_index: i as u32,
            label: 1,
            samples: None,
            tensors,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn count_arithmetic() {
        assert_eq!(augment_count(100, 1000, 0.10), 90);
        assert_eq!(augment_count(50, 50, 0.10), 0);
        assert_eq!(augment_count(60, 50, 0.10), 0);
        assert_eq!(augment_count(0, 9, 0.10), 0);
        assert_eq!(augment_count(0, 10, 0.10), 1);
    }
}
