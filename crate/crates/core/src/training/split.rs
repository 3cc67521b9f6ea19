//! Ride-level train/validation/test assignment and class weights.

use cyclesense_numerics::ops::ClassWeights;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::data::SplitTag;

pub const MIN_RIDES: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitPlan {
    pub seed: u64,
    /// Train and validation shares; the test split takes the rest.
    pub train: f64,
    pub val: f64,
}

impl Default for SplitPlan {
    fn default() -> Self {
        Self {
            seed: 0,
            train: 0.6,
            val: 0.2,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RideSplit {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl RideSplit {
    pub fn ids(&self, tag: SplitTag) -> &[String] {
        match tag {
            SplitTag::Train => &self.train,
            SplitTag::Val => &self.val,
            SplitTag::Test => &self.test,
        }
    }

    pub fn tag_of(&self, ride_id: &str) -> Option<SplitTag> {
        SplitTag::ALL
            .into_iter()
            .find(|&t| self.ids(t).iter().any(|r| r == ride_id))
    }
}

/// Sorts and de-duplicates the ids, shuffles them with the plan's seed and
/// cuts at `round(train·n)` and `round((train + val)·n)` rides.
pub fn split_rides(ride_ids: &[String], plan: &SplitPlan) -> Result<RideSplit, TrainError> {
    if !(plan.train > 0.0 && plan.val >= 0.0 && plan.train + plan.val < 1.0) {
        return Err(TrainError::InvalidConfig(format!(
            "split ratios {} / {}",
            plan.train, plan.val
        )));
    }
    let mut ids = ride_ids.to_vec();
    ids.sort();
    ids.dedup();
    let n = ids.len();
    if n < MIN_RIDES {
        return Err(TrainError::TooFewRides { n });
    }
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(plan.seed));
    let n_train = (plan.train * n as f64).round() as usize;
    let n_val = (plan.val * n as f64).round() as usize;
    let test = ids.split_off(n_train + n_val);
    let val = ids.split_off(n_train);
    Ok(RideSplit { train: ids, val, test })
}

/// `w_c = n / (2·n_c)`.
pub fn class_weights(n_pos: usize, n_neg: usize) -> Result<ClassWeights, TrainError> {
    if n_pos == 0 || n_neg == 0 {
        return Err(TrainError::SingleClass);
    }
    let n = (n_pos + n_neg) as f64;
    Ok(ClassWeights {
        positive: n / (2.0 * n_pos as f64),
        negative: n / (2.0 * n_neg as f64),
    })
}
