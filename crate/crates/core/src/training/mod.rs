//! Splits, class weights, subnet pretraining, stacked training and the
//! hyperparameter sweep.

pub mod grid;
pub mod learners;
pub mod split;
pub mod trainer;

use cyclesense_numerics::NumericsError;
use thiserror::Error;

use crate::eval::EvalError;

pub use grid::{grid_search, write_grid_csv, GridPoint, GridResult, GridSpace};
pub use learners::{
    pretrain_subnets, predict_cyclesense, predict_fcn, CycleSenseLearner, FcnLearner, StackedLearner, SubnetLearner,
};
pub use split::{class_weights, split_rides, RideSplit, SplitPlan};
pub use trainer::{fit, EpochRecord, History, Learner, TrainConfig};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("need at least 5 rides to split, got {n}")]
    TooFewRides { n: usize },
    #[error("both classes must be present")]
    SingleClass,
    #[error("loss became {loss} at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize, loss: f64 },
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("validation: {0}")]
    Eval(#[from] EvalError),
}
