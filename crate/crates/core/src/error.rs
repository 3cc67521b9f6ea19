use std::path::PathBuf;

use thiserror::Error;

use crate::eval::EvalError;
use crate::models::AugmentError;
use crate::preprocess::store::StoreError;
use crate::ride_format::FormatError;
use crate::spectral::SpectralError;
use crate::synthdata::SynthError;
use crate::training::TrainError;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Numerics(#[from] cyclesense_numerics::NumericsError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| Error::Io { path, source }
    }

    /// Whether the failure stems from invalid user input rather than a
    /// runtime fault.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::Json(_)
                | Error::Spectral(_)
                | Error::Synth(SynthError::Invalid(_))
                | Error::Train(TrainError::InvalidConfig(_) | TrainError::TooFewRides { .. })
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
