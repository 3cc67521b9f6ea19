//! Incident classifiers and the incident-bucket generator.

pub mod augment;
pub mod cyclesense;
pub mod fcn;
pub mod gan;
pub mod heuristic;

use cyclesense_numerics::layers::CellKind;
use serde::{Deserialize, Serialize};

pub use augment::{augment_count, augment_dataset, AugmentError};
pub use cyclesense::{batch_inputs, sensor_batch, CycleSense, CycleSenseConfig, CycleSenseNet};
pub use fcn::{Fcn, FcnConfig};
pub use gan::{Gan, GanConfig, GanLosses};
pub use heuristic::{heuristic_scores, HeuristicConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sensor {
    Accel = 0,
    Gyro = 1,
    Gps = 2,
}

pub const SENSORS: [Sensor; 3] = [Sensor::Accel, Sensor::Gyro, Sensor::Gps];

impl Sensor {
    pub fn as_str(self) -> &'static str {
        match self {
            Sensor::Accel => "accel",
            Sensor::Gyro => "gyro",
            Sensor::Gps => "gps",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RnnCell {
    Gru,
    Lstm,
}

impl RnnCell {
    pub fn as_str(self) -> &'static str {
        match self {
            RnnCell::Gru => "gru",
            RnnCell::Lstm => "lstm",
        }
    }
}

impl From<RnnCell> for CellKind {
    fn from(c: RnnCell) -> Self {
        match c {
            RnnCell::Gru => CellKind::Gru,
            RnnCell::Lstm => CellKind::Lstm,
        }
    }
}
