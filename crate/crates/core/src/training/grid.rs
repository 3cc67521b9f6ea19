//! Hyperparameter sweep ranked by validation AUC.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::models::RnnCell;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpace {
    pub f: Vec<usize>,
    pub rnn_units: Vec<usize>,
    pub rnn_cell: Vec<RnnCell>,
    pub learning_rate: Vec<f64>,
}

impl Default for GridSpace {
    fn default() -> Self {
        Self {
            f: vec![5, 10, 20],
            rnn_units: vec![60, 120, 180],
            rnn_cell: vec![RnnCell::Gru, RnnCell::Lstm],
            learning_rate: vec![1e-3, 1e-4, 1e-5],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub f: usize,
    pub rnn_units: usize,
    pub rnn_cell: RnnCell,
    pub learning_rate: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GridResult {
    pub f: usize,
    pub rnn_units: usize,
    pub rnn_cell: RnnCell,
    pub learning_rate: f64,
    pub val_auc: f64,
}

impl GridResult {
    pub fn point(&self) -> GridPoint {
        GridPoint {
            f: self.f,
            rnn_units: self.rnn_units,
            rnn_cell: self.rnn_cell,
            learning_rate: self.learning_rate,
        }
    }
}

impl GridSpace {
    /// Every combination, `f` varying slowest and learning rate fastest.
    pub fn points(&self) -> Vec<GridPoint> {
        let mut out = Vec::new();
        for &f in &self.f {
            for &rnn_units in &self.rnn_units {
                for &rnn_cell in &self.rnn_cell {
                    for &learning_rate in &self.learning_rate {
                        out.push(GridPoint {
                            f,
                            rnn_units,
                            rnn_cell,
                            learning_rate,
                        });
                    }
                }
            }
        }
        out
    }
}

/// Runs the first `budget` points and ranks them by validation AUC, best
/// first. Ties keep sweep order.
pub fn grid_search(
    space: &GridSpace,
    budget: usize,
    mut run: impl FnMut(&GridPoint) -> Result<f64, TrainError>,
) -> Result<Vec<GridResult>, TrainError> {
    if budget == 0 {
        return Err(TrainError::InvalidConfig("grid budget must be at least one run".into()));
    }
    let mut results = Vec::new();
    for p in space.points().into_iter().take(budget) {
        let val_auc = run(&p)?;
        log::info!("grid {p:?}: val AUC {val_auc:.4}");
        results.push(GridResult {
            f: p.f,
            rnn_units: p.rnn_units,
            rnn_cell: p.rnn_cell,
            learning_rate: p.learning_rate,
            val_auc,
        });
    }
    results.sort_by(|a, b| b.val_auc.total_cmp(&a.val_auc));
    Ok(results)
}

pub fn write_grid_csv(path: &Path, results: &[GridResult]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_path(path)?;
    for r in results {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
