//! Run configuration shared by every workflow. Every field has a default,
//! so `{}` is a valid file; unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::ExperimentConfig;
use crate::ride_format::DatasetPartition;
use crate::seed::derive_seed;
use crate::synthdata::SynthSpec;
use crate::training::GridSpace;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root of every random stream; children are derived by name.
    pub seed: u64,
    /// Ride directory for `scan` and `preprocess`.
    pub data_dir: Option<PathBuf>,
    pub region: Option<String>,
    pub partition: Option<DatasetPartition>,
    pub synth: SynthSpec,
    pub experiment: ExperimentConfig,
    pub grid: GridSpace,
    /// Maximum number of grid points trained.
    pub grid_budget: usize,
    /// Epochs per grid point.
    pub grid_epochs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            data_dir: None,
            region: None,
            partition: None,
            synth: SynthSpec::default(),
            experiment: ExperimentConfig::default(),
            grid: GridSpace::default(),
            grid_budget: 54,
            grid_epochs: 5,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.experiment.validate()?;
        self.synth.validate()?;
        if self.grid_budget == 0 || self.grid_epochs == 0 {
            return Err(Error::Config("grid_budget and grid_epochs must be positive".into()));
        }
        Ok(())
    }

    /// Seed of the subsystem `name`.
    pub fn seed_for(&self, name: &str) -> u64 {
        derive_seed(self.seed, name)
    }

    /// Split, synthetic data and training seeds follow the root seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.synth.seed = derive_seed(seed, "synth");
        self.experiment.data.split.seed = derive_seed(seed, "split");
        self
    }
}
