//! Fully convolutional baseline over time-domain accelerometer and GPS
//! velocity channels. Gyroscope channels are never read.

use cyclesense_numerics::layers::{BatchNormConfig, ConvBlock, ConvBlockConfig, Dense, PaddingMode};
use cyclesense_numerics::{Graph, NumericsError, ParamCount, ParamStore, Real, Result, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Example;
use crate::preprocess::{BUCKET_LEN, CHANNELS, CH_ACC, CH_VEL};

/// Input channels, in order.
pub const FCN_CHANNELS: [usize; 5] = [CH_ACC, CH_ACC + 1, CH_ACC + 2, CH_VEL, CH_VEL + 1];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FcnConfig {
    pub filters: Vec<usize>,
    pub kernels: Vec<usize>,
    pub dropout: f64,
}

impl Default for FcnConfig {
    fn default() -> Self {
        Self {
            filters: vec![128, 256, 128],
            kernels: vec![8, 5, 3],
            dropout: 0.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FcnNet {
    pub config: FcnConfig,
    pub blocks: Vec<ConvBlock>,
    pub head: Dense,
}

impl FcnNet {
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &mut ParamStore<T>, x: Var) -> Result<Var> {
        let mut h = x;
        for b in &self.blocks {
            h = b.forward(g, store, h)?;
        }
        let pooled = g.global_avg_pool(h)?;
        let logit = self.head.forward(g, store, pooled)?;
        Ok(g.sigmoid(logit))
    }
}

pub struct Fcn<T: Real = f32> {
    pub net: FcnNet,
    pub store: ParamStore<T>,
}

impl<T: Real> Fcn<T> {
    pub fn new(config: FcnConfig, seed: u64) -> Result<Self> {
        if config.filters.is_empty()
            || config.filters.len() != config.kernels.len()
            || config.filters.iter().chain(&config.kernels).any(|&v| v == 0)
        {
            return Err(NumericsError::Config(format!(
                "fcn filters {:?} and kernels {:?}",
                config.filters, config.kernels
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let mut blocks = Vec::new();
        let mut cin = FCN_CHANNELS.len();
        for (i, (&ch, &k)) in config.filters.iter().zip(&config.kernels).enumerate() {
            let cfg = ConvBlockConfig {
                kernel: [k, 1, 1],
                padding: PaddingMode::Same,
                channels: ch,
                dropout: config.dropout,
                batch_norm: BatchNormConfig::default(),
            };
            blocks.push(ConvBlock::new(&mut store, &format!("fcn.{i}"), cin, cfg, &mut rng)?);
            cin = ch;
        }
        let head = Dense::new(&mut store, "fcn.head", cin, 1, &mut rng)?;
        Ok(Self {
            net: FcnNet { config, blocks, head },
            store,
        })
    }

    pub fn param_count(&self) -> ParamCount {
        self.store.count()
    }

    pub fn cast<U: Real>(&self) -> Fcn<U> {
        Fcn {
            net: self.net.clone(),
            store: self.store.cast(),
        }
    }

    /// `x: [B, 100, 1, 1, 5]` to probabilities `[B, 1]`.
    pub fn forward(&mut self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        self.net.forward(g, &mut self.store, x)
    }

    pub fn predict(&mut self, examples: &[&Example]) -> Result<Vec<f64>> {
        let mut g = Graph::new(false, 0);
        let x = g.input(fcn_batch(examples)?);
        let p = self.forward(&mut g, x)?;
        Ok(g.value(p).data().iter().map(|v| v.as_f64()).collect())
    }
}

/// `[B, 100, 1, 1, 5]` from the time-domain rows of each example.
pub fn fcn_batch<T: Real>(examples: &[&Example]) -> Result<Tensor<T>> {
    let mut data = Vec::with_capacity(examples.len() * BUCKET_LEN * FCN_CHANNELS.len());
    for e in examples {
        let rows: &[[f32; CHANNELS]] = e
            .samples
            .as_deref()
            .ok_or_else(|| NumericsError::Config("fcn needs time-domain samples".into()))?;
        if rows.len() != BUCKET_LEN {
            return Err(NumericsError::Config(format!("bucket of {} rows", rows.len())));
        }
        for r in rows {
            data.extend(FCN_CHANNELS.iter().map(|&c| T::of(r[c] as f64)));
        }
    }
    Tensor::new(&[examples.len(), BUCKET_LEN, 1, 1, FCN_CHANNELS.len()], data)
}
