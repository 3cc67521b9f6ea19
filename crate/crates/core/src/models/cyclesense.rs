//! Sensor-fusion network: one convolutional subnet per sensor, a
//! convolutional fusion network, stacked recurrent cells and a sigmoid head.
//!
//! Shapes for a batch of `B` buckets with window length `f`, `T` windows and
//! `C` channels:
//!
//! ```text
//! accel, gyro  [B, 3, f, T, 2] --(3,3,1) valid--> [B, 1, f-2, T, C] --residual--> mean over f --> [B, 1, 1, T, C]
//! gps          [B, 2, 1, T, 1] --(2,1,1) valid--> [B, 1, 1,   T, C] --residual--> [B, 1, 1, T, C]
//! concat sensors [B, 3, 1, T, C] -> [B, 3, T, 1, C] --fusion--> [B, T, 3C] --RNN--> [B, H] --dense--> [B, 1]
//! ```

use cyclesense_numerics::layers::{
    BatchNormConfig, ConvBlock, ConvBlockConfig, Dense, PaddingMode, ResidualBlock, StackedRecurrent,
};
use cyclesense_numerics::{Graph, ParamCount, ParamStore, Real, Result, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{RnnCell, Sensor, SENSORS};
use crate::data::Example;
use crate::spectral::FrequencySpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CycleSenseConfig {
    pub freq: FrequencySpec,
    /// Kernels per convolution.
    pub channels: usize,
    /// First (valid) convolution of the accelerometer and gyroscope subnets.
    pub first_kernel: [usize; 3],
    /// First (valid) convolution of the GPS subnet.
    pub gps_first_kernel: [usize; 3],
    /// Second and third (same-padded) convolutions of every subnet.
    pub subnet_kernel: [usize; 3],
    /// Same-padded convolutions of the fusion network over (sensor, T, 1).
    pub fusion_kernel: [usize; 3],
    /// Convolutions in the fusion network, wrapped pairwise in residual blocks.
    pub fusion_convs: usize,
    pub rnn_cell: RnnCell,
    pub rnn_units: usize,
    pub rnn_layers: usize,
    pub dropout: f64,
    pub batch_norm_eps: f64,
    pub batch_norm_momentum: f64,
}

impl Default for CycleSenseConfig {
    fn default() -> Self {
        Self {
            freq: FrequencySpec::default(),
            channels: 64,
            first_kernel: [3, 3, 1],
            gps_first_kernel: [2, 1, 1],
            subnet_kernel: [3, 3, 3],
            fusion_kernel: [3, 3, 1],
            fusion_convs: 6,
            rnn_cell: RnnCell::Gru,
            rnn_units: 120,
            rnn_layers: 2,
            dropout: 0.2,
            batch_norm_eps: 1e-3,
            batch_norm_momentum: 0.9,
        }
    }
}

impl CycleSenseConfig {
    fn block(&self, kernel: [usize; 3], padding: PaddingMode) -> ConvBlockConfig {
        ConvBlockConfig {
            kernel,
            padding,
            channels: self.channels,
            dropout: self.dropout,
            batch_norm: BatchNormConfig {
                eps: self.batch_norm_eps,
                momentum: self.batch_norm_momentum,
            },
        }
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        self.freq.validate().map_err(|e| e.to_string())?;
        if self.freq.f < self.first_kernel[1] {
            return Err(format!("window length {} below first kernel {:?}", self.freq.f, self.first_kernel));
        }
        if self.first_kernel[0] != 3 || self.gps_first_kernel[0] != 2 {
            return Err("first kernels must span all sensor axes".into());
        }
        if self.gps_first_kernel[1] != 1 {
            return Err("GPS input has a single frequency row".into());
        }
        if self.fusion_convs == 0 || self.fusion_convs % 2 != 0 {
            return Err(format!("fusion_convs = {} must be a positive even number", self.fusion_convs));
        }
        if self.channels == 0 || self.rnn_units == 0 || self.rnn_layers == 0 {
            return Err("channels, rnn_units and rnn_layers must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }

    /// Input extents `[d1, d2, d3, channels]` of one example per sensor.
    pub fn input_shape(&self, sensor: Sensor) -> [usize; 4] {
        let t = self.freq.windows();
        match sensor {
            Sensor::Accel | Sensor::Gyro => [3, self.freq.f, t, 2],
            Sensor::Gps => [2, 1, t, 1],
        }
    }

    /// Extents `[1, 1, T, C]` of one subnet output per example.
    pub fn feature_shape(&self) -> [usize; 4] {
        [1, 1, self.freq.windows(), self.channels]
    }
}

#[derive(Clone, Debug)]
pub struct Subnet {
    pub sensor: Sensor,
    pub first: ConvBlock,
    pub residual: ResidualBlock,
}

impl Subnet {
    fn new<T: Real>(
        store: &mut ParamStore<T>,
        cfg: &CycleSenseConfig,
        sensor: Sensor,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let name = sensor.as_str();
        let (kernel, cin) = match sensor {
            Sensor::Gps => (cfg.gps_first_kernel, 1),
            _ => (cfg.first_kernel, 2),
        };
        let same = cfg.block(cfg.subnet_kernel, PaddingMode::Same);
        Ok(Self {
            sensor,
            first: ConvBlock::new(store, &format!("{name}.block1"), cin, cfg.block(kernel, PaddingMode::Valid), rng)?,
            residual: ResidualBlock::new(store, &format!("{name}.res"), cfg.channels, same, same, rng)?,
        })
    }

    /// `[B, 1, f', T, C]` before frequency pooling.
    pub fn forward_map<T: Real>(&self, g: &mut Graph<T>, store: &mut ParamStore<T>, x: Var) -> Result<Var> {
        let h = self.first.forward(g, store, x)?;
        self.residual.forward(g, store, h)
    }

    /// `[B, 1, 1, T, C]`.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &mut ParamStore<T>, x: Var) -> Result<Var> {
        let h = self.forward_map(g, store, x)?;
        g.mean_axis(h, 2)
    }
}

/// Layer handles; parameter values live in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct CycleSenseNet {
    pub config: CycleSenseConfig,
    pub subnets: [Subnet; 3],
    pub fusion: Vec<ResidualBlock>,
    pub rnn: StackedRecurrent,
    pub head: Dense,
}

impl CycleSenseNet {
    pub fn subnet(&self, sensor: Sensor) -> &Subnet {
        &self.subnets[sensor as usize]
    }

    /// Fusion, recurrent layers and head over subnet outputs
    /// `[B, 1, 1, T, C]` (accelerometer, gyroscope, GPS order).
    pub fn forward_from_features<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &mut ParamStore<T>,
        feats: [Var; 3],
    ) -> Result<Var> {
        let c = self.config.channels;
        let t = self.config.freq.windows();
        let x = g.concat(&feats, 1)?;
        let mut h = g.permute(x, &[0, 1, 3, 2, 4])?;
        for block in &self.fusion {
            h = block.forward(g, store, h)?;
        }
        let b = g.shape(h)[0];
        let h = g.permute(h, &[0, 2, 1, 3, 4])?;
        let seq = g.reshape(h, &[b, t, 3 * c])?;
        let last = self.rnn.forward(g, store, seq)?;
        let logit = self.head.forward(g, store, last)?;
        Ok(g.sigmoid(logit))
    }

    /// Probabilities `[B, 1]` from sensor inputs (accelerometer, gyroscope,
    /// GPS order).
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &mut ParamStore<T>, inputs: [Var; 3]) -> Result<Var> {
        let mut feats = inputs;
        for (s, x) in SENSORS.iter().zip(feats.iter_mut()) {
            *x = self.subnet(*s).forward(g, store, *x)?;
        }
        self.forward_from_features(g, store, feats)
    }
}

pub struct CycleSense<T: Real = f32> {
    pub net: CycleSenseNet,
    pub store: ParamStore<T>,
}

impl<T: Real> CycleSense<T> {
    pub fn new(config: CycleSenseConfig, seed: u64) -> Result<Self> {
        config
            .validate()
            .map_err(cyclesense_numerics::NumericsError::Config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let subnets = [
            Subnet::new(&mut store, &config, Sensor::Accel, &mut rng)?,
            Subnet::new(&mut store, &config, Sensor::Gyro, &mut rng)?,
            Subnet::new(&mut store, &config, Sensor::Gps, &mut rng)?,
        ];
        let same = config.block(config.fusion_kernel, PaddingMode::Same);
        let fusion = (0..config.fusion_convs / 2)
            .map(|i| ResidualBlock::new(&mut store, &format!("fusion.{i}"), config.channels, same, same, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let rnn = StackedRecurrent::new(
            &mut store,
            "rnn",
            config.rnn_cell.into(),
            3 * config.channels,
            config.rnn_units,
            config.rnn_layers,
            &mut rng,
        )?;
        let head = Dense::new(&mut store, "head", config.rnn_units, 1, &mut rng)?;
        Ok(Self {
            net: CycleSenseNet {
                config,
                subnets,
                fusion,
                rnn,
                head,
            },
            store,
        })
    }

    pub fn config(&self) -> &CycleSenseConfig {
        &self.net.config
    }

    pub fn param_count(&self) -> ParamCount {
        self.store.count()
    }

    /// Same weights in another precision.
    pub fn cast<U: Real>(&self) -> CycleSense<U> {
        CycleSense {
            net: self.net.clone(),
            store: self.store.cast(),
        }
    }

    pub fn set_subnet_frozen(&mut self, sensor: Sensor, frozen: bool) -> usize {
        self.store.set_frozen(&format!("{}.", sensor.as_str()), frozen)
    }

    pub fn forward(&mut self, g: &mut Graph<T>, inputs: [Var; 3]) -> Result<Var> {
        self.net.forward(g, &mut self.store, inputs)
    }

    /// Inference-mode probabilities for a batch of examples.
    pub fn predict(&mut self, examples: &[&Example]) -> Result<Vec<f64>> {
        let mut g = Graph::new(false, 0);
        let inputs = batch_inputs::<T>(&self.net.config, examples).map(|t| g.input(t));
        let p = self.forward(&mut g, inputs)?;
        Ok(g.value(p).data().iter().map(|v| v.as_f64()).collect())
    }
}

/// Stacks the example tensors of one sensor into `[B, d1, d2, d3, ch]`.
pub fn sensor_batch<T: Real>(cfg: &CycleSenseConfig, sensor: Sensor, examples: &[&Example]) -> Tensor<T> {
    let s = cfg.input_shape(sensor);
    let mut data = Vec::with_capacity(examples.len() * s.iter().product::<usize>());
    for e in examples {
        let src = match sensor {
            Sensor::Accel => &e.tensors.accel,
            Sensor::Gyro => &e.tensors.gyro,
            Sensor::Gps => &e.tensors.gps,
        };
        data.extend(src.iter().map(|&v| T::of(v as f64)));
    }
    Tensor::new(&[examples.len(), s[0], s[1], s[2], s[3]], data).expect("example tensors match the configured spec")
}

pub fn batch_inputs<T: Real>(cfg: &CycleSenseConfig, examples: &[&Example]) -> [Tensor<T>; 3] {
    SENSORS.map(|s| sensor_batch(cfg, s, examples))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_parameter_count_in_band() {
        let m = CycleSense::<f32>::new(CycleSenseConfig::default(), 0).unwrap();
        let n = m.param_count().weights();
        assert!((900_000..=1_300_000).contains(&n), "{n}");
    }

    #[test]
    fn invalid_configs_rejected() {
        let bad = CycleSenseConfig {
            fusion_convs: 5,
            ..CycleSenseConfig::default()
        };
        assert!(CycleSense::<f32>::new(bad, 0).is_err());
        let bad = CycleSenseConfig {
            freq: FrequencySpec { f: 3 },
            ..CycleSenseConfig::default()
        };
        assert!(CycleSense::<f32>::new(bad, 0).is_err());
    }
}
