//! Convolutional GAN over frequency-domain incident buckets.
//!
//! Both networks see a bucket packed as `[f, T, 1, 14]`: channels 0..6 are
//! the accelerometer `(axis, re/im)` pairs, 6..12 the gyroscope pairs and
//! 12..14 the GPS velocity components repeated along the frequency axis.
//! Unpacking averages the GPS channels over frequency.

use cyclesense_numerics::layers::{BatchNormConfig, Conv3d, ConvBlock, ConvBlockConfig, Dense, PaddingMode};
use cyclesense_numerics::ops::ClassWeights;
use cyclesense_numerics::optim::{Adam, AdamConfig};
use cyclesense_numerics::{Graph, NumericsError, ParamStore, Real, Result, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::spectral::{FrequencySpec, SensorTensorSet};

pub const PACKED_CHANNELS: usize = 14;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GanConfig {
    pub latent: usize,
    pub channels: usize,
    pub kernel: [usize; 3],
    /// Share of the class-imbalance gap closed by generated incidents.
    pub gap_fraction: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
}

impl Default for GanConfig {
    fn default() -> Self {
        Self {
            latent: 100,
            channels: 32,
            kernel: [3, 3, 1],
            gap_fraction: 0.10,
            steps: 200,
            batch_size: 32,
            learning_rate: 2e-4,
            beta1: 0.5,
        }
    }
}

impl GanConfig {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if !(self.gap_fraction > 0.0 && self.gap_fraction < 1.0) {
            return Err(format!("gap_fraction {} outside (0, 1)", self.gap_fraction));
        }
        if self.latent == 0 || self.channels == 0 || self.batch_size == 0 {
            return Err("latent, channels and batch_size must be positive".into());
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            ..AdamConfig::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GanLosses {
    pub discriminator: f64,
    /// Discriminator loss on the fake half of its batch.
    pub discriminator_fake: f64,
    pub generator: f64,
    /// Share of the real and fake examples the discriminator classified correctly.
    pub discriminator_accuracy: f64,
}

#[derive(Clone, Debug)]
struct Generator {
    dense: Dense,
    block: ConvBlock,
    out: Conv3d,
}

#[derive(Clone, Debug)]
struct Discriminator {
    block: ConvBlock,
    head: Dense,
}

pub struct Gan<T: Real = f32> {
    pub config: GanConfig,
    pub spec: FrequencySpec,
    pub gen_store: ParamStore<T>,
    pub disc_store: ParamStore<T>,
    gen: Generator,
    disc: Discriminator,
    adam_g: Adam<T>,
    adam_d: Adam<T>,
    rng: ChaCha8Rng,
    step: u64,
}

impl<T: Real> Gan<T> {
    pub fn new(config: GanConfig, spec: FrequencySpec, seed: u64) -> Result<Self> {
        config.validate().map_err(NumericsError::Config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let block = ConvBlockConfig {
            kernel: config.kernel,
            padding: PaddingMode::Same,
            channels: config.channels,
            dropout: 0.0,
            batch_norm: BatchNormConfig::default(),
        };
        let cells = spec.f * spec.windows();
        let mut gen_store = ParamStore::new();
        let gen = Generator {
            dense: Dense::new(&mut gen_store, "gen.dense", config.latent, cells * config.channels, &mut rng)?,
            block: ConvBlock::new(&mut gen_store, "gen.block", config.channels, block, &mut rng)?,
            out: Conv3d::new(
                &mut gen_store,
                "gen.out",
                config.channels,
                PACKED_CHANNELS,
                [1, 1, 1],
                PaddingMode::Valid,
                &mut rng,
            )?,
        };
        let mut disc_store = ParamStore::new();
        let disc = Discriminator {
            block: ConvBlock::new(&mut disc_store, "disc.block", PACKED_CHANNELS, block, &mut rng)?,
            head: Dense::new(&mut disc_store, "disc.head", config.channels, 1, &mut rng)?,
        };
        let adam_g = Adam::new(config.adam(), &gen_store);
        let adam_d = Adam::new(config.adam(), &disc_store);
        Ok(Self {
            config,
            spec,
            gen_store,
            disc_store,
            gen,
            disc,
            adam_g,
            adam_d,
            rng,
            step: 0,
        })
    }

    fn latent(&mut self, n: usize, rng: &mut ChaCha8Rng) -> Tensor<T> {
        Tensor::from_fn(&[n, self.config.latent], |_| {
            T::of(StandardNormal.sample(rng))
        })
    }

    fn generate_var(&mut self, g: &mut Graph<T>, z: Var) -> Result<Var> {
        let b = g.shape(z)[0];
        let (f, t) = (self.spec.f, self.spec.windows());
        let h = self.gen.dense.forward(g, &self.gen_store, z)?;
        let h = g.reshape(h, &[b, f, t, 1, self.config.channels])?;
        let h = g.relu(h);
        let h = self.gen.block.forward(g, &mut self.gen_store, h)?;
        self.gen.out.forward(g, &self.gen_store, h)
    }

    fn discriminate(&mut self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let h = self.disc.block.forward(g, &mut self.disc_store, x)?;
        let h = g.global_avg_pool(h)?;
        let logit = self.disc.head.forward(g, &self.disc_store, h)?;
        Ok(g.sigmoid(logit))
    }

    /// One discriminator update on `real` plus as many fakes, then one
    /// generator update with the discriminator held fixed.
    pub fn train_step(&mut self, real: &[&SensorTensorSet]) -> Result<GanLosses> {
        let n = real.len();
        if n == 0 {
            return Err(NumericsError::Config("empty real batch".into()));
        }
        self.step += 1;
        let mut rng = ChaCha8Rng::seed_from_u64(self.rng_u64());
        let drop_seed = self.rng_u64();

        // Discriminator: real = 1, fake = 0.
        let z = self.latent(n, &mut rng);
        let fake = {
            let mut g = Graph::new(true, drop_seed);
            let z = g.input(z);
            let x = self.generate_var(&mut g, z)?;
            g.value(x).clone()
        };
        let packed = pack::<T>(self.spec, real);
        let batch = Tensor::stack(&[&packed, &fake])?;
        let batch = batch.reshape(&[2 * n, self.spec.f, self.spec.windows(), 1, PACKED_CHANNELS])?;
        let labels: Vec<T> = (0..2 * n).map(|i| if i < n { T::one() } else { T::zero() }).collect();
        self.disc_store.zero_grad();
        let (d_loss, d_fake, acc) = {
            let mut g = Graph::new(true, drop_seed ^ 1);
            let x = g.input(batch);
            let p = self.discriminate(&mut g, x)?;
            let loss = g.bce_weighted(p, &labels, ClassWeights::default())?;
            let probs: Vec<f64> = g.value(p).data().iter().map(|v| v.as_f64()).collect();
            let grads = g.backward(loss)?;
            self.disc_store.accumulate(&grads);
            let correct = probs
                .iter()
                .enumerate()
                .filter(|&(i, &p)| (p >= 0.5) == (i < n))
                .count();
            let fake_loss = -probs[n..].iter().map(|&p| (1.0 - p).clamp(1e-7, 1.0).ln()).sum::<f64>() / n as f64;
            (g.value(loss).item().as_f64(), fake_loss, correct as f64 / (2 * n) as f64)
        };
        self.adam_d.step(&mut self.disc_store);

        // Generator: fakes labeled 1 against a fixed discriminator.
        let z = self.latent(n, &mut rng);
        self.gen_store.zero_grad();
        self.disc_store.set_frozen("", true);
        let g_loss = (|| {
            let mut g = Graph::new(true, drop_seed ^ 2);
            let z = g.input(z);
            let x = self.generate_var(&mut g, z)?;
            let p = self.discriminate(&mut g, x)?;
            let ones = vec![T::one(); n];
            let loss = g.bce_weighted(p, &ones, ClassWeights::default())?;
            let grads = g.backward(loss)?;
            self.gen_store.accumulate(&grads);
            Ok::<_, NumericsError>(g.value(loss).item().as_f64())
        })();
        self.disc_store.set_frozen("", false);
        let g_loss = g_loss?;
        self.adam_g.step(&mut self.gen_store);
        Ok(GanLosses {
            discriminator: d_loss,
            discriminator_fake: d_fake,
            generator: g_loss,
            discriminator_accuracy: acc,
        })
    }

    /// Discriminator probabilities for real examples, in inference mode.
    pub fn discriminator_scores(&mut self, sets: &[&SensorTensorSet]) -> Result<Vec<f64>> {
        let mut g = Graph::new(false, 0);
        let x = g.input(pack(self.spec, sets));
        let p = self.discriminate(&mut g, x)?;
        Ok(g.value(p).data().iter().map(|v| v.as_f64()).collect())
    }

    /// Discriminator outcome on `real` and `real.len()` fresh fakes, in
    /// inference mode: `(accuracy, mean BCE on the fakes)`.
    pub fn evaluate_discriminator(&mut self, real: &[&SensorTensorSet], seed: u64) -> Result<(f64, f64)> {
        let n = real.len();
        let fakes = self.generate(n, seed)?;
        let fake_refs: Vec<&SensorTensorSet> = fakes.iter().collect();
        let pr = self.discriminator_scores(real)?;
        let pf = self.discriminator_scores(&fake_refs)?;
        let correct = pr.iter().filter(|&&p| p >= 0.5).count() + pf.iter().filter(|&&p| p < 0.5).count();
        let fake_loss = -pf.iter().map(|&p| (1.0 - p).clamp(1e-7, 1.0).ln()).sum::<f64>() / n.max(1) as f64;
        Ok((correct as f64 / (2 * n).max(1) as f64, fake_loss))
    }

    /// `n` generated tensor sets; a pure function of the weights and `seed`.
    pub fn generate(&mut self, n: usize, seed: u64) -> Result<Vec<SensorTensorSet>> {
        if n == 0 {
            return Ok(Vec::new());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = self.latent(n, &mut rng);
        let mut g = Graph::new(false, 0);
        let z = g.input(z);
        let x = self.generate_var(&mut g, z)?;
        Ok(unpack(self.spec, g.value(x)))
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    fn rng_u64(&mut self) -> u64 {
        use rand::RngCore;
        self.rng.next_u64()
    }
}

/// `[B, f, T, 1, 14]` from tensor sets.
pub fn pack<T: Real>(spec: FrequencySpec, sets: &[&SensorTensorSet]) -> Tensor<T> {
    let (f, t) = (spec.f, spec.windows());
    let per = f * t * PACKED_CHANNELS;
    let mut data = vec![T::zero(); sets.len() * per];
    for (b, s) in sets.iter().enumerate() {
        let out = &mut data[b * per..(b + 1) * per];
        for k in 0..f {
            for w in 0..t {
                let cell = &mut out[(k * t + w) * PACKED_CHANNELS..(k * t + w + 1) * PACKED_CHANNELS];
                for axis in 0..3 {
                    for part in 0..2 {
                        let i = SensorTensorSet::motion_index(&spec, axis, k, w, part);
                        cell[axis * 2 + part] = T::of(s.accel[i] as f64);
                        cell[6 + axis * 2 + part] = T::of(s.gyro[i] as f64);
                    }
                }
                for c in 0..2 {
                    cell[12 + c] = T::of(s.gps[c * t + w] as f64);
                }
            }
        }
    }
    Tensor::new(&[sets.len(), f, t, 1, PACKED_CHANNELS], data).expect("packed extents")
}

/// Inverse of [`pack`]; GPS channels are averaged over frequency.
pub fn unpack<T: Real>(spec: FrequencySpec, x: &Tensor<T>) -> Vec<SensorTensorSet> {
    let (f, t) = (spec.f, spec.windows());
    let per = f * t * PACKED_CHANNELS;
    x.data()
        .chunks_exact(per)
        .map(|src| {
            let mut s = SensorTensorSet::zeros(spec);
            let mut gps = vec![0.0f64; 2 * t];
            for k in 0..f {
                for w in 0..t {
                    let cell = &src[(k * t + w) * PACKED_CHANNELS..(k * t + w + 1) * PACKED_CHANNELS];
                    for axis in 0..3 {
                        for part in 0..2 {
                            let i = SensorTensorSet::motion_index(&spec, axis, k, w, part);
                            s.accel[i] = cell[axis * 2 + part].as_f64() as f32;
                            s.gyro[i] = cell[6 + axis * 2 + part].as_f64() as f32;
                        }
                    }
                    for c in 0..2 {
                        gps[c * t + w] += cell[12 + c].as_f64();
                    }
                }
            }
            for (d, v) in s.gps.iter_mut().zip(gps) {
                *d = (v / f as f64) as f32;
            }
            s
        })
        .collect()
}
