//! [`Learner`] implementations for the networks, subnet pretraining and
//! stacked training over cached subnet features.

use cyclesense_numerics::layers::Dense;
use cyclesense_numerics::ops::ClassWeights;
use cyclesense_numerics::optim::{Adam, AdamConfig};
use cyclesense_numerics::{Graph, ParamStore, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::trainer::{fit, EpochRecord, History, Learner, TrainConfig};
use super::TrainError;
use crate::data::{Dataset, Example};
use crate::models::cyclesense::{batch_inputs, sensor_batch};
use crate::models::fcn::fcn_batch;
use crate::models::{CycleSense, Fcn, Sensor, SENSORS};
use crate::seed::derive_seed;

fn adam(cfg: &TrainConfig) -> AdamConfig {
    AdamConfig {
        learning_rate: cfg.learning_rate,
        ..AdamConfig::default()
    }
}

fn labels_of(examples: &[&Example]) -> Vec<f32> {
    examples.iter().map(|e| e.label as f32).collect()
}

fn scores(g: &Graph<f32>, p: Var) -> impl Iterator<Item = f64> + '_ {
    g.value(p).data().iter().map(|&v| v as f64)
}

/// One optimizer step of a loss built by `forward`.
fn step_store(
    store: &mut ParamStore<f32>,
    opt: &mut Adam<f32>,
    g: &Graph<f32>,
    loss: Var,
) -> Result<f64, TrainError> {
    let grads = g.backward(loss)?;
    store.zero_grad();
    store.accumulate(&grads);
    opt.step(store);
    Ok(g.value(loss).item() as f64)
}

/// End-to-end training of every unfrozen CycleSense parameter.
pub struct CycleSenseLearner<'a> {
    pub model: &'a mut CycleSense,
    opt: Adam<f32>,
    train: Vec<&'a Example>,
    val: Vec<&'a Example>,
    eval_batch: usize,
}

impl<'a> CycleSenseLearner<'a> {
    pub fn new(model: &'a mut CycleSense, train: &'a Dataset, val: &'a Dataset, cfg: &TrainConfig) -> Self {
        let opt = Adam::new(adam(cfg), &model.store);
        Self {
            model,
            opt,
            train: train.examples.iter().collect(),
            val: val.examples.iter().collect(),
            eval_batch: cfg.eval_batch_size,
        }
    }
}

impl Learner for CycleSenseLearner<'_> {
    fn n_train(&self) -> usize {
        self.train.len()
    }

    fn train_batch(&mut self, batch: &[usize], weights: ClassWeights, seed: u64) -> Result<f64, TrainError> {
        let exs: Vec<&Example> = batch.iter().map(|&i| self.train[i]).collect();
        let mut g = Graph::new(true, seed);
        let inputs = batch_inputs::<f32>(self.model.config(), &exs).map(|t| g.input(t));
        let p = self.model.forward(&mut g, inputs)?;
        let loss = g.bce_weighted(p, &labels_of(&exs), weights)?;
        step_store(&mut self.model.store, &mut self.opt, &g, loss)
    }

    fn validation_scores(&mut self) -> Result<Vec<f64>, TrainError> {
        let mut out = Vec::with_capacity(self.val.len());
        for chunk in self.val.chunks(self.eval_batch) {
            out.extend(self.model.predict(chunk)?);
        }
        Ok(out)
    }

    fn validation_labels(&self) -> Vec<u8> {
        self.val.iter().map(|e| e.label).collect()
    }

    fn snapshot(&self) -> Vec<Tensor<f32>> {
        self.model.store.values()
    }

    fn restore(&mut self, values: Vec<Tensor<f32>>) {
        self.model.store.restore_values(values);
    }
}

/// Subnet outputs `[T·C]` per example in inference mode.
pub fn subnet_features(
    model: &mut CycleSense,
    sensor: Sensor,
    examples: &[&Example],
    batch: usize,
) -> Result<Vec<Vec<f32>>, TrainError> {
    let per: usize = model.config().feature_shape().iter().product();
    let mut out = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(batch.max(1)) {
        let mut g = Graph::new(false, 0);
        let x = g.input(sensor_batch::<f32>(model.config(), sensor, chunk));
        let subnet = model.net.subnet(sensor).clone();
        let h = subnet.forward(&mut g, &mut model.store, x)?;
        out.extend(g.value(h).data().chunks_exact(per).map(<[f32]>::to_vec));
    }
    Ok(out)
}

/// Cached subnet features of a set of examples, one vector per sensor.
pub struct FeatureCache {
    pub labels: Vec<u8>,
    pub features: Vec<[Vec<f32>; 3]>,
}

impl FeatureCache {
    pub fn build(model: &mut CycleSense, examples: &[&Example], batch: usize) -> Result<Self, TrainError> {
        let mut per_sensor = Vec::with_capacity(3);
        for s in SENSORS {
            per_sensor.push(subnet_features(model, s, examples, batch)?);
        }
        let [a, gy, gp]: [Vec<Vec<f32>>; 3] = per_sensor.try_into().expect("three sensors");
        Ok(Self {
            labels: examples.iter().map(|e| e.label).collect(),
            features: a
                .into_iter()
                .zip(gy)
                .zip(gp)
                .map(|((a, g), p)| [a, g, p])
                .collect(),
        })
    }

    fn batch(&self, idx: &[usize], shape: [usize; 4]) -> [Tensor<f32>; 3] {
        std::array::from_fn(|s| {
            let mut data = Vec::with_capacity(idx.len() * shape.iter().product::<usize>());
            for &i in idx {
                data.extend_from_slice(&self.features[i][s]);
            }
            Tensor::new(&[idx.len(), shape[0], shape[1], shape[2], shape[3]], data).expect("feature extents")
        })
    }
}

/// Fusion, recurrent layers and head over frozen-subnet features.
pub struct StackedLearner<'a> {
    pub model: &'a mut CycleSense,
    opt: Adam<f32>,
    train: FeatureCache,
    val: FeatureCache,
    eval_batch: usize,
}

impl<'a> StackedLearner<'a> {
    /// Requires every subnet parameter to be frozen.
    pub fn new(model: &'a mut CycleSense, train: &Dataset, val: &Dataset, cfg: &TrainConfig) -> Result<Self, TrainError> {
        let unfrozen = model
            .store
            .iter()
            .filter(|(_, e)| e.trainable && !e.frozen)
            .any(|(_, e)| SENSORS.iter().any(|s| e.name.starts_with(&format!("{}.", s.as_str()))));
        if unfrozen {
            return Err(TrainError::InvalidConfig("stacked training needs frozen subnets".into()));
        }
        let tr: Vec<&Example> = train.examples.iter().collect();
        let va: Vec<&Example> = val.examples.iter().collect();
        let train = FeatureCache::build(model, &tr, cfg.eval_batch_size)?;
        let val = FeatureCache::build(model, &va, cfg.eval_batch_size)?;
        let opt = Adam::new(adam(cfg), &model.store);
        Ok(Self {
            model,
            opt,
            train,
            val,
            eval_batch: cfg.eval_batch_size,
        })
    }
}

impl Learner for StackedLearner<'_> {
    fn n_train(&self) -> usize {
        self.train.labels.len()
    }

    fn train_batch(&mut self, batch: &[usize], weights: ClassWeights, seed: u64) -> Result<f64, TrainError> {
        let shape = self.model.config().feature_shape();
        let mut g = Graph::new(true, seed);
        let feats = self.train.batch(batch, shape).map(|t| g.input(t));
        let net = self.model.net.clone();
        let p = net.forward_from_features(&mut g, &mut self.model.store, feats)?;
        let labels: Vec<f32> = batch.iter().map(|&i| self.train.labels[i] as f32).collect();
        let loss = g.bce_weighted(p, &labels, weights)?;
        step_store(&mut self.model.store, &mut self.opt, &g, loss)
    }

    fn validation_scores(&mut self) -> Result<Vec<f64>, TrainError> {
        let shape = self.model.config().feature_shape();
        let net = self.model.net.clone();
        let idx: Vec<usize> = (0..self.val.labels.len()).collect();
        let mut out = Vec::with_capacity(idx.len());
        for chunk in idx.chunks(self.eval_batch) {
            let mut g = Graph::new(false, 0);
            let feats = self.val.batch(chunk, shape).map(|t| g.input(t));
            let p = net.forward_from_features(&mut g, &mut self.model.store, feats)?;
            out.extend(scores(&g, p));
        }
        Ok(out)
    }

    fn validation_labels(&self) -> Vec<u8> {
        self.val.labels.clone()
    }

    fn snapshot(&self) -> Vec<Tensor<f32>> {
        self.model.store.values()
    }

    fn restore(&mut self, values: Vec<Tensor<f32>>) {
        self.model.store.restore_values(values);
    }
}

/// One subnet with a temporary pooling and dense head.
pub struct SubnetLearner<'a> {
    pub model: &'a mut CycleSense,
    pub sensor: Sensor,
    head: Dense,
    head_store: ParamStore<f32>,
    opt: Adam<f32>,
    head_opt: Adam<f32>,
    train: Vec<&'a Example>,
    val: Vec<&'a Example>,
    eval_batch: usize,
}

impl<'a> SubnetLearner<'a> {
    /// Leaves only the chosen subnet trainable.
    pub fn new(
        model: &'a mut CycleSense,
        sensor: Sensor,
        train: &'a Dataset,
        val: &'a Dataset,
        cfg: &TrainConfig,
        seed: u64,
    ) -> Result<Self, TrainError> {
        model.store.set_frozen("", true);
        model.set_subnet_frozen(sensor, false);
        let mut head_store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let head = Dense::new(
            &mut head_store,
            &format!("{}.pretrain_head", sensor.as_str()),
            model.config().channels,
            1,
            &mut rng,
        )?;
        let opt = Adam::new(adam(cfg), &model.store);
        let head_opt = Adam::new(adam(cfg), &head_store);
        Ok(Self {
            model,
            sensor,
            head,
            head_store,
            opt,
            head_opt,
            train: train.examples.iter().collect(),
            val: val.examples.iter().collect(),
            eval_batch: cfg.eval_batch_size,
        })
    }

    fn forward(&mut self, g: &mut Graph<f32>, exs: &[&Example]) -> Result<Var, TrainError> {
        let x = g.input(sensor_batch::<f32>(self.model.config(), self.sensor, exs));
        let subnet = self.model.net.subnet(self.sensor).clone();
        let h = subnet.forward(g, &mut self.model.store, x)?;
        let h = g.global_avg_pool(h)?;
        let logit = self.head.forward(g, &self.head_store, h)?;
        Ok(g.sigmoid(logit))
    }
}

impl Learner for SubnetLearner<'_> {
    fn n_train(&self) -> usize {
        self.train.len()
    }

    fn train_batch(&mut self, batch: &[usize], weights: ClassWeights, seed: u64) -> Result<f64, TrainError> {
        let exs: Vec<&Example> = batch.iter().map(|&i| self.train[i]).collect();
        let mut g = Graph::new(true, seed);
        let p = self.forward(&mut g, &exs)?;
        let loss = g.bce_weighted(p, &labels_of(&exs), weights)?;
        let grads = g.backward(loss)?;
        self.head_store.zero_grad();
        self.head_store.accumulate(&grads);
        self.head_opt.step(&mut self.head_store);
        self.model.store.zero_grad();
        self.model.store.accumulate(&grads);
        self.opt.step(&mut self.model.store);
        Ok(g.value(loss).item() as f64)
    }

    fn validation_scores(&mut self) -> Result<Vec<f64>, TrainError> {
        let val = self.val.clone();
        let mut out = Vec::with_capacity(val.len());
        for chunk in val.chunks(self.eval_batch) {
            let mut g = Graph::new(false, 0);
            let p = self.forward(&mut g, chunk)?;
            out.extend(scores(&g, p));
        }
        Ok(out)
    }

    fn validation_labels(&self) -> Vec<u8> {
        self.val.iter().map(|e| e.label).collect()
    }

    fn snapshot(&self) -> Vec<Tensor<f32>> {
        let mut v = self.model.store.values();
        v.extend(self.head_store.values());
        v
    }

    fn restore(&mut self, mut values: Vec<Tensor<f32>>) {
        let head = values.split_off(self.model.store.len());
        self.model.store.restore_values(values);
        self.head_store.restore_values(head);
    }
}

/// Trains each subnet on its own, then freezes all of them and unfreezes
/// everything else. Returns the per-sensor histories.
pub fn pretrain_subnets(
    model: &mut CycleSense,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
    weights: ClassWeights,
    seed: u64,
    mut on_epoch: impl FnMut(Sensor, &EpochRecord),
) -> Result<Vec<(Sensor, History)>, TrainError> {
    let pre = cfg.pretrain();
    let mut out = Vec::with_capacity(3);
    for sensor in SENSORS {
        let s = derive_seed(seed, &format!("pretrain/{}", sensor.as_str()));
        let mut learner = SubnetLearner::new(model, sensor, train, val, &pre, s)?;
        let h = fit(&mut learner, &pre, weights, s, |r| on_epoch(sensor, r))?;
        out.push((sensor, h));
    }
    model.store.set_frozen("", false);
    for sensor in SENSORS {
        model.set_subnet_frozen(sensor, true);
    }
    Ok(out)
}

pub struct FcnLearner<'a> {
    pub model: &'a mut Fcn,
    opt: Adam<f32>,
    train: Vec<&'a Example>,
    val: Vec<&'a Example>,
    eval_batch: usize,
}

impl<'a> FcnLearner<'a> {
    /// Generated examples have no time-domain rows and are skipped.
    pub fn new(model: &'a mut Fcn, train: &'a Dataset, val: &'a Dataset, cfg: &TrainConfig) -> Self {
        let opt = Adam::new(adam(cfg), &model.store);
        Self {
            model,
            opt,
            train: train.examples.iter().filter(|e| e.samples.is_some()).collect(),
            val: val.examples.iter().collect(),
            eval_batch: cfg.eval_batch_size,
        }
    }
}

impl Learner for FcnLearner<'_> {
    fn n_train(&self) -> usize {
        self.train.len()
    }

    fn train_batch(&mut self, batch: &[usize], weights: ClassWeights, seed: u64) -> Result<f64, TrainError> {
        let exs: Vec<&Example> = batch.iter().map(|&i| self.train[i]).collect();
        let mut g = Graph::new(true, seed);
        let x = g.input(fcn_batch(&exs)?);
        let p = self.model.forward(&mut g, x)?;
        let loss = g.bce_weighted(p, &labels_of(&exs), weights)?;
        step_store(&mut self.model.store, &mut self.opt, &g, loss)
    }

    fn validation_scores(&mut self) -> Result<Vec<f64>, TrainError> {
        let mut out = Vec::with_capacity(self.val.len());
        for chunk in self.val.chunks(self.eval_batch) {
            out.extend(self.model.predict(chunk)?);
        }
        Ok(out)
    }

    fn validation_labels(&self) -> Vec<u8> {
        self.val.iter().map(|e| e.label).collect()
    }

    fn snapshot(&self) -> Vec<Tensor<f32>> {
        self.model.store.values()
    }

    fn restore(&mut self, values: Vec<Tensor<f32>>) {
        self.model.store.restore_values(values);
    }
}

/// Inference-mode CycleSense probabilities in chunks.
pub fn predict_cyclesense(model: &mut CycleSense, examples: &[&Example], batch: usize) -> Result<Vec<f64>, TrainError> {
    let mut out = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(batch.max(1)) {
        out.extend(model.predict(chunk)?);
    }
    Ok(out)
}

pub fn predict_fcn(model: &mut Fcn, examples: &[&Example], batch: usize) -> Result<Vec<f64>, TrainError> {
    let mut out = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(batch.max(1)) {
        out.extend(model.predict(chunk)?);
    }
    Ok(out)
}
