//! End-to-end workflows: rides to split datasets, model training, and the
//! three-model comparison.

use std::path::Path;
use std::time::Instant;

use cyclesense_numerics::ops::ClassWeights;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Example, SplitTag};
use crate::error::{Error, Result};
use crate::eval::{comparison_report, ReportRow, Roc};
use crate::models::augment::fit_gan;
use crate::models::{
    augment_dataset, heuristic_scores, CycleSense, CycleSenseConfig, Fcn, FcnConfig, GanConfig, HeuristicConfig, Sensor,
};
use crate::preprocess::store::EncodedBucket;
use crate::preprocess::{
    apply_maxabs, bucketize_and_label, fit_maxabs, prepare_ride, NormalizationStats, PreparedRide, PreprocessConfig,
    Rejected,
};
use crate::ride_format::{partition_dataset, DatasetPartition, FormatConfig, RawRide};
use crate::seed::derive_seed;
use crate::spectral::{encode, Dft, FeatureDomain, FrequencySpec};
use crate::training::learners::{CycleSenseLearner, FcnLearner, StackedLearner};
use crate::training::{
    class_weights, fit, predict_cyclesense, predict_fcn, pretrain_subnets, split_rides, EpochRecord, History, RideSplit,
    SplitPlan, TrainConfig,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub format: FormatConfig,
    pub preprocess: PreprocessConfig,
    pub freq: FrequencySpec,
    pub domain: FeatureDomain,
    pub split: SplitPlan,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            format: FormatConfig::default(),
            preprocess: PreprocessConfig::default(),
            freq: FrequencySpec::default(),
            domain: FeatureDomain::Frequency,
            split: SplitPlan::default(),
        }
    }
}

/// Reads every ride below `dir`, optionally restricted to a region tag and
/// a partition. Unreadable files are logged and skipped.
pub fn load_rides(
    dir: &Path,
    region: Option<&str>,
    partition: Option<DatasetPartition>,
    cfg: &FormatConfig,
) -> Result<Vec<RawRide>> {
    let report = partition_dataset(dir, region, cfg)?;
    for (p, e) in &report.unreadable {
        log::warn!("{}: {e}", p.display());
    }
    let entries: Vec<_> = report
        .rides
        .iter()
        .filter(|r| partition.is_none_or(|p| p == r.partition))
        .collect();
    entries
        .par_iter()
        .map(|e| {
            let text = std::fs::read(&e.path).map_err(Error::io(&e.path))?;
            Ok(crate::ride_format::parse_ride_bytes(&e.ride_id, &text, cfg)?.ride)
        })
        .collect()
}

/// Splits, normalization statistics and encoded datasets of a ride set.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub split: RideSplit,
    pub stats: NormalizationStats,
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    pub rejected: Vec<(String, Rejected)>,
}

impl PreparedData {
    pub fn get(&self, tag: SplitTag) -> &Dataset {
        match tag {
            SplitTag::Train => &self.train,
            SplitTag::Val => &self.val,
            SplitTag::Test => &self.test,
        }
    }
}

/// Cleans and resamples rides in parallel; rejected rides are returned
/// separately.
pub fn prepare_rides(rides: Vec<RawRide>, cfg: &PreprocessConfig) -> (Vec<PreparedRide>, Vec<(String, Rejected)>) {
    let results: Vec<(String, std::result::Result<PreparedRide, Rejected>)> = rides
        .into_par_iter()
        .map(|r| (r.ride_id.clone(), prepare_ride(r, cfg)))
        .collect();
    let mut ok = Vec::new();
    let mut rejected = Vec::new();
    for (id, r) in results {
        match r {
            Ok(p) => ok.push(p),
            Err(e) => {
                log::info!("{id}: rejected: {e}");
                rejected.push((id, e));
            }
        }
    }
    (ok, rejected)
}

/// Buckets of one normalized ride as examples.
pub fn encode_ride(ride: &PreparedRide, spec: FrequencySpec, domain: FeatureDomain, dft: &Dft) -> Vec<Example> {
    bucketize_and_label(&ride.uniform, &ride.incidents)
        .into_iter()
        .map(|b| {
            let tensors = encode(&b.samples, spec, domain, dft);
            let enc = EncodedBucket::from_labeled(&b, Some(tensors));
            Example::from_encoded(enc).expect("tensors present")
        })
        .collect()
}

/// Ride-level split, normalization fitted on training rides, and encoding.
pub fn prepare_data(rides: Vec<RawRide>, cfg: &DataConfig) -> Result<PreparedData> {
    cfg.freq.validate()?;
    let (mut prepared, rejected) = prepare_rides(rides, &cfg.preprocess);
    let ids: Vec<String> = prepared.iter().map(|p| p.uniform.ride_id.clone()).collect();
    let split = split_rides(&ids, &cfg.split)?;
    prepared.sort_by(|a, b| a.uniform.ride_id.cmp(&b.uniform.ride_id));
    let stats = if cfg.preprocess.normalize {
        let train: std::collections::HashSet<&str> = split.train.iter().map(String::as_str).collect();
        fit_maxabs(
            prepared
                .iter()
                .filter(|p| train.contains(p.uniform.ride_id.as_str()))
                .map(|p| &p.uniform),
        )
    } else {
        NormalizationStats::identity()
    };
    prepared.par_iter_mut().for_each(|p| apply_maxabs(&mut p.uniform, &stats));
    let dft = Dft::new(cfg.freq.f);
    let encoded: Vec<(String, Vec<Example>)> = prepared
        .par_iter()
        .map(|p| (p.uniform.ride_id.clone(), encode_ride(p, cfg.freq, cfg.domain, &dft)))
        .collect();
    let mut sets = SplitTag::ALL.map(|t| Dataset::new(t, cfg.freq, Vec::new()));
    for (id, examples) in encoded {
        let tag = split.tag_of(&id).expect("every prepared ride is split");
        sets[tag as usize].examples.extend(examples);
    }
    let [train, val, test] = sets;
    Ok(PreparedData {
        split,
        stats,
        train,
        val,
        test,
        rejected,
    })
}

/// Every model and training setting of one experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub train: TrainConfig,
    pub fcn_train: TrainConfig,
    pub cyclesense: CycleSenseConfig,
    pub fcn: FcnConfig,
    pub gan: GanConfig,
    pub heuristic: HeuristicConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: DataConfig::default(),
            train: TrainConfig::default(),
            fcn_train: TrainConfig {
                augmentation: false,
                stacking: false,
                ..TrainConfig::default()
            },
            cyclesense: CycleSenseConfig::default(),
            fcn: FcnConfig::default(),
            gan: GanConfig::default(),
            heuristic: HeuristicConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Model window length follows the data.
    pub fn model_config(&self) -> CycleSenseConfig {
        CycleSenseConfig {
            freq: self.data.freq,
            ..self.cyclesense.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.data.freq.validate()?;
        self.model_config().validate().map_err(Error::Config)?;
        self.gan.validate().map_err(Error::Config)?;
        self.train.validate()?;
        self.fcn_train.validate()?;
        Ok(())
    }
}

/// One processing step switched off.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    /// Time-domain windows instead of DFT coefficients.
    NoDft,
    /// Neither class weights nor generated incidents.
    NoWeightsAugmentation,
    /// End-to-end training without subnet pretraining.
    NoStacking,
    NoNormalization,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [
        Ablation::NoDft,
        Ablation::NoWeightsAugmentation,
        Ablation::NoStacking,
        Ablation::NoNormalization,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::NoDft => "no-dft",
            Ablation::NoWeightsAugmentation => "no-weights-augmentation",
            Ablation::NoStacking => "no-stacking",
            Ablation::NoNormalization => "no-normalization",
        }
    }

    pub fn apply(self, cfg: &ExperimentConfig) -> ExperimentConfig {
        let mut c = cfg.clone();
        match self {
            Ablation::NoDft => c.data.domain = FeatureDomain::Time,
            Ablation::NoWeightsAugmentation => {
                c.train.class_weights = false;
                c.train.augmentation = false;
            }
            Ablation::NoStacking => c.train.stacking = false,
            Ablation::NoNormalization => c.data.preprocess.normalize = false,
        }
        c
    }
}

#[derive(Clone, Debug, Default)]
pub struct CycleSenseReport {
    pub history: History,
    pub pretrain: Vec<(Sensor, History)>,
    pub generated: usize,
    pub weights: ClassWeights,
}

fn weights_for(train: &Dataset, enabled: bool) -> Result<ClassWeights> {
    if !enabled {
        return Ok(ClassWeights::default());
    }
    let (p, n) = train.class_counts();
    Ok(class_weights(p, n)?)
}

/// Optional augmentation, optional subnet pretraining, then training with
/// early stopping. Returns the model with its best validation weights.
pub fn train_cyclesense(
    train: &Dataset,
    val: &Dataset,
    cfg: &ExperimentConfig,
    seed: u64,
    mut on_epoch: impl FnMut(&str, &EpochRecord),
) -> Result<(CycleSense, CycleSenseReport)> {
    cfg.validate()?;
    let mut model = CycleSense::<f32>::new(cfg.model_config(), derive_seed(seed, "cyclesense/init"))?;
    let augmented;
    let (train, generated) = if cfg.train.augmentation {
        let mut gan = fit_gan(train, cfg.gan.clone(), derive_seed(seed, "gan"), |step, l| {
            log::debug!("gan step {step}: d {:.4} g {:.4}", l.discriminator, l.generator);
        })?;
        augmented = augment_dataset(train, &mut gan, cfg.gan.gap_fraction, derive_seed(seed, "gan/generate"))?;
        let n = augmented.len() - train.len();
        (&augmented, n)
    } else {
        (train, 0)
    };
    let weights = weights_for(train, cfg.train.class_weights)?;
    let mut report = CycleSenseReport {
        generated,
        weights,
        ..CycleSenseReport::default()
    };
    let fit_seed = derive_seed(seed, "cyclesense/fit");
    if cfg.train.stacking {
        report.pretrain = pretrain_subnets(
            &mut model,
            train,
            val,
            &cfg.train,
            weights,
            derive_seed(seed, "cyclesense/pretrain"),
            |s, r| on_epoch(&format!("pretrain/{}", s.as_str()), r),
        )?;
        let mut learner = StackedLearner::new(&mut model, train, val, &cfg.train)?;
        report.history = fit(&mut learner, &cfg.train, weights, fit_seed, |r| on_epoch("cyclesense", r))?;
    } else {
        let mut learner = CycleSenseLearner::new(&mut model, train, val, &cfg.train);
        report.history = fit(&mut learner, &cfg.train, weights, fit_seed, |r| on_epoch("cyclesense", r))?;
    }
    Ok((model, report))
}

/// FCN on observed buckets only; generated ones carry no time-domain rows.
pub fn train_fcn(
    train: &Dataset,
    val: &Dataset,
    cfg: &ExperimentConfig,
    seed: u64,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(Fcn, History)> {
    let train = train.observed();
    let weights = weights_for(&train, cfg.fcn_train.class_weights)?;
    let mut model = Fcn::<f32>::new(cfg.fcn.clone(), derive_seed(seed, "fcn/init"))?;
    let mut learner = FcnLearner::new(&mut model, &train, val, &cfg.fcn_train);
    let history = fit(&mut learner, &cfg.fcn_train, weights, derive_seed(seed, "fcn/fit"), |r| on_epoch(r))?;
    Ok((model, history))
}

pub fn heuristic_for(examples: &Dataset, cfg: &HeuristicConfig) -> Result<Vec<f64>> {
    let rows: Vec<&[[f32; 8]]> = examples
        .examples
        .iter()
        .map(|e| {
            e.samples
                .as_deref()
                .ok_or_else(|| Error::Config("heuristic needs time-domain samples".into()))
        })
        .collect::<Result<_>>()?;
    Ok(heuristic_scores(rows, cfg))
}

pub const MODEL_NAMES: [&str; 3] = ["heuristic", "fcn", "cyclesense"];

/// Scores of the three models on one dataset, in [`MODEL_NAMES`] order.
pub fn score_models(
    cyclesense: &mut CycleSense,
    fcn: &mut Fcn,
    data: &Dataset,
    cfg: &ExperimentConfig,
) -> Result<[Vec<f64>; 3]> {
    let refs: Vec<&Example> = data.examples.iter().collect();
    let batch = cfg.train.eval_batch_size;
    Ok([
        heuristic_for(data, &cfg.heuristic)?,
        predict_fcn(fcn, &refs, batch)?,
        predict_cyclesense(cyclesense, &refs, batch)?,
    ])
}

pub fn compare(scores: &[Vec<f64>; 3], labels: &[u8]) -> Result<Vec<(ReportRow, Roc)>> {
    let models: Vec<(&str, &[f64])> = MODEL_NAMES
        .iter()
        .zip(scores)
        .map(|(n, s)| (*n, s.as_slice()))
        .collect();
    Ok(comparison_report(&models, labels)?)
}

/// Outcome of one full train-and-test run.
#[derive(Clone, Debug)]
pub struct BenchmarkResult {
    pub report: Vec<(ReportRow, Roc)>,
    pub cyclesense: CycleSenseReport,
    pub fcn: History,
    pub seconds: f64,
    pub n_train: usize,
    pub n_test: usize,
}

impl BenchmarkResult {
    pub fn auc(&self, model: &str) -> Option<f64> {
        self.report.iter().find(|(r, _)| r.model == model).map(|(r, _)| r.auc)
    }
}

/// Prepares `rides`, trains CycleSense and the FCN, and compares all three
/// models on the test split. With `train_fcn_model = false` only CycleSense
/// and the heuristic are trained and the FCN row is left out.
pub fn run_benchmark(
    rides: Vec<RawRide>,
    cfg: &ExperimentConfig,
    seed: u64,
    train_fcn_model: bool,
    mut on_epoch: impl FnMut(&str, &EpochRecord),
) -> Result<BenchmarkResult> {
    let start = Instant::now();
    let data = prepare_data(rides, &cfg.data)?;
    log::info!(
        "prepared {} / {} / {} buckets ({} rides rejected)",
        data.train.len(),
        data.val.len(),
        data.test.len(),
        data.rejected.len()
    );
    let (mut cs, cs_report) = train_cyclesense(&data.train, &data.val, cfg, seed, &mut on_epoch)?;
    let refs: Vec<&Example> = data.test.examples.iter().collect();
    let labels = data.test.labels();
    let cs_scores = predict_cyclesense(&mut cs, &refs, cfg.train.eval_batch_size)?;
    let heur = heuristic_for(&data.test, &cfg.heuristic)?;
    let (report, fcn_history) = if train_fcn_model {
        let (mut fcn, h) = train_fcn(&data.train, &data.val, cfg, seed, |r| on_epoch("fcn", r))?;
        let fcn_scores = predict_fcn(&mut fcn, &refs, cfg.train.eval_batch_size)?;
        (compare(&[heur, fcn_scores, cs_scores], &labels)?, h)
    } else {
        let models: [(&str, &[f64]); 2] = [("heuristic", &heur), ("cyclesense", &cs_scores)];
        (comparison_report(&models, &labels)?, History::default())
    };
    Ok(BenchmarkResult {
        report,
        cyclesense: cs_report,
        fcn: fcn_history,
        seconds: start.elapsed().as_secs_f64(),
        n_train: data.train.len(),
        n_test: data.test.len(),
    })
}
