use std::io::Write;
use std::path::{Path, PathBuf};

use cyclesense::data::{Dataset, Example, SplitTag};
use cyclesense::eval::write_report;
use cyclesense::models::{CycleSense, Fcn};
use cyclesense::pipeline::{
    compare, encode_ride, load_rides, prepare_data, score_models, train_cyclesense, train_fcn, PreparedData,
};
use cyclesense::preprocess::store::{load_buckets, save_buckets, EncodedBucket};
use cyclesense::preprocess::{apply_maxabs, prepare_ride, NormalizationStats, BUCKET_LEN, GRID_MS};
use cyclesense::ride_format::{load_ride, partition_dataset, ride_id_of};
use cyclesense::spectral::Dft;
use cyclesense::synthdata::generate_dataset;
use cyclesense::training::{fit, grid_search, write_grid_csv, CycleSenseLearner, TrainConfig};
use cyclesense::{Error, RunConfig};
use cyclesense_numerics::checkpoint;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::GlobalArgs;

pub const CONFIG_FILE: &str = "config.json";
pub const NORMALIZATION_FILE: &str = "normalization.json";
pub const SPLIT_FILE: &str = "split.json";
pub const CYCLESENSE_CKPT: &str = "cyclesense.ckpt";
pub const FCN_CKPT: &str = "fcn.ckpt";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    pub fn is_validation(&self) -> bool {
        match self {
            CliError::Usage(_) => true,
            CliError::Core(e) => e.is_validation(),
        }
    }
}

impl From<cyclesense_numerics::NumericsError> for CliError {
    fn from(e: cyclesense_numerics::NumericsError) -> Self {
        CliError::Core(e.into())
    }
}

type Result<T, E = CliError> = std::result::Result<T, E>;

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Core(Error::io(path)(e))
}

/// Effective configuration and output directory of one invocation.
pub struct Context {
    pub config: RunConfig,
    pub out: Option<PathBuf>,
}

impl Context {
    pub fn new(args: &GlobalArgs) -> Result<Self> {
        let mut config = match &args.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = args.seed {
            config = config.with_seed(seed);
        }
        if args.region.is_some() {
            config.region = args.region.clone();
            if let Some(r) = &args.region {
                config.synth.region = r.clone();
            }
        }
        if let Some(p) = args.partition {
            config.partition = Some(p);
            config.synth.partition = p;
        }
        config.validate()?;
        if let Some(n) = args.threads {
            if n == 0 {
                return Err(CliError::Usage("--threads must be at least 1".into()));
            }
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| CliError::Usage(e.to_string()))?;
        }
        Ok(Self {
            config,
            out: args.out.clone(),
        })
    }

    fn out_dir(&self) -> Result<&Path> {
        let out = self.out.as_deref().ok_or_else(|| CliError::Usage("--out is required".into()))?;
        std::fs::create_dir_all(out).map_err(io(out))?;
        Ok(out)
    }

    fn data_dir(&self, flag: Option<PathBuf>) -> Result<PathBuf> {
        flag.or_else(|| self.config.data_dir.clone())
            .ok_or_else(|| CliError::Usage("--data or data_dir in the configuration is required".into()))
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    std::fs::write(path, text + "\n").map_err(io(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(io(path))?;
    Ok(serde_json::from_str(&text).map_err(Error::from)?)
}

pub fn scan(ctx: &Context, data: Option<PathBuf>) -> Result<()> {
    let dir = ctx.data_dir(data)?;
    let report = partition_dataset(&dir, ctx.config.region.as_deref(), &ctx.config.experiment.data.format)
        .map_err(Error::from)?;
    let mut stdout = std::io::stdout().lock();
    let counts = report.counts();
    for (partition, n) in &counts {
        if ctx.config.partition.is_none_or(|p| p == *partition) {
            writeln!(stdout, "{partition}\t{n}").map_err(io(Path::new("stdout")))?;
        }
    }
    for (path, e) in &report.unreadable {
        writeln!(stdout, "unreadable\t{}\t{e}", path.display()).map_err(io(Path::new("stdout")))?;
    }
    Ok(())
}

pub fn gensynth(ctx: &Context) -> Result<()> {
    let out = ctx.out_dir()?;
    let files = generate_dataset(&ctx.config.synth, out).map_err(Error::from)?;
    println!("wrote {} rides", files.len());
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct SplitRecord {
    train: Vec<String>,
    val: Vec<String>,
    test: Vec<String>,
    rejected: Vec<(String, String)>,
}

fn bucket_file(dir: &Path, tag: SplitTag) -> PathBuf {
    dir.join(format!("{}.buckets", tag.as_str()))
}

pub fn preprocess(ctx: &Context, data: Option<PathBuf>) -> Result<()> {
    let dir = ctx.data_dir(data)?;
    let out = ctx.out_dir()?;
    let cfg = &ctx.config;
    let rides = load_rides(&dir, cfg.region.as_deref(), cfg.partition, &cfg.experiment.data.format)?;
    let prepared: PreparedData = prepare_data(rides, &cfg.experiment.data)?;
    for tag in SplitTag::ALL {
        let buckets: Vec<EncodedBucket> = prepared
            .get(tag)
            .examples
            .iter()
            .filter_map(Example::to_encoded)
            .collect();
        let path = bucket_file(out, tag);
        save_buckets(&path, &buckets).map_err(Error::from)?;
        let (p, n) = prepared.get(tag).class_counts();
        println!("{}\t{} buckets\t{p} incidents\t{n} normal", tag.as_str(), buckets.len());
    }
    write_json(&out.join(NORMALIZATION_FILE), &prepared.stats)?;
    write_json(
        &out.join(SPLIT_FILE),
        &SplitRecord {
            train: prepared.split.train.clone(),
            val: prepared.split.val.clone(),
            test: prepared.split.test.clone(),
            rejected: prepared
                .rejected
                .iter()
                .map(|(id, r)| (id.clone(), r.to_string()))
                .collect(),
        },
    )?;
    write_json(&out.join(CONFIG_FILE), cfg)?;
    Ok(())
}

fn load_split(ctx: &Context, dir: &Path, tag: SplitTag) -> Result<Dataset> {
    let path = bucket_file(dir, tag);
    let buckets = load_buckets(&path).map_err(|e| {
        CliError::Usage(format!("{}: {e}; run `cyclesense preprocess` first", path.display()))
    })?;
    let spec = ctx.config.experiment.data.freq;
    let examples = buckets
        .into_iter()
        .map(|b| {
            let e = Example::from_encoded(b).ok_or_else(|| CliError::Usage(format!("{}: bucket without tensors", path.display())))?;
            if e.tensors.spec != spec {
                return Err(CliError::Usage(format!(
                    "{}: buckets use f = {}, configuration has f = {}",
                    path.display(),
                    e.tensors.spec.f,
                    spec.f
                )));
            }
            Ok(e)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset::new(tag, spec, examples))
}

pub fn train(ctx: &Context, data: &Path, skip_fcn: bool) -> Result<()> {
    let out = ctx.out_dir()?;
    let cfg = &ctx.config;
    let train = load_split(ctx, data, SplitTag::Train)?;
    let val = load_split(ctx, data, SplitTag::Val)?;
    let seed = cfg.seed_for("train");
    let (model, report) = train_cyclesense(&train, &val, &cfg.experiment, seed, |phase, r| {
        log::info!("{phase} epoch {}: loss {:.4}, val AUC {:.4}", r.epoch, r.train_loss, r.val_auc);
    })?;
    checkpoint::save(&model.store, &out.join(CYCLESENSE_CKPT))?;
    report.history.write_csv(&out.join("history.csv")).map_err(Error::from)?;
    for (sensor, h) in &report.pretrain {
        h.write_csv(&out.join(format!("pretrain_{}.csv", sensor.as_str())))
            .map_err(Error::from)?;
    }
    println!(
        "cyclesense: best val AUC {:.4} at epoch {} ({} generated incidents)",
        report.history.best_auc, report.history.best_epoch, report.generated
    );
    if !skip_fcn {
        let (fcn, h) = train_fcn(&train, &val, &cfg.experiment, seed, |r| {
            log::info!("fcn epoch {}: loss {:.4}, val AUC {:.4}", r.epoch, r.train_loss, r.val_auc);
        })?;
        checkpoint::save(&fcn.store, &out.join(FCN_CKPT))?;
        h.write_csv(&out.join("fcn_history.csv")).map_err(Error::from)?;
        println!("fcn: best val AUC {:.4} at epoch {}", h.best_auc, h.best_epoch);
    }
    write_json(&out.join(CONFIG_FILE), cfg)?;
    let stats: NormalizationStats = read_json(&data.join(NORMALIZATION_FILE))?;
    write_json(&out.join(NORMALIZATION_FILE), &stats)?;
    Ok(())
}

/// Model directory of a `--model` argument that names either the directory
/// or a checkpoint inside it.
fn model_dir(model: &Path) -> PathBuf {
    if model.is_dir() {
        model.to_path_buf()
    } else {
        model.parent().map(Path::to_path_buf).unwrap_or_default()
    }
}

fn load_cyclesense(dir: &Path, cfg: &RunConfig) -> Result<CycleSense> {
    let mut m = CycleSense::<f32>::new(cfg.experiment.model_config(), 0)?;
    checkpoint::load(&mut m.store, &dir.join(CYCLESENSE_CKPT))?;
    Ok(m)
}

pub fn evaluate(ctx: &Context, data: &Path, model: &Path) -> Result<()> {
    let out = ctx.out_dir()?;
    let dir = model_dir(model);
    let trained: RunConfig = read_json(&dir.join(CONFIG_FILE))?;
    let test = load_split(ctx, data, SplitTag::Test)?;
    let mut cs = load_cyclesense(&dir, &trained)?;
    let fcn_path = dir.join(FCN_CKPT);
    if !fcn_path.exists() {
        return Err(CliError::Usage(format!("{} missing; train without --skip-fcn", fcn_path.display())));
    }
    let mut fcn = Fcn::<f32>::new(trained.experiment.fcn.clone(), 0)?;
    checkpoint::load(&mut fcn.store, &fcn_path)?;
    let scores = score_models(&mut cs, &mut fcn, &test, &trained.experiment)?;
    let report = compare(&scores, &test.labels())?;
    write_report(out, &report).map_err(Error::from)?;
    for (row, _) in &report {
        println!("{}\tAUC {:.4}\t{} incidents\t{} normal", row.model, row.auc, row.n_pos, row.n_neg);
    }
    Ok(())
}

/// One line per bucket: index, start timestamp (ms), incident probability.
pub fn detect(ride: &Path, model: &Path) -> Result<()> {
    let dir = model_dir(model);
    let cfg: RunConfig = read_json(&dir.join(CONFIG_FILE))?;
    let stats: NormalizationStats = read_json(&dir.join(NORMALIZATION_FILE))?;
    let data = &cfg.experiment.data;
    let parsed = load_ride(ride, &data.format).map_err(|e| CliError::Usage(format!("{}: {e}", ride.display())))?;
    let mut prepared = prepare_ride(parsed.ride, &data.preprocess)
        .map_err(|e| CliError::Usage(format!("{}: {e}", ride_id_of(ride))))?;
    apply_maxabs(&mut prepared.uniform, &stats);
    let examples = encode_ride(&prepared, data.freq, data.domain, &Dft::new(data.freq.f));
    let mut cs = load_cyclesense(&dir, &cfg)?;
    let refs: Vec<&Example> = examples.iter().collect();
    let scores = cyclesense::training::predict_cyclesense(&mut cs, &refs, cfg.experiment.train.eval_batch_size)
        .map_err(Error::from)?;
    let mut stdout = std::io::stdout().lock();
    for (e, s) in examples.iter().zip(scores) {
        let start = prepared.uniform.t0 + e.bucket_index as i64 * BUCKET_LEN as i64 * GRID_MS;
        writeln!(stdout, "{}\t{start}\t{s:.6}", e.bucket_index).map_err(io(Path::new("stdout")))?;
    }
    Ok(())
}

/// Rides are re-encoded once per window length, so `data` is a ride
/// directory as for `preprocess`.
pub fn gridsearch(ctx: &Context, data: Option<PathBuf>) -> Result<()> {
    let dir = ctx.data_dir(data)?;
    let out = ctx.out_dir()?;
    let cfg = &ctx.config;
    let rides = load_rides(&dir, cfg.region.as_deref(), cfg.partition, &cfg.experiment.data.format)?;
    let mut cache: Vec<(usize, PreparedData)> = Vec::new();
    let results = grid_search(&cfg.grid, cfg.grid_budget, |p| {
        if !cache.iter().any(|(f, _)| *f == p.f) {
            let mut data_cfg = cfg.experiment.data.clone();
            data_cfg.freq = cyclesense::spectral::FrequencySpec::new(p.f)
                .map_err(|e| cyclesense::training::TrainError::InvalidConfig(e.to_string()))?;
            let d = prepare_data(rides.clone(), &data_cfg)
                .map_err(|e| cyclesense::training::TrainError::InvalidConfig(e.to_string()))?;
            cache.push((p.f, d));
        }
        let d = &cache.iter().find(|(f, _)| *f == p.f).expect("cached").1;
        let mut exp = cfg.experiment.clone();
        exp.data.freq = d.train.spec;
        exp.cyclesense.rnn_units = p.rnn_units;
        exp.cyclesense.rnn_cell = p.rnn_cell;
        let train_cfg = TrainConfig {
            epochs: cfg.grid_epochs,
            patience: cfg.grid_epochs.saturating_sub(1).min(exp.train.patience),
            learning_rate: p.learning_rate,
            ..exp.train.clone()
        };
        let mut model = CycleSense::<f32>::new(exp.model_config(), cfg.seed_for("grid/init"))?;
        let mut learner = CycleSenseLearner::new(&mut model, &d.train, &d.val, &train_cfg);
        let (n_pos, n_neg) = d.train.class_counts();
        let weights = cyclesense::training::class_weights(n_pos, n_neg)?;
        let h = fit(&mut learner, &train_cfg, weights, cfg.seed_for("grid/fit"), |_| {})?;
        Ok(h.best_auc)
    })
    .map_err(Error::from)?;
    write_grid_csv(&out.join("grid.csv"), &results).map_err(Error::from)?;
    for r in &results {
        println!(
            "f={}\tunits={}\tcell={}\tlr={:e}\tval AUC {:.4}",
            r.f,
            r.rnn_units,
            r.rnn_cell.as_str(),
            r.learning_rate,
            r.val_auc
        );
    }
    Ok(())
}
