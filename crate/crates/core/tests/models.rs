mod common;

use common::*;
use cyclesense::data::{Dataset, Example, SplitTag};
use cyclesense::models::gan::{Gan, GanConfig};
use cyclesense::models::{
    augment_count, augment_dataset, batch_inputs, heuristic_scores, AugmentError, CycleSense, CycleSenseConfig, Fcn,
    FcnConfig, HeuristicConfig, RnnCell,
};
use cyclesense::preprocess::{BUCKET_LEN, CHANNELS, CH_ACC, CH_GYR};
use cyclesense::spectral::{FrequencySpec, SensorTensorSet};
use cyclesense_numerics::gradcheck::grad_check_params;
use cyclesense_numerics::ops::ClassWeights;
use cyclesense_numerics::Graph;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

fn random_example(r: &mut ChaCha8Rng, spec: FrequencySpec, label: u8) -> Example {
    let mut t = SensorTensorSet::zeros(spec);
    for v in t.accel.iter_mut().chain(t.gyro.iter_mut()).chain(t.gps.iter_mut()) {
        *v = r.random_range(-1.0..1.0);
    }
    Example {
        ride_hash: r.random(),
        bucket_index: 0,
        label,
        samples: Some(
            (0..BUCKET_LEN)
                .map(|_| std::array::from_fn(|_| r.random_range(-1.0f32..1.0)))
                .collect(),
        ),
        tensors: t,
    }
}

fn toy_cyclesense(cell: RnnCell) -> CycleSenseConfig {
    CycleSenseConfig {
        freq: FrequencySpec::new(5).unwrap(),
        channels: 3,
        fusion_convs: 2,
        rnn_cell: cell,
        rnn_units: 4,
        rnn_layers: 2,
        ..CycleSenseConfig::default()
    }
}

#[test]
fn full_cyclesense_graph_gradient() {
    for cell in [RnnCell::Gru, RnnCell::Lstm] {
        let cfg = toy_cyclesense(cell);
        let model = CycleSense::<f32>::new(cfg.clone(), 3).unwrap();
        let mut m64 = model.cast::<f64>();
        let mut r = rng(20);
        let examples: Vec<Example> = (0..3).map(|i| random_example(&mut r, cfg.freq, (i % 2) as u8)).collect();
        let refs: Vec<&Example> = examples.iter().collect();
        let inputs = batch_inputs::<f64>(&cfg, &refs);
        let labels = [0.0, 1.0, 0.0];
        let weights = ClassWeights {
            positive: 2.0,
            negative: 0.75,
        };
        let net = m64.net.clone();
        let report = grad_check_params(
            &mut m64.store,
            |g, store| {
                let x = inputs.clone().map(|t| g.input(t));
                let p = net.forward(g, store, x)?;
                g.bce_weighted(p, &labels, weights)
            },
            1e-4,
            1,
        )
        .unwrap();
        assert!(report.passed, "{cell:?}: {report:?}");
        assert!(report.checked > 500);
    }
}

#[test]
fn cyclesense_outputs_are_probabilities_and_batch_order_free() {
    let cfg = CycleSenseConfig {
        channels: 8,
        rnn_units: 8,
        ..CycleSenseConfig::default()
    };
    let mut model = CycleSense::<f32>::new(cfg.clone(), 1).unwrap();
    let mut r = rng(21);
    let examples: Vec<Example> = (0..6).map(|_| random_example(&mut r, cfg.freq, 0)).collect();
    let refs: Vec<&Example> = examples.iter().collect();
    let p = model.predict(&refs).unwrap();
    assert_eq!(p.len(), 6);
    assert!(p.iter().all(|&v| v > 0.0 && v < 1.0));
    let perm = [3, 0, 5, 1, 4, 2];
    let permuted: Vec<&Example> = perm.iter().map(|&i| &examples[i]).collect();
    let q = model.predict(&permuted).unwrap();
    for (k, &i) in perm.iter().enumerate() {
        assert!((q[k] - p[i]).abs() < 1e-6);
    }
}

fn toy_fcn() -> FcnConfig {
    FcnConfig {
        filters: vec![3, 4, 3],
        ..FcnConfig::default()
    }
}

#[test]
fn fcn_ignores_gyroscope() {
    let mut model = Fcn::<f32>::new(FcnConfig::default(), 2).unwrap();
    let mut r = rng(22);
    let spec = FrequencySpec::default();
    let a = random_example(&mut r, spec, 0);
    let mut b = a.clone();
    for row in b.samples.as_mut().unwrap() {
        for c in CH_GYR..CH_GYR + 3 {
            row[c] += r.random_range(-5.0f32..5.0);
        }
    }
    let pa = model.predict(&[&a]).unwrap();
    let pb = model.predict(&[&b]).unwrap();
    assert_eq!(pa[0].to_bits(), pb[0].to_bits());
    assert!(pa[0] > 0.0 && pa[0] < 1.0);

    let mut c = a.clone();
    c.samples.as_mut().unwrap()[40][CH_ACC] += 3.0;
    assert_ne!(model.predict(&[&c]).unwrap()[0], pa[0]);
}

#[test]
fn fcn_gradient_at_toy_width() {
    // ReLU has no derivative at 0; this init keeps every pre-activation
    // farther than the finite-difference step from it.
    let model = Fcn::<f32>::new(toy_fcn(), 0).unwrap();
    let mut m64 = model.cast::<f64>();
    let mut r = rng(23);
    let examples: Vec<Example> = (0..2).map(|i| random_example(&mut r, FrequencySpec::default(), i)).collect();
    let refs: Vec<&Example> = examples.iter().collect();
    let x = cyclesense::models::fcn::fcn_batch::<f64>(&refs).unwrap();
    let net = m64.net.clone();
    let report = grad_check_params(
        &mut m64.store,
        |g, store| {
            let xv = g.input(x.clone());
            let p = net.forward(g, store, xv)?;
            g.bce_weighted(p, &[1.0, 0.0], ClassWeights::default())
        },
        1e-4,
        1,
    )
    .unwrap();
    assert!(report.passed, "{report:?}");
}

#[test]
fn heuristic_matches_jump_oracle_ranking() {
    let mut r = rng(24);
    let buckets: Vec<Vec<[f32; CHANNELS]>> = (0..40)
        .map(|_| {
            let mut b: Vec<[f32; CHANNELS]> = (0..BUCKET_LEN)
                .map(|_| {
                    let mut row = [0.0f32; CHANNELS];
                    row[CH_ACC] = r.random_range(-0.3..0.3);
                    row
                })
                .collect();
            if r.random_bool(0.3) {
                let at = r.random_range(1..BUCKET_LEN);
                b[at][CH_ACC] += r.random_range(1.0..4.0);
            }
            b
        })
        .collect();
    let scores = heuristic_scores(buckets.iter().map(|b| b.as_slice()), &HeuristicConfig::default());
    let oracle: Vec<f64> = buckets
        .iter()
        .map(|b| {
            let col: Vec<f64> = b.iter().map(|row| row[CH_ACC] as f64).collect();
            jump_score_oracle(&col, 30)
        })
        .collect();
    assert_eq!(argsort(&scores), argsort(&oracle));
    assert!(scores.iter().all(|&s| (0.0..=1.0).contains(&s)));
}

#[test]
fn heuristic_ranking_survives_channel_rescaling() {
    let mut r = rng(25);
    let buckets: Vec<Vec<[f32; CHANNELS]>> = (0..30)
        .map(|_| {
            (0..BUCKET_LEN)
                .map(|_| {
                    let mut row = [0.0f32; CHANNELS];
                    for a in 0..3 {
                        row[CH_ACC + a] = r.random_range(-1.0..1.0) * (1 + a) as f32;
                    }
                    row
                })
                .collect()
        })
        .collect();
    let cfg = HeuristicConfig::default();
    let base = heuristic_scores(buckets.iter().map(|b| b.as_slice()), &cfg);
    let scaled: Vec<Vec<[f32; CHANNELS]>> = buckets
        .iter()
        .map(|b| {
            b.iter()
                .map(|row| {
                    let mut out = *row;
                    out[CH_ACC + 1] *= 8.0;
                    out
                })
                .collect()
        })
        .collect();
    let s = heuristic_scores(scaled.iter().map(|b| b.as_slice()), &cfg);
    assert_eq!(argsort(&base), argsort(&s));
}

fn incident_sets(n: usize, spec: FrequencySpec, seed: u64) -> Vec<SensorTensorSet> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            let mut t = SensorTensorSet::zeros(spec);
            let burst = r.random_range(0..spec.windows());
            for axis in 0..3 {
                for k in 0..spec.f {
                    for w in 0..spec.windows() {
                        for part in 0..2 {
                            let i = SensorTensorSet::motion_index(&spec, axis, k, w, part);
                            let base = if w == burst { 2.0 } else { 0.1 };
                            t.accel[i] = base * r.random_range(-1.0f32..1.0);
                            t.gyro[i] = 0.1 * r.random_range(-1.0f32..1.0);
                        }
                    }
                }
            }
            t.gps.iter_mut().for_each(|v| *v = 0.5 + 0.05 * r.random_range(-1.0f32..1.0));
            t
        })
        .collect()
}

fn small_gan() -> GanConfig {
    GanConfig {
        latent: 16,
        channels: 8,
        batch_size: 16,
        ..GanConfig::default()
    }
}

#[test]
fn untrained_discriminator_is_at_chance() {
    let spec = FrequencySpec::default();
    let real = incident_sets(64, spec, 26);
    let refs: Vec<&SensorTensorSet> = real.iter().collect();
    let mut gan = Gan::<f32>::new(GanConfig::default(), spec, 7).unwrap();
    let (acc, _) = gan.evaluate_discriminator(&refs, 1).unwrap();
    assert!((acc - 0.5).abs() <= 0.15, "{acc}");
}

#[test]
fn generated_sets_match_real_shapes_and_are_seeded() {
    let spec = FrequencySpec::default();
    let mut gan = Gan::<f32>::new(small_gan(), spec, 8).unwrap();
    let a = gan.generate(3, 5).unwrap();
    let b = gan.generate(3, 5).unwrap();
    assert_eq!(a, b);
    let real = SensorTensorSet::zeros(spec);
    for s in &a {
        assert_eq!(s.accel.len(), real.accel.len());
        assert_eq!(s.gyro.len(), real.gyro.len());
        assert_eq!(s.gps.len(), real.gps.len());
        assert!(s.is_finite());
    }
}

#[test]
fn discriminator_learns_fakes_within_200_steps() {
    let spec = FrequencySpec::default();
    let real = incident_sets(128, spec, 27);
    let refs: Vec<&SensorTensorSet> = real.iter().collect();
    let mut gan = Gan::<f32>::new(small_gan(), spec, 9).unwrap();
    let (_, before) = gan.evaluate_discriminator(&refs, 3).unwrap();
    let mut r = rng(28);
    for _ in 0..200 {
        let batch: Vec<&SensorTensorSet> = (0..16).map(|_| refs[r.random_range(0..refs.len())]).collect();
        gan.train_step(&batch).unwrap();
    }
    let (_, after) = gan.evaluate_discriminator(&refs, 3).unwrap();
    assert_eq!(gan.steps(), 200);
    assert!(after < before, "fake loss {before} -> {after}");
}

#[test]
fn augmentation_arithmetic() {
    assert_eq!(augment_count(100, 1000, 0.10), 90);
    assert_eq!(augment_count(500, 500, 0.10), 0);
    assert_eq!(augment_count(600, 500, 0.10), 0);
    let mut r = rng(29);
    for _ in 0..50 {
        let n_pos = r.random_range(0..5_000usize);
        let n_neg = r.random_range(n_pos..200_000usize);
        let n = augment_count(n_pos, n_neg, 0.10);
        assert_eq!(n, (n_neg - n_pos) / 10);
        // Remaining gap is 0.9 of the original, rounded up.
        let gap = n_neg - n_pos;
        assert_eq!(n_neg - (n_pos + n), gap - gap / 10);
    }
}

#[test]
fn augment_dataset_appends_generated_incidents() {
    let spec = FrequencySpec::default();
    let mut r = rng(30);
    let examples: Vec<Example> = (0..40).map(|i| random_example(&mut r, spec, (i < 5) as u8)).collect();
    let train = Dataset::new(SplitTag::Train, spec, examples);
    let mut gan = Gan::<f32>::new(small_gan(), spec, 10).unwrap();
    let out = augment_dataset(&train, &mut gan, 0.10, 1).unwrap();
    assert_eq!(out.len(), 40 + 3);
    assert_eq!(out.class_counts(), (8, 35));
    assert_eq!(&out.examples[..40], &train.examples[..]);
    assert!(out.examples[40..].iter().all(|e| e.label == 1 && e.samples.is_none()));
    assert_eq!(out.observed(), train);

    let val = Dataset::new(SplitTag::Val, spec, train.examples.clone());
    assert!(matches!(
        augment_dataset(&val, &mut gan, 0.10, 1),
        Err(AugmentError::NotTrainingSplit(SplitTag::Val))
    ));
    let none = Dataset::new(SplitTag::Train, spec, train.examples[5..].to_vec());
    assert!(matches!(augment_dataset(&none, &mut gan, 0.10, 1), Err(AugmentError::NoPositives)));
}

#[test]
fn fcn_forward_runs_on_graph() {
    let mut model = Fcn::<f32>::new(toy_fcn(), 5).unwrap();
    let mut r = rng(31);
    let e = random_example(&mut r, FrequencySpec::default(), 0);
    let x = cyclesense::models::fcn::fcn_batch::<f32>(&[&e]).unwrap();
    let mut g = Graph::new(false, 0);
    let xv = g.input(x);
    let p = model.forward(&mut g, xv).unwrap();
    assert_eq!(g.value(p).shape(), &[1, 1]);
}
