//! Finite-difference checks for every layer, in 64-bit at toy shapes.

use cyclesense_numerics::gradcheck::{grad_check, grad_check_params};
use cyclesense_numerics::layers::{
    BatchNorm, BatchNormConfig, CellKind, ConvBlock, ConvBlockConfig, Dense, PaddingMode, ResidualBlock,
    StackedRecurrent,
};
use cyclesense_numerics::ops::ClassWeights;
use cyclesense_numerics::{ParamStore, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-4;

fn wave(shape: &[usize], phase: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |i| ((i as f64 + phase) * 0.731).sin())
}

fn cfg(kernel: [usize; 3], padding: PaddingMode, channels: usize, dropout: f64) -> ConvBlockConfig {
    ConvBlockConfig {
        kernel,
        padding,
        channels,
        dropout,
        batch_norm: BatchNormConfig::default(),
    }
}

#[test]
fn conv_block_with_dropout() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::<f64>::new();
    let block = ConvBlock::new(&mut store, "blk", 2, cfg([3, 3, 3], PaddingMode::Same, 3, 0.2), &mut rng).unwrap();
    let x = wave(&[2, 3, 3, 2, 2], 0.0);
    let r = wave(&[2, 3, 3, 2, 3], 1.5);
    let report = grad_check_params(
        &mut store,
        |g, s| {
            let xv = g.input(x.clone());
            let y = block.forward(g, s, xv)?;
            let rv = g.input(r.clone());
            let p = g.mul(y, rv)?;
            g.sum_all(p)
        },
        TOL,
        1,
    )
    .unwrap();
    assert!(report.passed, "{report:?}");
}

#[test]
fn conv_block_input_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParamStore::<f64>::new();
    let block = ConvBlock::new(&mut store, "blk", 2, cfg([3, 3, 1], PaddingMode::Valid, 2, 0.0), &mut rng).unwrap();
    let report = grad_check(
        |g, v| {
            let mut s = store.clone();
            let y = block.forward(g, &mut s, v[0])?;
            let t = g.tanh(y);
            g.sum_all(t)
        },
        &[wave(&[2, 4, 3, 2, 2], 0.3)],
        TOL,
    )
    .unwrap();
    assert!(report.passed, "{report:?}");
}

#[test]
fn batch_norm_layer() {
    let mut store = ParamStore::<f64>::new();
    let bn = BatchNorm::new(&mut store, "bn", 3, BatchNormConfig::default()).unwrap();
    let x = wave(&[4, 2, 3], 0.0);
    let r = wave(&[4, 2, 3], 2.0);
    let report = grad_check(
        |g, v| {
            let mut s = store.clone();
            let y = bn.forward(g, &mut s, v[0], true)?;
            let rv = g.input(r.clone());
            let p = g.mul(y, rv)?;
            g.sum_all(p)
        },
        &[x],
        TOL,
    )
    .unwrap();
    assert!(report.passed, "{report:?}");
}

#[test]
fn residual_block() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::<f64>::new();
    let c = cfg([3, 3, 1], PaddingMode::Same, 2, 0.0);
    let res = ResidualBlock::new(&mut store, "res", 2, c, c, &mut rng).unwrap();
    let x = wave(&[2, 3, 3, 1, 2], 0.7);
    let report = grad_check(
        |g, v| {
            let mut s = store.clone();
            let y = res.forward(g, &mut s, v[0])?;
            let q = g.mul(y, y)?;
            g.mean_all(q)
        },
        &[x.clone()],
        TOL,
    )
    .unwrap();
    assert!(report.passed, "{report:?}");
    let report = grad_check_params(
        &mut store,
        |g, s| {
            let xv = g.input(x.clone());
            // Mean keeps the loss O(1): conv biases ahead of batch norm have
            // an exactly zero gradient, compared on the absolute floor.
            let y = res.forward(g, s, xv)?;
            let q = g.mul(y, y)?;
            g.mean_all(q)
        },
        TOL,
        1,
    )
    .unwrap();
    assert!(report.passed, "{report:?}");
}

#[test]
fn stacked_gru_bptt() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut store = ParamStore::<f64>::new();
    let gru = StackedRecurrent::new(&mut store, "gru", CellKind::Gru, 3, 4, 2, &mut rng).unwrap();
    let x = wave(&[2, 5, 3], 0.1);
    let report = grad_check_params(
        &mut store,
        |g, s| {
            let xv = g.input(x.clone());
            let h = gru.forward(g, s, xv)?;
            let q = g.mul(h, h)?;
            g.sum_all(q)
        },
        TOL,
        1,
    )
    .unwrap();
    assert!(report.passed, "{report:?}");
}

#[test]
fn dense_layer() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut store = ParamStore::<f64>::new();
    let dense = Dense::new(&mut store, "dense", 4, 3, &mut rng).unwrap();
    let x = wave(&[5, 4], 0.0);
    let report = grad_check_params(
        &mut store,
        |g, s| {
            let xv = g.input(x.clone());
            let y = dense.forward(g, s, xv)?;
            let t = g.sigmoid(y);
            g.sum_all(t)
        },
        TOL,
        1,
    )
    .unwrap();
    assert!(report.passed, "{report:?}");
}

#[test]
fn weighted_bce() {
    let labels = [1.0, 0.0, 1.0, 0.0, 0.0];
    let weights = ClassWeights {
        positive: 2.5,
        negative: 0.625,
    };
    let report = grad_check(
        |g, v| {
            let p = g.sigmoid(v[0]);
            g.bce_weighted(p, &labels, weights)
        },
        &[wave(&[5, 1], 0.0)],
        TOL,
    )
    .unwrap();
    assert!(report.passed, "{report:?}");
}
