//! Independent reference implementations used by the integration tests and
//! the acceptance suite. Each one is written directly from the definition
//! it checks, favouring obviousness over speed.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn insertion_sorted(values: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::with_capacity(values.len());
    for &v in values {
        let mut i = out.len();
        out.push(v);
        while i > 0 && out[i - 1] > v {
            out[i] = out[i - 1];
            i -= 1;
        }
        out[i] = v;
    }
    out
}

/// Linear-interpolation quantile at `num / den`, with the rank position
/// `(n - 1) · num / den` split into integer and fractional parts exactly.
pub fn quantile_oracle(values: &[f64], num: usize, den: usize) -> f64 {
    let sorted = insertion_sorted(values);
    let scaled = (sorted.len() - 1) * num;
    let (lo, rem) = (scaled / den, scaled % den);
    if rem == 0 {
        return sorted[lo];
    }
    let frac = rem as f64 / den as f64;
    sorted[lo] + (sorted[lo + 1] - sorted[lo]) * frac
}

pub fn tukey_oracle(values: &[f64], k: f64) -> (f64, f64) {
    let q1 = quantile_oracle(values, 1, 4);
    let q3 = quantile_oracle(values, 3, 4);
    (q1 - k * (q3 - q1), q3 + k * (q3 - q1))
}

/// `X_k = Σ_n x_n e^{-2πikn/N}` by direct summation.
pub fn naive_dft(x: &[f64]) -> Vec<(f64, f64)> {
    let n = x.len();
    (0..n)
        .map(|k| {
            let mut re = 0.0;
            let mut im = 0.0;
            for (j, &v) in x.iter().enumerate() {
                // Reduce k·j mod N first so the angle stays small.
                let phase = -2.0 * std::f64::consts::PI * ((k * j) % n) as f64 / n as f64;
                re += v * phase.cos();
                im += v * phase.sin();
            }
            (re, im)
        })
        .collect()
}

/// Share of (positive, negative) pairs ordered correctly, ties counting
/// one half, by enumerating every pair.
pub fn pairwise_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let mut half_units: u128 = 0;
    let mut pairs: u128 = 0;
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] == 0 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] != 0 {
                continue;
            }
            pairs += 1;
            half_units += if si > sj {
                2
            } else if si == sj {
                1
            } else {
                0
            };
        }
    }
    half_units as f64 / (2 * pairs) as f64
}

/// Label of each of `n_buckets` 10 s buckets from `t0`, assigning every
/// incident to `floor((t - t0) / 10 s)`.
pub fn label_oracle(t0: i64, n_buckets: usize, incidents: &[i64]) -> Vec<u8> {
    let mut out = vec![0u8; n_buckets];
    for &t in incidents {
        if t < t0 {
            continue;
        }
        let b = ((t - t0) / 10_000) as usize;
        if b < n_buckets {
            out[b] = 1;
        }
    }
    out
}

/// Raw jump score of one accelerometer axis: every 30-sample window, the
/// mean of its two largest adjacent absolute differences, maximized over
/// windows.
pub fn jump_score_oracle(column: &[f64], window: usize) -> f64 {
    let mut best = 0.0f64;
    for start in 0..=column.len() - window {
        let (mut a, mut b) = (0.0f64, 0.0f64);
        for i in start + 1..start + window {
            let d = (column[i] - column[i - 1]).abs();
            if d > a {
                b = a;
                a = d;
            } else if d > b {
                b = d;
            }
        }
        best = best.max((a + b) / 2.0);
    }
    best
}

/// Indices sorted by score, ties broken by index.
pub fn argsort(v: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]).then(a.cmp(&b)));
    idx
}

pub fn random_values(rng: &mut ChaCha8Rng, n: usize, discrete: bool) -> Vec<f64> {
    (0..n)
        .map(|_| {
            if discrete {
                rng.random_range(0..20) as f64 / 4.0
            } else {
                rng.random_range(-1e3..1e3)
            }
        })
        .collect()
}
