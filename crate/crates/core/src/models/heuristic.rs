//! Jump heuristic turned into a continuous bucket score.
//!
//! Per sliding window of `window` samples and per accelerometer axis, the
//! mean of the `top_jumps` largest adjacent absolute differences is taken.
//! A bucket's raw score per axis is the maximum over its windows. Each axis
//! is divided by its median raw score over the scored set (its typical jump
//! level), the bucket score is the maximum over axes, and the scores are
//! finally min-max normalized over the set. Scaling one input channel by a
//! positive factor leaves the ranking unchanged.

use serde::{Deserialize, Serialize};

use crate::preprocess::{CHANNELS, CH_ACC};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeuristicConfig {
    /// Window length in samples of the 100 ms grid.
    pub window: usize,
    pub top_jumps: usize,
}

impl Default for HeuristicConfig {
    fn default() -> Self {
        Self {
            window: 30,
            top_jumps: 2,
        }
    }
}

/// Raw per-axis score of one bucket.
pub fn bucket_axis_scores(samples: &[[f32; CHANNELS]], cfg: &HeuristicConfig) -> [f64; 3] {
    assert!(cfg.window >= 2 && cfg.top_jumps >= 1, "window >= 2 and top_jumps >= 1");
    let mut out = [0.0f64; 3];
    if samples.len() < 2 {
        return out;
    }
    let window = cfg.window.min(samples.len());
    for (axis, slot) in out.iter_mut().enumerate() {
        let jumps: Vec<f64> = samples
            .windows(2)
            .map(|w| (w[1][CH_ACC + axis] as f64 - w[0][CH_ACC + axis] as f64).abs())
            .collect();
        // A window of `window` samples spans `window - 1` jumps.
        for win in jumps.windows(window - 1) {
            let mut top = win.to_vec();
            top.sort_by(|a, b| b.total_cmp(a));
            let k = cfg.top_jumps.min(top.len());
            let s = top[..k].iter().sum::<f64>() / k as f64;
            *slot = slot.max(s);
        }
    }
    out
}

/// Scores in `[0, 1]` for a set of buckets, normalized over the set.
pub fn heuristic_scores<'a>(
    buckets: impl IntoIterator<Item = &'a [[f32; CHANNELS]]>,
    cfg: &HeuristicConfig,
) -> Vec<f64> {
    let raw: Vec<[f64; 3]> = buckets.into_iter().map(|b| bucket_axis_scores(b, cfg)).collect();
    let scale: [f64; 3] = std::array::from_fn(|a| axis_scale(raw.iter().map(|r| r[a]).collect()));
    let combined: Vec<f64> = raw
        .iter()
        .map(|r| {
            (0..3)
                .map(|a| if scale[a] > 0.0 { r[a] / scale[a] } else { 0.0 })
                .fold(0.0, f64::max)
        })
        .collect();
    min_max(&combined)
}

/// Median of the raw scores, or their maximum when the median is zero.
fn axis_scale(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let median = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
    if median > 0.0 {
        median
    } else {
        v[n - 1]
    }
}

fn min_max(v: &[f64]) -> Vec<f64> {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0.0; v.len()];
    }
    v.iter().map(|x| (x - lo) / (hi - lo)).collect()
}
