//! Raw records to normalized, labeled 10-second buckets.

pub mod store;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ride_format::{DatasetPartition, GpsFix, IncidentRecord, RawRide, SensorRecord};

/// Grid spacing of resampled rides.
pub const GRID_MS: i64 = 100;
/// Samples per bucket (10 s).
pub const BUCKET_LEN: usize = 100;
pub const BUCKET_MS: i64 = GRID_MS * BUCKET_LEN as i64;
pub const CHANNELS: usize = 8;
pub const CHANNEL_NAMES: [&str; CHANNELS] = ["acc_x", "acc_y", "acc_z", "gyr_a", "gyr_b", "gyr_c", "vel_lat", "vel_lon"];
pub const CH_ACC: usize = 0;
pub const CH_GYR: usize = 3;
pub const CH_VEL: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    /// Rides with a larger adjacent gap are rejected.
    pub max_gap_ms: i64,
    /// Tukey fence factor for GPS accuracy.
    pub gps_accuracy_k: f64,
    /// Tukey fence factor for each velocity component.
    pub velocity_k: f64,
    /// Divide channels by their training-split maximum magnitude.
    pub normalize: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            max_gap_ms: 6_000,
            gps_accuracy_k: 1.5,
            velocity_k: 3.0,
            normalize: true,
        }
    }
}

#[derive(Clone, Copy, Debug, Error, PartialEq, Eq)]
pub enum Rejected {
    #[error("adjacent records {gap_ms} ms apart")]
    GapTooLarge { gap_ms: i64 },
}

#[derive(Clone, Copy, Debug, Error, PartialEq, Eq)]
pub enum PreprocessError {
    #[error("no values to compute quantiles from")]
    EmptyInput,
}

/// Velocity between two consecutive fixes, attributed to the earlier one.
/// A component cleared as an outlier is `None`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VelocitySample {
    pub timestamp: i64,
    /// Degrees per second of latitude and longitude.
    pub vel: [Option<f64>; 2],
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CleanFlags {
    pub duplicate_timestamps: usize,
    pub gps_cleared: usize,
    pub velocity_cleared: usize,
    pub degenerate_pairs: usize,
    /// Fewer than two usable fixes; velocity channels are zero.
    pub no_gps: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CleanRide {
    pub ride_id: String,
    pub partition: DatasetPartition,
    /// Strictly increasing timestamps.
    pub records: Vec<SensorRecord>,
    pub velocity: Vec<VelocitySample>,
    pub incidents: Vec<IncidentRecord>,
    pub flags: CleanFlags,
}

/// Sorts records, drops repeated timestamps, and rejects rides with a gap
/// above `max_gap_ms`.
pub fn clean_ride(ride: RawRide, cfg: &PreprocessConfig) -> Result<CleanRide, Rejected> {
    let mut records = ride.records;
    records.sort_by_key(|r| r.timestamp);
    let before = records.len();
    records.dedup_by_key(|r| r.timestamp);
    let mut flags = CleanFlags {
        duplicate_timestamps: before - records.len(),
        ..CleanFlags::default()
    };
    if let Some(gap_ms) = records
        .windows(2)
        .map(|w| w[1].timestamp - w[0].timestamp)
        .find(|&g| g > cfg.max_gap_ms)
    {
        return Err(Rejected::GapTooLarge { gap_ms });
    }
    let (velocity, degenerate) = gps_to_velocity(&fixes_of(&records));
    flags.degenerate_pairs = degenerate;
    Ok(CleanRide {
        ride_id: ride.ride_id,
        partition: ride.partition,
        records,
        velocity,
        incidents: ride.incidents,
        flags,
    })
}

/// Linear-interpolation quantile of sorted data at `p ∈ [0, 1]`.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Tukey fences `(q25 − k·IQR, q75 + k·IQR)`.
pub fn tukey_bounds(values: &[f64], k: f64) -> Result<(f64, f64), PreprocessError> {
    if values.is_empty() {
        return Err(PreprocessError::EmptyInput);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q25 = quantile_sorted(&sorted, 0.25);
    let q75 = quantile_sorted(&sorted, 0.75);
    let iqr = q75 - q25;
    Ok((q25 - k * iqr, q75 + k * iqr))
}

fn fixes_of(records: &[SensorRecord]) -> Vec<(i64, GpsFix)> {
    records.iter().filter_map(|r| r.gps.map(|g| (r.timestamp, g))).collect()
}

/// Differences of consecutive fixes over elapsed seconds; `n` fixes give up
/// to `n − 1` samples. Pairs with equal timestamps are skipped and counted.
pub fn gps_to_velocity(fixes: &[(i64, GpsFix)]) -> (Vec<VelocitySample>, usize) {
    let mut out = Vec::with_capacity(fixes.len().saturating_sub(1));
    let mut degenerate = 0;
    for w in fixes.windows(2) {
        let (t0, a) = w[0];
        let (t1, b) = w[1];
        if t1 == t0 {
            degenerate += 1;
            continue;
        }
        let dt = (t1 - t0) as f64 / 1000.0;
        out.push(VelocitySample {
            timestamp: t0,
            vel: [Some((b.lat - a.lat) / dt), Some((b.lon - a.lon) / dt)],
        });
    }
    (out, degenerate)
}

/// Clears GPS fixes with outlying accuracy, recomputes velocities from the
/// remaining fixes, then clears outlying velocity components.
pub fn filter_outliers(ride: &mut CleanRide, cfg: &PreprocessConfig) {
    let acc: Vec<f64> = ride.records.iter().filter_map(|r| r.gps.map(|g| g.accuracy)).collect();
    if let Ok((lo, hi)) = tukey_bounds(&acc, cfg.gps_accuracy_k) {
        for r in &mut ride.records {
            if r.gps.is_some_and(|g| g.accuracy < lo || g.accuracy > hi) {
                r.gps = None;
                ride.flags.gps_cleared += 1;
            }
        }
    }
    let fixes = fixes_of(&ride.records);
    let (mut velocity, degenerate) = gps_to_velocity(&fixes);
    ride.flags.degenerate_pairs = degenerate;
    for c in 0..2 {
        let vals: Vec<f64> = velocity.iter().filter_map(|v| v.vel[c]).collect();
        if let Ok((lo, hi)) = tukey_bounds(&vals, cfg.velocity_k) {
            for v in &mut velocity {
                if v.vel[c].is_some_and(|x| x < lo || x > hi) {
                    v.vel[c] = None;
                    ride.flags.velocity_cleared += 1;
                }
            }
        }
    }
    ride.flags.no_gps = velocity.is_empty();
    ride.velocity = velocity;
}

/// A ride on an exact 100 ms grid.
#[derive(Clone, Debug, PartialEq)]
pub struct UniformRide {
    pub ride_id: String,
    pub partition: DatasetPartition,
    /// Timestamp of grid sample 0.
    pub t0: i64,
    /// Channel order as in [`CHANNEL_NAMES`].
    pub samples: Vec<[f64; CHANNELS]>,
}

impl UniformRide {
    pub fn timestamp(&self, i: usize) -> i64 {
        self.t0 + GRID_MS * i as i64
    }
}

/// Linear interpolation of `knots` (strictly increasing times) at each grid
/// time, clamped to the end values outside the knot span.
pub fn interpolate(knots: &[(i64, f64)], t0: i64, n: usize, out: &mut [f64]) {
    if knots.is_empty() {
        out[..n].iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    let mut seg = 0;
    for (i, o) in out[..n].iter_mut().enumerate() {
        let t = t0 + GRID_MS * i as i64;
        while seg + 1 < knots.len() && knots[seg + 1].0 <= t {
            seg += 1;
        }
        let (ta, va) = knots[seg];
        *o = if t <= ta || seg + 1 == knots.len() {
            va
        } else {
            let (tb, vb) = knots[seg + 1];
            va + (vb - va) * ((t - ta) as f64 / (tb - ta) as f64)
        };
    }
}

/// Resamples every channel onto `t_first, t_first + 100, …` up to the last
/// record.
pub fn resample_uniform(ride: &CleanRide) -> UniformRide {
    let t0 = ride.records[0].timestamp;
    let t_last = ride.records[ride.records.len() - 1].timestamp;
    let n = ((t_last - t0) / GRID_MS) as usize + 1;
    let mut samples = vec![[0.0; CHANNELS]; n];
    let mut col = vec![0.0; n];
    let mut put = |ch: usize, knots: Vec<(i64, f64)>, col: &mut Vec<f64>| {
        interpolate(&knots, t0, n, col);
        for (s, v) in samples.iter_mut().zip(col.iter()) {
            s[ch] = *v;
        }
    };
    for a in 0..3 {
        put(CH_ACC + a, ride.records.iter().map(|r| (r.timestamp, r.acc[a])).collect(), &mut col);
        put(
            CH_GYR + a,
            ride.records.iter().filter_map(|r| r.gyr.map(|g| (r.timestamp, g[a]))).collect(),
            &mut col,
        );
    }
    for c in 0..2 {
        put(
            CH_VEL + c,
            ride.velocity.iter().filter_map(|v| v.vel[c].map(|x| (v.timestamp, x))).collect(),
            &mut col,
        );
    }
    UniformRide {
        ride_id: ride.ride_id.clone(),
        partition: ride.partition,
        t0,
        samples,
    }
}

/// Per-channel divisors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub max_abs: [f64; CHANNELS],
}

impl NormalizationStats {
    pub fn identity() -> Self {
        Self {
            max_abs: [1.0; CHANNELS],
        }
    }
}

/// Largest magnitude per channel over `rides`; an all-zero channel gets 1.
pub fn fit_maxabs<'a>(rides: impl IntoIterator<Item = &'a UniformRide>) -> NormalizationStats {
    let mut max_abs = [0.0f64; CHANNELS];
    for r in rides {
        for s in &r.samples {
            for (m, v) in max_abs.iter_mut().zip(s) {
                *m = m.max(v.abs());
            }
        }
    }
    for m in &mut max_abs {
        if *m == 0.0 {
            *m = 1.0;
        }
    }
    NormalizationStats { max_abs }
}

pub fn apply_maxabs(ride: &mut UniformRide, stats: &NormalizationStats) {
    for s in &mut ride.samples {
        for (v, m) in s.iter_mut().zip(&stats.max_abs) {
            *v /= m;
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledBucket {
    pub ride_id: String,
    pub bucket_index: u32,
    /// Exactly [`BUCKET_LEN`] rows.
    pub samples: Vec<[f32; CHANNELS]>,
    pub label: u8,
}

/// Disjoint 100-sample windows from the ride start; a trailing remainder is
/// dropped. A bucket is positive iff an incident time lies in
/// `[start, start + 10 s)`.
pub fn bucketize_and_label(ride: &UniformRide, incidents: &[IncidentRecord]) -> Vec<LabeledBucket> {
    ride.samples
        .chunks_exact(BUCKET_LEN)
        .enumerate()
        .map(|(b, chunk)| {
            let start = ride.t0 + BUCKET_MS * b as i64;
            let hit = incidents
                .iter()
                .any(|i| i.timestamp >= start && i.timestamp < start + BUCKET_MS);
            LabeledBucket {
                ride_id: ride.ride_id.clone(),
                bucket_index: b as u32,
                samples: chunk.iter().map(|s| s.map(|v| v as f32)).collect(),
                label: hit as u8,
            }
        })
        .collect()
}

/// Cleaned, outlier-filtered and resampled ride with its incidents.
#[derive(Clone, Debug)]
pub struct PreparedRide {
    pub uniform: UniformRide,
    pub incidents: Vec<IncidentRecord>,
    pub flags: CleanFlags,
}

pub fn prepare_ride(ride: RawRide, cfg: &PreprocessConfig) -> Result<PreparedRide, Rejected> {
    let mut clean = clean_ride(ride, cfg)?;
    filter_outliers(&mut clean, cfg);
    if clean.flags.no_gps {
        log::debug!("{}: no usable GPS; velocity channels are zero", clean.ride_id);
    }
    Ok(PreparedRide {
        uniform: resample_uniform(&clean),
        incidents: clean.incidents,
        flags: clean.flags,
    })
}
