//! Deterministic synthetic rides with injected, labeled incidents.
//!
//! Rows arrive every `row_interval_ms ± row_jitter_ms` with Gaussian
//! accelerometer and gyroscope noise; a GPS fix is attached every
//! `gps_interval_ms` along a smooth random walk. Incidents are either a
//! brake spike (a one-second decaying exponential on `acc_y`) or a swerve (a
//! one-second 1 Hz sinusoid on gyroscope `c` with a weaker echo on `acc_x`).
//! Optional road bumps put short `acc_z` spikes on incident-free rows.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::preprocess::{BUCKET_MS, GRID_MS};
use crate::ride_format::{
    write_ride, DatasetPartition, GpsFix, IncidentRecord, Platform, RawRide, SensorRecord, VersionHeader,
};
use crate::seed::derive_seed;

const GRAVITY: f64 = 9.81;
const PROFILE_MS: i64 = 1_000;
const BRAKE_TAU_S: f64 = 0.3;
const SWERVE_HZ: f64 = 1.0;
const METERS_PER_DEG_LAT: f64 = 111_320.0;
pub const BRAKE_TYPE: i32 = 1;
pub const SWERVE_TYPE: i32 = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n_rides: usize,
    /// Ride duration range in seconds.
    pub min_duration_s: f64,
    pub max_duration_s: f64,
    pub acc_noise: f64,
    pub gyro_noise: f64,
    /// Mean incidents per ride (Poisson).
    pub incident_rate: f64,
    /// Incident amplitude in noise standard deviations.
    pub amplitude_sigma: f64,
    /// Share of incidents that are brake spikes; the rest are swerves.
    pub brake_share: f64,
    /// `acc_x` amplitude of a swerve relative to `amplitude_sigma`.
    pub swerve_accel_share: f64,
    /// Mean road bumps per minute of riding.
    pub bumps_per_minute: f64,
    /// Bump amplitude in accelerometer noise standard deviations.
    pub bump_sigma: f64,
    pub row_interval_ms: i64,
    pub row_jitter_ms: i64,
    pub gps_interval_ms: i64,
    /// Probability that a fix has an implausible accuracy and position.
    pub gps_outlier_rate: f64,
    pub region: String,
    pub partition: DatasetPartition,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_rides: 500,
            min_duration_s: 40.0,
            max_duration_s: 100.0,
            acc_noise: 0.3,
            gyro_noise: 0.05,
            incident_rate: 0.8,
            amplitude_sigma: 6.0,
            brake_share: 0.75,
            swerve_accel_share: 0.5,
            bumps_per_minute: 0.6,
            bump_sigma: 5.0,
            row_interval_ms: 250,
            row_jitter_ms: 50,
            gps_interval_ms: 3_000,
            gps_outlier_rate: 0.02,
            region: "Berlin".into(),
            partition: DatasetPartition::AndroidNew,
            seed: 42,
        }
    }
}

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic spec: {0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::Invalid(m.into()));
        if !(self.min_duration_s >= 30.0 && self.max_duration_s >= self.min_duration_s) {
            return bad("durations must be at least 30 s and ordered");
        }
        if !(self.incident_rate >= 0.0 && self.bumps_per_minute >= 0.0) {
            return bad("rates must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.brake_share) || !(0.0..=1.0).contains(&self.gps_outlier_rate) {
            return bad("shares must lie in [0, 1]");
        }
        if !(self.acc_noise > 0.0 && self.gyro_noise > 0.0 && self.amplitude_sigma >= 0.0) {
            return bad("noise levels must be positive");
        }
        if self.row_interval_ms <= 0
            || self.row_jitter_ms < 0
            || self.row_jitter_ms >= self.row_interval_ms
            || self.gps_interval_ms < self.row_interval_ms
        {
            return bad("row and GPS intervals");
        }
        if self.region.is_empty() || self.region.contains(['/', '\\']) {
            return bad("region must be a plain directory name");
        }
        Ok(())
    }

    fn version(&self) -> VersionHeader {
        let (platform, app_version) = match self.partition {
            DatasetPartition::AndroidOld => (Platform::Android, 20),
            DatasetPartition::AndroidNew => (Platform::Android, 84),
            DatasetPartition::Ios => (Platform::Ios, 84),
        };
        VersionHeader {
            platform,
            app_version,
            file_version: 1,
        }
    }
}

pub fn ride_id(index: usize) -> String {
    format!("synth_{index:05}")
}

/// Bucketized span `[t0, t0 + n_buckets · 10 s)` of rows from `t0` to `t_last`.
fn retained_end(t0: i64, t_last: i64) -> i64 {
    let n_grid = (t_last - t0) / GRID_MS + 1;
    t0 + (n_grid / (BUCKET_MS / GRID_MS)) * BUCKET_MS
}

/// Ride number `index` of the generated set; independent of every other ride.
pub fn generate_ride(spec: &SynthSpec, index: usize) -> RawRide {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &format!("ride/{index}")));
    let acc_n = Normal::new(0.0, spec.acc_noise).expect("positive sigma");
    let gyr_n = Normal::new(0.0, spec.gyro_noise).expect("positive sigma");

    let duration_ms = (rng.random_range(spec.min_duration_s..=spec.max_duration_s) * 1000.0) as i64;
    let t0 = 1_600_000_000_000 + index as i64 * 1_000_000;
    let mut stamps = vec![t0];
    while *stamps.last().expect("non-empty") - t0 < duration_ms {
        let j = rng.random_range(-spec.row_jitter_ms..=spec.row_jitter_ms);
        stamps.push(stamps.last().expect("non-empty") + spec.row_interval_ms + j);
    }
    let mut records: Vec<SensorRecord> = stamps
        .iter()
        .map(|&t| SensorRecord {
            timestamp: t,
            gps: None,
            acc: [acc_n.sample(&mut rng), acc_n.sample(&mut rng), GRAVITY + acc_n.sample(&mut rng)],
            gyr: Some([gyr_n.sample(&mut rng), gyr_n.sample(&mut rng), gyr_n.sample(&mut rng)]),
        })
        .collect();

    // GPS track: constant-ish speed, slowly turning heading.
    let (mut lat, mut lon) = (52.52 + rng.random_range(-0.05..0.05), 13.40 + rng.random_range(-0.08..0.08));
    let mut heading: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let speed = rng.random_range(3.5..6.5);
    let mut next_fix = t0;
    let mut last_t = t0;
    for r in &mut records {
        let dt = (r.timestamp - last_t) as f64 / 1000.0;
        last_t = r.timestamp;
        heading += rng.random_range(-0.05..0.05);
        lat += speed * dt * heading.cos() / METERS_PER_DEG_LAT;
        lon += speed * dt * heading.sin() / (METERS_PER_DEG_LAT * lat.to_radians().cos());
        if r.timestamp >= next_fix {
            next_fix += spec.gps_interval_ms;
            r.gps = Some(if rng.random_bool(spec.gps_outlier_rate) {
                GpsFix {
                    lat: lat + rng.random_range(-0.002..0.002),
                    lon: lon + rng.random_range(-0.002..0.002),
                    accuracy: rng.random_range(60.0..150.0),
                }
            } else {
                GpsFix {
                    lat,
                    lon,
                    accuracy: rng.random_range(3.0..10.0),
                }
            });
        }
    }

    // Incidents start on a native row inside the bucketized span and are
    // at least two buckets apart.
    let t_last = *stamps.last().expect("non-empty");
    let end = retained_end(t0, t_last);
    let lo = t0 + 2_000;
    let hi = end - PROFILE_MS - 500;
    let wanted = if spec.incident_rate > 0.0 {
        Poisson::new(spec.incident_rate).expect("positive rate").sample(&mut rng) as usize
    } else {
        0
    };
    let mut starts: Vec<usize> = Vec::new();
    for _ in 0..wanted {
        for _attempt in 0..50 {
            let t = rng.random_range(lo..hi.max(lo + 1));
            let i = stamps.partition_point(|&s| s < t);
            if i >= stamps.len() || stamps[i] >= hi {
                continue;
            }
            if starts.iter().all(|&s| (stamps[s] - stamps[i]).abs() >= 2 * BUCKET_MS) {
                starts.push(i);
                break;
            }
        }
    }
    starts.sort_unstable();

    let amp_acc = spec.amplitude_sigma * spec.acc_noise;
    let amp_gyr = spec.amplitude_sigma * spec.gyro_noise;
    let mut incidents = Vec::with_capacity(starts.len());
    for &i in &starts {
        let ts = stamps[i];
        let brake = rng.random_bool(spec.brake_share);
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        for r in records[i..].iter_mut().take_while(|r| r.timestamp < ts + PROFILE_MS) {
            let s = (r.timestamp - ts) as f64 / 1000.0;
            if brake {
                r.acc[1] -= amp_acc * (-s / BRAKE_TAU_S).exp();
            } else {
                let wave = (std::f64::consts::TAU * SWERVE_HZ * s).sin();
                if let Some(g) = r.gyr.as_mut() {
                    g[2] += sign * amp_gyr * wave;
                }
                r.acc[0] += sign * spec.swerve_accel_share * amp_acc * wave;
            }
        }
        let fix = nearest_fix(&records, i);
        incidents.push(IncidentRecord {
            timestamp: ts,
            lat: fix.0,
            lon: fix.1,
            incident_type: if brake { BRAKE_TYPE } else { SWERVE_TYPE },
            description: Some(if brake { "brake-spike" } else { "swerve" }.into()),
        });
    }

    // Bumps stay clear of incident profiles.
    let minutes = (t_last - t0) as f64 / 60_000.0;
    let bumps = if spec.bumps_per_minute > 0.0 {
        Poisson::new(spec.bumps_per_minute * minutes).expect("positive rate").sample(&mut rng) as usize
    } else {
        0
    };
    for _ in 0..bumps {
        let i = rng.random_range(1..records.len() - 1);
        let t = stamps[i];
        if starts.iter().any(|&s| (t - stamps[s]).abs() < 2 * PROFILE_MS) {
            continue;
        }
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        records[i].acc[2] += sign * spec.bump_sigma * spec.acc_noise;
    }

    RawRide {
        ride_id: ride_id(index),
        version: spec.version(),
        partition: spec.partition,
        incidents,
        records,
    }
}

/// Position of the fix nearest to row `i`.
fn nearest_fix(records: &[SensorRecord], i: usize) -> (f64, f64) {
    let t = records[i].timestamp;
    records
        .iter()
        .filter_map(|r| r.gps.map(|g| ((r.timestamp - t).abs(), g)))
        .min_by_key(|(d, _)| *d)
        .map(|(_, g)| (g.lat, g.lon))
        .unwrap_or((0.0, 0.0))
}

pub fn generate_rides(spec: &SynthSpec) -> Result<Vec<RawRide>, SynthError> {
    spec.validate()?;
    Ok((0..spec.n_rides).into_par_iter().map(|i| generate_ride(spec, i)).collect())
}

/// Directory that [`generate_dataset`] writes the rides into.
pub fn ride_dir(out: &Path, spec: &SynthSpec) -> PathBuf {
    out.join(&spec.region).join(spec.partition.as_str())
}

/// Writes `<out>/<region>/<partition>/<ride_id>.csv` for every ride.
pub fn generate_dataset(spec: &SynthSpec, out: &Path) -> Result<Vec<PathBuf>, SynthError> {
    spec.validate()?;
    let dir = ride_dir(out, spec);
    std::fs::create_dir_all(&dir).map_err(|source| SynthError::Io {
        path: dir.clone(),
        source,
    })?;
    (0..spec.n_rides)
        .into_par_iter()
        .map(|i| {
            let ride = generate_ride(spec, i);
            let path = dir.join(format!("{}.csv", ride.ride_id));
            std::fs::write(&path, write_ride(&ride)).map_err(|source| SynthError::Io {
                path: path.clone(),
                source,
            })?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rides_are_independent_and_deterministic() {
        let spec = SynthSpec {
            n_rides: 3,
            ..SynthSpec::default()
        };
        let a = generate_rides(&spec).unwrap();
        assert_eq!(a[2], generate_ride(&spec, 2));
        assert_eq!(write_ride(&a[1]), write_ride(&generate_ride(&spec, 1)));
    }

    #[test]
    fn incidents_on_rows_inside_span() {
        let spec = SynthSpec {
            incident_rate: 3.0,
            ..SynthSpec::default()
        };
        for i in 0..30 {
            let r = generate_ride(&spec, i);
            let t0 = r.records[0].timestamp;
            let end = retained_end(t0, r.records.last().unwrap().timestamp);
            for inc in &r.incidents {
                assert!(inc.timestamp >= t0 && inc.timestamp + PROFILE_MS <= end);
                assert!(r.records.iter().any(|x| x.timestamp == inc.timestamp));
            }
        }
    }

    #[test]
    fn zero_rate_no_incidents() {
        let spec = SynthSpec {
            incident_rate: 0.0,
            ..SynthSpec::default()
        };
        assert!((0..10).all(|i| generate_ride(&spec, i).incidents.is_empty()));
    }

    #[test]
    fn invalid_specs() {
        for s in [
            SynthSpec {
                min_duration_s: 20.0,
                ..SynthSpec::default()
            },
            SynthSpec {
                incident_rate: -1.0,
                ..SynthSpec::default()
            },
            SynthSpec {
                region: "a/b".into(),
                ..SynthSpec::default()
            },
        ] {
            assert!(s.validate().is_err());
        }
    }
}
