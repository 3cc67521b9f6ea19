//! Windowed f-point DFT features per sensor.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::preprocess::{BUCKET_LEN, CH_ACC, CH_GYR, CH_VEL};

#[derive(Debug, Error, PartialEq)]
pub enum SpectralError {
    #[error("window has {got} samples, transform expects {want}")]
    LengthMismatch { got: usize, want: usize },
    #[error("window length {0} must be at least 2 and divide {BUCKET_LEN}")]
    InvalidWindow(usize),
}

/// Window length `f` and the number of windows `T = 100 / f` per bucket.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrequencySpec {
    pub f: usize,
}

impl Default for FrequencySpec {
    fn default() -> Self {
        Self { f: 10 }
    }
}

impl FrequencySpec {
    pub fn new(f: usize) -> Result<Self, SpectralError> {
        let s = Self { f };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), SpectralError> {
        if self.f < 2 || BUCKET_LEN % self.f != 0 {
            return Err(SpectralError::InvalidWindow(self.f));
        }
        Ok(())
    }

    pub fn windows(&self) -> usize {
        BUCKET_LEN / self.f
    }

    /// `[3, f, T, 2]` for accelerometer and gyroscope.
    pub fn motion_shape(&self) -> [usize; 4] {
        [3, self.f, self.windows(), 2]
    }

    /// `[2, 1, T, 1]` for GPS velocity.
    pub fn gps_shape(&self) -> [usize; 4] {
        [2, 1, self.windows(), 1]
    }

    pub fn motion_len(&self) -> usize {
        self.motion_shape().iter().product()
    }

    pub fn gps_len(&self) -> usize {
        self.gps_shape().iter().product()
    }
}

/// A planned f-point transform: `X_k = Σ_n x_n exp(-2πi kn / f)`, without
/// normalization.
#[derive(Clone)]
pub struct Dft {
    f: usize,
    fft: Arc<dyn Fft<f64>>,
}

impl Dft {
    pub fn new(f: usize) -> Self {
        Self {
            f,
            fft: FftPlanner::new().plan_fft_forward(f),
        }
    }

    pub fn len(&self) -> usize {
        self.f
    }

    pub fn is_empty(&self) -> bool {
        self.f == 0
    }

    pub fn transform(&self, window: &[f64]) -> Result<Vec<Complex64>, SpectralError> {
        if window.len() != self.f {
            return Err(SpectralError::LengthMismatch {
                got: window.len(),
                want: self.f,
            });
        }
        let mut buf: Vec<Complex64> = window.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.fft.process(&mut buf);
        Ok(buf)
    }
}

/// One-off transform of a window of length `f`.
pub fn dft_f_point(window: &[f64], f: usize) -> Result<Vec<Complex64>, SpectralError> {
    Dft::new(f).transform(window)
}

/// Model inputs of one bucket.
#[derive(Clone, Debug, PartialEq)]
pub struct SensorTensorSet {
    pub spec: FrequencySpec,
    /// `[3 axes, f, T, (re, im)]`, row-major.
    pub accel: Vec<f32>,
    /// Same layout as `accel`.
    pub gyro: Vec<f32>,
    /// `[2 axes, 1, T, 1]`: mean velocity per window.
    pub gps: Vec<f32>,
}

impl SensorTensorSet {
    pub fn zeros(spec: FrequencySpec) -> Self {
        Self {
            spec,
            accel: vec![0.0; spec.motion_len()],
            gyro: vec![0.0; spec.motion_len()],
            gps: vec![0.0; spec.gps_len()],
        }
    }

    pub fn motion_index(spec: &FrequencySpec, axis: usize, k: usize, t: usize, part: usize) -> usize {
        ((axis * spec.f + k) * spec.windows() + t) * 2 + part
    }

    pub fn is_finite(&self) -> bool {
        self.accel.iter().chain(&self.gyro).chain(&self.gps).all(|v| v.is_finite())
    }
}

/// How motion channels are laid out in the `[3, f, T, 2]` tensors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureDomain {
    /// DFT real and imaginary parts per window.
    Frequency,
    /// Raw samples of each window in the real slot, zero imaginary slot.
    Time,
}

fn gps_means(samples: &[[f32; 8]], spec: &FrequencySpec, out: &mut [f32]) {
    let (f, t_n) = (spec.f, spec.windows());
    for axis in 0..2 {
        for t in 0..t_n {
            let sum: f64 = samples[t * f..(t + 1) * f]
                .iter()
                .map(|s| s[CH_VEL + axis] as f64)
                .sum();
            out[axis * t_n + t] = (sum / f as f64) as f32;
        }
    }
}

/// Converts a 100 × 8 bucket into per-sensor tensors.
pub fn bucket_to_tensors(samples: &[[f32; 8]], spec: FrequencySpec, dft: &Dft) -> SensorTensorSet {
    assert_eq!(samples.len(), BUCKET_LEN, "bucket length");
    assert_eq!(dft.len(), spec.f, "transform length");
    let mut out = SensorTensorSet::zeros(spec);
    let mut window = vec![0.0f64; spec.f];
    for (base, dst) in [(CH_ACC, &mut out.accel), (CH_GYR, &mut out.gyro)] {
        for axis in 0..3 {
            for t in 0..spec.windows() {
                for (n, w) in window.iter_mut().enumerate() {
                    *w = samples[t * spec.f + n][base + axis] as f64;
                }
                let coeffs = dft.transform(&window).expect("window length matches");
                for (k, c) in coeffs.iter().enumerate() {
                    dst[SensorTensorSet::motion_index(&spec, axis, k, t, 0)] = c.re as f32;
                    dst[SensorTensorSet::motion_index(&spec, axis, k, t, 1)] = c.im as f32;
                }
            }
        }
    }
    gps_means(samples, &spec, &mut out.gps);
    out
}

/// Same shapes as [`bucket_to_tensors`] without the transform.
pub fn bucket_to_time_tensors(samples: &[[f32; 8]], spec: FrequencySpec) -> SensorTensorSet {
    assert_eq!(samples.len(), BUCKET_LEN, "bucket length");
    let mut out = SensorTensorSet::zeros(spec);
    for (base, dst) in [(CH_ACC, &mut out.accel), (CH_GYR, &mut out.gyro)] {
        for axis in 0..3 {
            for t in 0..spec.windows() {
                for n in 0..spec.f {
                    dst[SensorTensorSet::motion_index(&spec, axis, n, t, 0)] = samples[t * spec.f + n][base + axis];
                }
            }
        }
    }
    gps_means(samples, &spec, &mut out.gps);
    out
}

pub fn encode(samples: &[[f32; 8]], spec: FrequencySpec, domain: FeatureDomain, dft: &Dft) -> SensorTensorSet {
    match domain {
        FeatureDomain::Frequency => bucket_to_tensors(samples, spec, dft),
        FeatureDomain::Time => bucket_to_time_tensors(samples, spec),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dc_and_impulse() {
        let c = dft_f_point(&[1.0; 4], 4).unwrap();
        assert!((c[0].re - 4.0).abs() < 1e-12);
        assert!(c[1..].iter().all(|z| z.norm() < 1e-12));
        let c = dft_f_point(&[1.0, 0.0, 0.0, 0.0], 4).unwrap();
        assert!(c.iter().all(|z| (z.re - 1.0).abs() < 1e-12 && z.im.abs() < 1e-12));
    }

    #[test]
    fn length_mismatch() {
        assert_eq!(
            dft_f_point(&[1.0; 3], 4),
            Err(SpectralError::LengthMismatch { got: 3, want: 4 })
        );
    }

    #[test]
    fn spec_validation() {
        assert!(FrequencySpec::new(10).is_ok());
        assert!(FrequencySpec::new(3).is_err());
        assert!(FrequencySpec::new(1).is_err());
        assert_eq!(FrequencySpec::new(20).unwrap().windows(), 5);
    }

    #[test]
    fn constant_acc_x_fills_dc_bin() {
        let spec = FrequencySpec::default();
        let mut samples = vec![[0.0f32; 8]; BUCKET_LEN];
        for s in &mut samples {
            s[CH_ACC] = 0.5;
        }
        let set = bucket_to_tensors(&samples, spec, &Dft::new(spec.f));
        for t in 0..spec.windows() {
            assert!((set.accel[SensorTensorSet::motion_index(&spec, 0, 0, t, 0)] - 5.0).abs() < 1e-6);
        }
        let dc_sum: f32 = set.accel.iter().map(|v| v.abs()).sum();
        assert!((dc_sum - 5.0 * spec.windows() as f32).abs() < 1e-4);
        assert!(set.gyro.iter().chain(&set.gps).all(|&v| v == 0.0));
    }

    #[test]
    fn time_domain_layout() {
        let spec = FrequencySpec::new(4).unwrap();
        let samples: Vec<[f32; 8]> = (0..BUCKET_LEN).map(|i| [i as f32, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, -1.0]).collect();
        let set = bucket_to_time_tensors(&samples, spec);
        assert_eq!(set.accel[SensorTensorSet::motion_index(&spec, 0, 3, 2, 0)], 11.0);
        assert_eq!(set.accel[SensorTensorSet::motion_index(&spec, 0, 3, 2, 1)], 0.0);
        assert_eq!(set.gps[0], 1.0);
        assert_eq!(set.gps[spec.windows()], -1.0);
    }
}
