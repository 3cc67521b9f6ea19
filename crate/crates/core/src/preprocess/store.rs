//! Binary bucket files.
//!
//! Layout (little endian): magic `CSNB`, version `u16`, bucket count `u32`,
//! `f: u16`, `T: u16`; then per bucket: FNV-1a hash of the ride id `u64`,
//! bucket index `u32`, label `u8`, 100 × 8 `f32` samples, and, when `f > 0`,
//! the sensor tensors (accelerometer, gyroscope, GPS) as `f32`. `f = 0`
//! marks a file without tensors.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use super::{LabeledBucket, BUCKET_LEN, CHANNELS};
use crate::seed::fnv1a64;
use crate::spectral::{FrequencySpec, SensorTensorSet};

pub const MAGIC: &[u8; 4] = b"CSNB";
pub const VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported version {0}")]
    Version(u16),
    #[error("truncated file")]
    Truncated,
    #[error("inconsistent header: {0}")]
    Header(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn ride_hash(ride_id: &str) -> u64 {
    fnv1a64(ride_id.as_bytes())
}

/// A bucket as stored on disk: the ride is known only by its hash.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedBucket {
    pub ride_hash: u64,
    pub bucket_index: u32,
    pub label: u8,
    pub samples: Vec<[f32; CHANNELS]>,
    pub tensors: Option<SensorTensorSet>,
}

impl EncodedBucket {
    pub fn from_labeled(b: &LabeledBucket, tensors: Option<SensorTensorSet>) -> Self {
        Self {
            ride_hash: ride_hash(&b.ride_id),
            bucket_index: b.bucket_index,
            label: b.label,
            samples: b.samples.clone(),
            tensors,
        }
    }
}

fn put_f32s(w: &mut impl Write, vals: &[f32]) -> std::io::Result<()> {
    for v in vals {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Writes buckets; either all or none carry tensors of one `spec`.
pub fn write_buckets(mut w: impl Write, buckets: &[EncodedBucket]) -> Result<(), StoreError> {
    let spec = buckets.first().and_then(|b| b.tensors.as_ref().map(|t| t.spec));
    if buckets.iter().any(|b| b.tensors.as_ref().map(|t| t.spec) != spec) {
        return Err(StoreError::Header("mixed tensor specs".into()));
    }
    let (f, t) = spec.map(|s| (s.f as u16, s.windows() as u16)).unwrap_or((0, 0));
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(buckets.len() as u32).to_le_bytes())?;
    w.write_all(&f.to_le_bytes())?;
    w.write_all(&t.to_le_bytes())?;
    for b in buckets {
        w.write_all(&b.ride_hash.to_le_bytes())?;
        w.write_all(&b.bucket_index.to_le_bytes())?;
        w.write_all(&[b.label])?;
        for row in &b.samples {
            put_f32s(&mut w, row)?;
        }
        if let Some(ts) = &b.tensors {
            put_f32s(&mut w, &ts.accel)?;
            put_f32s(&mut w, &ts.gyro)?;
            put_f32s(&mut w, &ts.gps)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<(), StoreError> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => StoreError::Truncated,
        _ => StoreError::Io(e),
    })
}

fn get_f32s(r: &mut impl Read, n: usize) -> Result<Vec<f32>, StoreError> {
    let mut bytes = vec![0u8; n * 4];
    read_exact(r, &mut bytes)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub fn read_buckets(mut r: impl Read) -> Result<Vec<EncodedBucket>, StoreError> {
    let mut head = [0u8; 14];
    read_exact(&mut r, &mut head)?;
    if &head[..4] != MAGIC {
        return Err(StoreError::BadMagic);
    }
    let version = u16::from_le_bytes([head[4], head[5]]);
    if version != VERSION {
        return Err(StoreError::Version(version));
    }
    let count = u32::from_le_bytes([head[6], head[7], head[8], head[9]]) as usize;
    let f = u16::from_le_bytes([head[10], head[11]]) as usize;
    let t = u16::from_le_bytes([head[12], head[13]]) as usize;
    let spec = if f == 0 {
        None
    } else {
        let spec = FrequencySpec::new(f).map_err(|e| StoreError::Header(e.to_string()))?;
        if spec.windows() != t {
            return Err(StoreError::Header(format!("f = {f} but T = {t}")));
        }
        Some(spec)
    };
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let mut meta = [0u8; 13];
        read_exact(&mut r, &mut meta)?;
        let flat = get_f32s(&mut r, BUCKET_LEN * CHANNELS)?;
        let samples = flat
            .chunks_exact(CHANNELS)
            .map(|c| c.try_into().expect("chunk of CHANNELS"))
            .collect();
        let tensors = match spec {
            Some(spec) => Some(SensorTensorSet {
                spec,
                accel: get_f32s(&mut r, spec.motion_len())?,
                gyro: get_f32s(&mut r, spec.motion_len())?,
                gps: get_f32s(&mut r, spec.gps_len())?,
            }),
            None => None,
        };
        out.push(EncodedBucket {
            ride_hash: u64::from_le_bytes(meta[..8].try_into().expect("8 bytes")),
            bucket_index: u32::from_le_bytes(meta[8..12].try_into().expect("4 bytes")),
            label: meta[12],
            samples,
            tensors,
        });
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(StoreError::Header("trailing bytes".into()));
    }
    Ok(out)
}

pub fn save_buckets(path: &Path, buckets: &[EncodedBucket]) -> Result<(), StoreError> {
    write_buckets(BufWriter::new(File::create(path)?), buckets)
}

pub fn load_buckets(path: &Path) -> Result<Vec<EncodedBucket>, StoreError> {
    read_buckets(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let mut buf = Vec::new();
        write_buckets(&mut buf, &[]).unwrap();
        assert_eq!(buf, b"CSNB\x01\x00\x00\x00\x00\x00\x00\x00\x00\x00");
        assert!(read_buckets(&buf[..]).unwrap().is_empty());
    }

    #[test]
    fn bucket_record_size() {
        let spec = FrequencySpec::default();
        let b = EncodedBucket {
            ride_hash: 7,
            bucket_index: 3,
            label: 1,
            samples: vec![[0.5; CHANNELS]; BUCKET_LEN],
            tensors: Some(SensorTensorSet::zeros(spec)),
        };
        let mut buf = Vec::new();
        write_buckets(&mut buf, std::slice::from_ref(&b)).unwrap();
        let payload = 4 * (2 * spec.motion_len() + spec.gps_len());
        assert_eq!(buf.len(), 14 + 13 + 3200 + payload);
        assert_eq!(read_buckets(&buf[..]).unwrap(), vec![b]);
        assert!(matches!(read_buckets(&buf[..buf.len() - 1]), Err(StoreError::Truncated)));
    }
}
