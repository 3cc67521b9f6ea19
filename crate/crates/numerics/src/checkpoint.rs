//! Binary weight files.
//!
//! Layout (little endian): magic `CSNW`, version `u16`, entry count `u32`,
//! then per entry: name length `u32`, UTF-8 name, rank `u32`, `rank` extents
//! as `u32`, and the values as `f32`. Buffers (running statistics) are
//! stored alongside learned weights.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{NumericsError, Result};
use crate::params::ParamStore;
use crate::real::Real;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"CSNW";
pub const VERSION: u16 = 1;

/// Upper bound on a single name or rank, to reject corrupt headers early.
const MAX_NAME: u32 = 4096;
const MAX_RANK: u32 = 16;

pub fn write<T: Real, W: Write>(store: &ParamStore<T>, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(store.len() as u32).to_le_bytes())?;
    for (_, e) in store.iter() {
        w.write_all(&(e.name.len() as u32).to_le_bytes())?;
        w.write_all(e.name.as_bytes())?;
        w.write_all(&(e.value.rank() as u32).to_le_bytes())?;
        for &d in e.value.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in e.value.data() {
            w.write_all(&(v.as_f64() as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn truncated(e: std::io::Error) -> NumericsError {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        NumericsError::Checkpoint("truncated file".into())
    } else {
        NumericsError::Io(e)
    }
}

/// Reads all named tensors in file order.
pub fn read<T: Real, R: Read>(mut r: R) -> Result<Vec<(String, Tensor<T>)>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(NumericsError::Checkpoint("bad magic".into()));
    }
    let mut ver = [0u8; 2];
    r.read_exact(&mut ver).map_err(truncated)?;
    let ver = u16::from_le_bytes(ver);
    if ver != VERSION {
        return Err(NumericsError::Checkpoint(format!("unsupported version {ver}")));
    }
    let count = read_u32(&mut r)?;
    let mut out = Vec::new();
    for _ in 0..count {
        let len = read_u32(&mut r)?;
        if len > MAX_NAME {
            return Err(NumericsError::Checkpoint(format!("name length {len}")));
        }
        let mut name = vec![0u8; len as usize];
        r.read_exact(&mut name).map_err(truncated)?;
        let name = String::from_utf8(name)
            .map_err(|_| NumericsError::Checkpoint("parameter name is not UTF-8".into()))?;
        let rank = read_u32(&mut r)?;
        if rank > MAX_RANK {
            return Err(NumericsError::Checkpoint(format!("{name}: rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank as usize);
        for _ in 0..rank {
            shape.push(read_u32(&mut r)? as usize);
        }
        let n: usize = shape.iter().product();
        let mut bytes = vec![0u8; n * 4];
        r.read_exact(&mut bytes).map_err(truncated)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| T::of(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
            .collect();
        let t = Tensor::new(&shape, data).map_err(|e| NumericsError::Checkpoint(format!("{name}: {e}")))?;
        out.push((name, t));
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(NumericsError::Checkpoint("trailing bytes".into()));
    }
    Ok(out)
}

pub fn save<T: Real>(store: &ParamStore<T>, path: &Path) -> Result<()> {
    write(store, BufWriter::new(File::create(path)?))
}

/// Loads every value of `store` from `path`; names and shapes must match
/// exactly.
pub fn load<T: Real>(store: &mut ParamStore<T>, path: &Path) -> Result<()> {
    let named = read::<T, _>(BufReader::new(File::open(path)?))?;
    if named.len() != store.len() {
        return Err(NumericsError::Checkpoint(format!(
            "{} entries in file, {} in model",
            named.len(),
            store.len()
        )));
    }
    store.load_named(&named)
}
