//! Flat little-endian model file holding a PCA model and a projection model.
//!
//! Layout: magic `LVRM`, then `u32` version, `u32` D, `u32` k, `u32` N_b,
//! `u64` seed, followed by `f64` arrays: mean (D), basis (k×D, row-major),
//! explained variance (k), hyperplanes (N_b×k, row-major).

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};

use super::hashing::ProjectionModel;
use super::pca::PcaModel;
use super::RetrievalError;

const MAGIC: &[u8; 4] = b"LVRM";
const VERSION: u32 = 1;

pub fn write_models<W: Write>(mut w: W, pca: &PcaModel, projection: &ProjectionModel) -> Result<(), RetrievalError> {
    if projection.dim() != pca.output_dim() {
        return Err(RetrievalError::ModelFormat(format!(
            "projection dimension {} does not match PCA output {}",
            projection.dim(),
            pca.output_dim()
        )));
    }
    w.write_all(MAGIC)?;
    for v in [VERSION, pca.input_dim() as u32, pca.output_dim() as u32, projection.n_bits()] {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&projection.seed.to_le_bytes())?;
    let mut put = |v: f64| w.write_all(&v.to_le_bytes());
    for v in pca.mean.iter() {
        put(*v)?;
    }
    for r in 0..pca.output_dim() {
        for v in pca.basis.row(r).iter() {
            put(*v)?;
        }
    }
    for v in &pca.explained {
        put(*v)?;
    }
    for h in &projection.hyperplanes {
        for v in h {
            put(*v)?;
        }
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, RetrievalError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>, RetrievalError> {
    let mut out = Vec::with_capacity(n);
    let mut b = [0u8; 8];
    for _ in 0..n {
        r.read_exact(&mut b)?;
        out.push(f64::from_le_bytes(b));
    }
    Ok(out)
}

pub fn read_models<R: Read>(mut r: R) -> Result<(PcaModel, ProjectionModel), RetrievalError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(RetrievalError::ModelFormat("bad magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(RetrievalError::ModelFormat(format!("unsupported version {version}")));
    }
    let d = read_u32(&mut r)? as usize;
    let k = read_u32(&mut r)? as usize;
    let n_b = read_u32(&mut r)? as usize;
    let mut seed = [0u8; 8];
    r.read_exact(&mut seed)?;
    let seed = u64::from_le_bytes(seed);

    let mean = DVector::from_vec(read_f64s(&mut r, d)?);
    let basis = DMatrix::from_row_slice(k, d, &read_f64s(&mut r, k * d)?);
    let explained = read_f64s(&mut r, k)?;
    let flat = read_f64s(&mut r, n_b * k)?;
    let hyperplanes = flat.chunks(k.max(1)).take(n_b).map(<[f64]>::to_vec).collect();
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(RetrievalError::ModelFormat(format!("{} trailing bytes", rest.len())));
    }
    Ok((PcaModel { mean, basis, explained }, ProjectionModel { seed, hyperplanes }))
}
