//! Binary container for fitted mixture priors.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic      4 bytes  "QGMM"
//! version    u32      currently 1
//! structure  u8       0 full, 1 toeplitz, 2 circulant
//! k          u32      number of components
//! n_antennas u32
//! weights    k * f64
//! components, per component:
//!   full:      n_antennas^2 * (f64 re, f64 im), row-major
//!   toeplitz:  2 * n_antennas * f64 (spectrum)
//!   circulant: n_antennas * f64 (spectrum)
//! ```
//!
//! Structured priors therefore store O(K N) numbers, full priors O(K N^2).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ComponentCovariance, CovarianceStructure, GmmPrior};
use crate::channel_model::io::{
    expect_magic, read_complex_vec, read_f64, read_u32, write_complex_slice, write_f64, write_u32,
};
use crate::error::{Error, Result};
use crate::linalg::CMat;

pub const PRIOR_MAGIC: &[u8; 4] = b"QGMM";
pub const PRIOR_VERSION: u32 = 1;

fn structure_tag(structure: CovarianceStructure) -> u8 {
    match structure {
        CovarianceStructure::Full => 0,
        CovarianceStructure::Toeplitz => 1,
        CovarianceStructure::Circulant => 2,
    }
}

fn tag_structure(tag: u8) -> Result<CovarianceStructure> {
    match tag {
        0 => Ok(CovarianceStructure::Full),
        1 => Ok(CovarianceStructure::Toeplitz),
        2 => Ok(CovarianceStructure::Circulant),
        other => Err(Error::FileFormat(format!("unknown structure tag {other}"))),
    }
}

pub fn save_prior(prior: &GmmPrior, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(PRIOR_MAGIC)?;
    write_u32(&mut w, PRIOR_VERSION)?;
    w.write_all(&[structure_tag(prior.structure())])?;
    write_u32(&mut w, prior.n_components() as u32)?;
    write_u32(&mut w, prior.n_antennas() as u32)?;
    for &weight in prior.weights() {
        write_f64(&mut w, weight)?;
    }
    for k in 0..prior.n_components() {
        match prior.component(k) {
            ComponentCovariance::Full(m) => write_complex_slice(&mut w, m.as_slice())?,
            ComponentCovariance::Toeplitz(c) | ComponentCovariance::Circulant(c) => {
                for &v in c {
                    write_f64(&mut w, v)?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_prior(path: &Path) -> Result<GmmPrior> {
    let mut r = BufReader::new(File::open(path)?);
    expect_magic(&mut r, PRIOR_MAGIC, "mixture prior")?;
    let version = read_u32(&mut r)?;
    if version != PRIOR_VERSION {
        return Err(Error::FileFormat(format!(
            "unsupported prior version {version} (expected {PRIOR_VERSION})"
        )));
    }
    let mut tag = [0u8; 1];
    r.read_exact(&mut tag)?;
    let structure = tag_structure(tag[0])?;
    let k = read_u32(&mut r)? as usize;
    let n = read_u32(&mut r)? as usize;
    if k == 0 || n == 0 {
        return Err(Error::FileFormat("empty prior".into()));
    }
    let mut weights = Vec::with_capacity(k);
    for _ in 0..k {
        weights.push(read_f64(&mut r)?);
    }
    let mut components = Vec::with_capacity(k);
    for _ in 0..k {
        let c = match structure {
            CovarianceStructure::Full => {
                let v = read_complex_vec(&mut r, n * n)?;
                ComponentCovariance::Full(CMat::from_vec(n, n, v))
            }
            CovarianceStructure::Toeplitz => {
                let mut v = Vec::with_capacity(2 * n);
                for _ in 0..2 * n {
                    v.push(read_f64(&mut r)?);
                }
                ComponentCovariance::Toeplitz(v)
            }
            CovarianceStructure::Circulant => {
                let mut v = Vec::with_capacity(n);
                for _ in 0..n {
                    v.push(read_f64(&mut r)?);
                }
                ComponentCovariance::Circulant(v)
            }
        };
        components.push(c);
    }
    GmmPrior::from_parts(weights, components, structure, n)
        .map_err(|e| Error::FileFormat(format!("inconsistent prior file: {e}")))
}

/// Exact file size in bytes for a prior of the given shape; used to document
/// and test the O(K N) vs O(K N^2) storage behaviour.
pub fn expected_file_size(structure: CovarianceStructure, k: usize, n: usize) -> usize {
    let header = 4 + 4 + 1 + 4 + 4;
    let weights = 8 * k;
    let payload = match structure {
        CovarianceStructure::Full => 16 * k * n * n,
        CovarianceStructure::Toeplitz => 8 * k * 2 * n,
        CovarianceStructure::Circulant => 8 * k * n,
    };
    header + weights + payload
}
