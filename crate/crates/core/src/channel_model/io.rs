//! Binary container for channel datasets.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic      4 bytes  "QCDS"
//! version    u32      currently 1
//! n_antennas u32
//! n_samples  u64
//! n_clusters u32
//! seed       u64
//! flags      u32      bit 0: genie blocks present
//! samples    n_samples * n_antennas * (f64 re, f64 im), row-major
//! genie blocks (only if flag set), one per sample:
//!   angle_spread f64
//!   angles       n_clusters * f64
//!   gains        n_clusters * f64
//!   covariance   n_antennas^2 * (f64 re, f64 im), row-major
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;

use super::{ChannelDataset, ClusterParams, GenieInfo, SpatialCovariance};
use crate::error::{Error, Result};
use crate::linalg::{CMat, CVec};

pub const DATASET_MAGIC: &[u8; 4] = b"QCDS";
pub const DATASET_VERSION: u32 = 1;

const FLAG_GENIE: u32 = 1;

pub(crate) fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn write_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn write_f64<W: Write>(w: &mut W, v: f64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn write_complex_slice<W: Write>(w: &mut W, v: &[Complex64]) -> Result<()> {
    for c in v {
        write_f64(w, c.re)?;
        write_f64(w, c.im)?;
    }
    Ok(())
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

pub(crate) fn read_complex_vec<R: Read>(r: &mut R, len: usize) -> Result<Vec<Complex64>> {
    let mut out = Vec::with_capacity(len);
    for _ in 0..len {
        let re = read_f64(r)?;
        let im = read_f64(r)?;
        out.push(Complex64::new(re, im));
    }
    Ok(out)
}

pub(crate) fn expect_magic<R: Read>(r: &mut R, magic: &[u8; 4], what: &str) -> Result<()> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    if &b != magic {
        return Err(Error::FileFormat(format!(
            "bad magic for {what}: expected {:?}, found {:?}",
            magic, b
        )));
    }
    Ok(())
}

pub fn save_dataset(dataset: &ChannelDataset, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(DATASET_MAGIC)?;
    write_u32(&mut w, DATASET_VERSION)?;
    write_u32(&mut w, dataset.n_antennas() as u32)?;
    write_u64(&mut w, dataset.n_samples() as u64)?;
    write_u32(&mut w, dataset.n_clusters() as u32)?;
    write_u64(&mut w, dataset.seed())?;
    let flags = if dataset.has_genie() { FLAG_GENIE } else { 0 };
    write_u32(&mut w, flags)?;
    for h in dataset.samples() {
        write_complex_slice(&mut w, h.as_slice())?;
    }
    if let Some(genie) = dataset.genie_all() {
        for info in genie {
            write_f64(&mut w, info.params.angle_spread())?;
            for &a in info.params.angles() {
                write_f64(&mut w, a)?;
            }
            for &g in info.params.gains() {
                write_f64(&mut w, g)?;
            }
            write_complex_slice(&mut w, info.covariance.matrix().as_slice())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<ChannelDataset> {
    let mut r = BufReader::new(File::open(path)?);
    expect_magic(&mut r, DATASET_MAGIC, "channel dataset")?;
    let version = read_u32(&mut r)?;
    if version != DATASET_VERSION {
        return Err(Error::FileFormat(format!(
            "unsupported dataset version {version} (expected {DATASET_VERSION})"
        )));
    }
    let n_antennas = read_u32(&mut r)? as usize;
    let n_samples = read_u64(&mut r)? as usize;
    let n_clusters = read_u32(&mut r)? as usize;
    let seed = read_u64(&mut r)?;
    let flags = read_u32(&mut r)?;

    let mut samples = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let v = read_complex_vec(&mut r, n_antennas)?;
        samples.push(CVec::from_vec(v));
    }
    let genie = if flags & FLAG_GENIE != 0 {
        let mut list = Vec::with_capacity(n_samples);
        for _ in 0..n_samples {
            let angle_spread = read_f64(&mut r)?;
            let mut angles = Vec::with_capacity(n_clusters);
            for _ in 0..n_clusters {
                angles.push(read_f64(&mut r)?);
            }
            let mut gains = Vec::with_capacity(n_clusters);
            for _ in 0..n_clusters {
                gains.push(read_f64(&mut r)?);
            }
            let cov = read_complex_vec(&mut r, n_antennas * n_antennas)?;
            let matrix = CMat::from_vec(n_antennas, n_antennas, cov);
            let params = ClusterParams::new(angles, gains, angle_spread)
                .map_err(|e| Error::FileFormat(format!("invalid genie block: {e}")))?;
            list.push(GenieInfo {
                params,
                covariance: SpatialCovariance { matrix },
            });
        }
        Some(list)
    } else {
        None
    };
    ChannelDataset::from_parts(samples, n_antennas, n_clusters, seed, genie)
}
