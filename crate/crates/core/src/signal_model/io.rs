//! Binary container for batches of quantized pilot observations.
//!
//! Same conventions as the dataset container, with a measurement header:
//!
//! ```text
//! magic      4 bytes  "QOBS"
//! version    u32      currently 1
//! n_antennas u32
//! n_pilots   u32
//! n_obs      u64
//! seed       u64
//! noise_var  f64
//! pilots     n_pilots * (f64 re, f64 im)
//! values     n_obs * n_antennas * n_pilots * (f64 re, f64 im)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use super::{PilotSystem, QuantizedObservation};
use crate::channel_model::io::{
    expect_magic, read_complex_vec, read_f64, read_u32, read_u64, write_complex_slice, write_f64,
    write_u32, write_u64,
};
use crate::error::{Error, Result};

pub const OBSERVATION_MAGIC: &[u8; 4] = b"QOBS";
pub const OBSERVATION_VERSION: u32 = 1;

pub fn save_observations(
    system: &PilotSystem,
    observations: &[QuantizedObservation],
    seed: u64,
    path: &Path,
) -> Result<()> {
    for obs in observations {
        obs.check_system(system)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(OBSERVATION_MAGIC)?;
    write_u32(&mut w, OBSERVATION_VERSION)?;
    write_u32(&mut w, system.n_antennas() as u32)?;
    write_u32(&mut w, system.n_pilots() as u32)?;
    write_u64(&mut w, observations.len() as u64)?;
    write_u64(&mut w, seed)?;
    write_f64(&mut w, system.noise_var())?;
    write_complex_slice(&mut w, system.pilots())?;
    for obs in observations {
        write_complex_slice(&mut w, obs.values())?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_observations(path: &Path) -> Result<(PilotSystem, Vec<QuantizedObservation>, u64)> {
    let mut r = BufReader::new(File::open(path)?);
    expect_magic(&mut r, OBSERVATION_MAGIC, "observation batch")?;
    let version = read_u32(&mut r)?;
    if version != OBSERVATION_VERSION {
        return Err(Error::FileFormat(format!(
            "unsupported observation version {version} (expected {OBSERVATION_VERSION})"
        )));
    }
    let n_antennas = read_u32(&mut r)? as usize;
    let n_pilots = read_u32(&mut r)? as usize;
    let n_obs = read_u64(&mut r)? as usize;
    let seed = read_u64(&mut r)?;
    let noise_var = read_f64(&mut r)?;
    let pilots = read_complex_vec(&mut r, n_pilots)?;
    let system = PilotSystem::new(pilots, n_antennas, noise_var)?;
    let mut observations = Vec::with_capacity(n_obs);
    for _ in 0..n_obs {
        let values = read_complex_vec(&mut r, n_antennas * n_pilots)?;
        observations.push(QuantizedObservation::from_values(
            values, n_antennas, n_pilots,
        )?);
    }
    Ok((system, observations, seed))
}
