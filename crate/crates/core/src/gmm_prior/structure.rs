//! Spectral parameterization of structured component covariances.
//!
//! Circulant covariances are diagonalized by the unitary N-point DFT `Q`:
//! `C = Q^H diag(c) Q` with a nonnegative spectrum `c` of length N.
//! Toeplitz covariances use the semi-unitary matrix formed by the first N
//! columns of the 2N-point unitary DFT (`Q^H Q = I_N`), with a spectrum of
//! length 2N; this is the standard circulant embedding of a Toeplitz matrix.
//!
//! Both directions — projecting a dense covariance onto its spectrum and
//! reconstructing a dense matrix from a spectrum — run through FFTs.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::linalg::{CMat, CVec};

/// Covariance structure of the mixture components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovarianceStructure {
    Full,
    Toeplitz,
    Circulant,
}

impl CovarianceStructure {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::Toeplitz => "toeplitz",
            Self::Circulant => "circulant",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Self::Full),
            "toeplitz" | "toep" => Ok(Self::Toeplitz),
            "circulant" | "circ" => Ok(Self::Circulant),
            other => Err(Error::InvalidArgument(format!(
                "unknown covariance structure '{other}'"
            ))),
        }
    }
}

impl std::fmt::Display for CovarianceStructure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Dense semi-unitary structure matrix `Q` (rows index the spectrum).
///
/// Circulant: the N x N unitary DFT. Toeplitz: the first N columns of the
/// 2N x 2N unitary DFT, a 2N x N matrix with `Q^H Q = I_N`.
pub fn structure_matrix(structure: CovarianceStructure, n_antennas: usize) -> Result<CMat> {
    let rows = match structure {
        CovarianceStructure::Full => {
            return Err(Error::InvalidArgument(
                "full covariances have no structure matrix".into(),
            ))
        }
        CovarianceStructure::Circulant => n_antennas,
        CovarianceStructure::Toeplitz => 2 * n_antennas,
    };
    let scale = 1.0 / (rows as f64).sqrt();
    Ok(CMat::from_fn(rows, n_antennas, |m, n| {
        Complex64::from_polar(
            scale,
            -2.0 * std::f64::consts::PI * (m * n) as f64 / rows as f64,
        )
    }))
}

/// FFT engine for one (structure, N) pair.
pub struct SpectralBasis {
    structure: CovarianceStructure,
    n_antennas: usize,
    fft_fwd: Arc<dyn Fft<f64>>,
    fft_inv: Arc<dyn Fft<f64>>,
    /// Forward/inverse transform length: N (circulant) or 2N (Toeplitz).
    len: usize,
}

impl SpectralBasis {
    pub fn new(structure: CovarianceStructure, n_antennas: usize) -> Result<Self> {
        let len = match structure {
            CovarianceStructure::Full => {
                return Err(Error::InvalidArgument(
                    "full covariances have no spectral basis".into(),
                ))
            }
            CovarianceStructure::Circulant => n_antennas,
            CovarianceStructure::Toeplitz => 2 * n_antennas,
        };
        let mut planner = FftPlanner::new();
        Ok(Self {
            structure,
            n_antennas,
            fft_fwd: planner.plan_fft_forward(len),
            fft_inv: planner.plan_fft_inverse(len),
            len,
        })
    }

    pub fn structure(&self) -> CovarianceStructure {
        self.structure
    }

    pub fn n_antennas(&self) -> usize {
        self.n_antennas
    }

    pub fn spectrum_len(&self) -> usize {
        self.len
    }

    /// Projects a Hermitian PSD matrix onto the structured family,
    /// returning the nonnegative spectrum.
    ///
    /// The projection is the closed-form rule `c_m = s q_m^H S q_m` with
    /// `q_m` the (conjugated) rows of the structure matrix and `s` chosen so
    /// the reconstruction preserves the trace (`s = 1` circulant, `s = 2`
    /// Toeplitz). Equivalently, the spectrum is the FFT of the (wrapped or
    /// zero-padded) diagonal sums of `S`.
    pub fn project(&self, s: &CMat) -> Vec<f64> {
        let n = self.n_antennas;
        assert_eq!(s.nrows(), n, "matrix size does not match basis");
        let mut buf = vec![Complex64::new(0.0, 0.0); self.len];
        match self.structure {
            CovarianceStructure::Circulant => {
                // Wrapped diagonal sums.
                for j in 0..n {
                    for k in 0..n {
                        let d = (j + n - k) % n;
                        buf[d] += s[(j, k)];
                    }
                }
            }
            CovarianceStructure::Toeplitz => {
                // Unwrapped diagonal sums in the 2N embedding.
                for j in 0..n {
                    for k in 0..n {
                        let idx = if j >= k { j - k } else { 2 * n - (k - j) };
                        buf[idx] += s[(j, k)];
                    }
                }
            }
            CovarianceStructure::Full => unreachable!(),
        }
        self.fft_fwd.process(&mut buf);
        buf.iter().map(|v| (v.re / n as f64).max(0.0)).collect()
    }

    /// First column of the dense covariance for a spectrum.
    pub fn first_column(&self, spectrum: &[f64]) -> Vec<Complex64> {
        assert_eq!(spectrum.len(), self.len, "spectrum length mismatch");
        let mut buf: Vec<Complex64> = spectrum
            .iter()
            .map(|&c| Complex64::new(c, 0.0))
            .collect();
        self.fft_inv.process(&mut buf);
        let scale = 1.0 / self.len as f64;
        buf.truncate(self.n_antennas);
        buf.iter_mut().for_each(|v| *v = v.scale(scale));
        buf
    }

    /// Dense covariance `Q^H diag(c) Q` reconstructed from a spectrum.
    pub fn reconstruct(&self, spectrum: &[f64]) -> CMat {
        let col = self.first_column(spectrum);
        let n = self.n_antennas;
        match self.structure {
            CovarianceStructure::Toeplitz => CMat::from_fn(n, n, |p, q| {
                if p >= q {
                    col[p - q]
                } else {
                    col[q - p].conj()
                }
            }),
            CovarianceStructure::Circulant => CMat::from_fn(n, n, |p, q| {
                let d = (p + n - q) % n;
                col[d]
            }),
            CovarianceStructure::Full => unreachable!(),
        }
    }

    /// Unitary forward DFT of a channel vector (circulant fast path).
    pub fn unitary_transform(&self, h: &CVec) -> Vec<Complex64> {
        assert_eq!(
            self.structure,
            CovarianceStructure::Circulant,
            "unitary transform is only defined for the circulant basis"
        );
        let mut buf: Vec<Complex64> = h.iter().cloned().collect();
        self.fft_fwd.process(&mut buf);
        let scale = 1.0 / (self.len as f64).sqrt();
        buf.iter_mut().for_each(|v| *v = v.scale(scale));
        buf
    }

    /// Inverse of [`unitary_transform`].
    pub fn unitary_inverse(&self, spectrum_domain: &[Complex64]) -> CVec {
        assert_eq!(
            self.structure,
            CovarianceStructure::Circulant,
            "unitary transform is only defined for the circulant basis"
        );
        let mut buf: Vec<Complex64> = spectrum_domain.to_vec();
        self.fft_inv.process(&mut buf);
        let scale = 1.0 / (self.len as f64).sqrt();
        CVec::from_iterator(self.len, buf.into_iter().map(|v| v.scale(scale)))
    }
}
