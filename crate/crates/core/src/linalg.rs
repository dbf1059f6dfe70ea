//! Dense complex linear algebra helpers shared across the crate.
//!
//! Everything here operates on Hermitian matrices: channel covariances,
//! quantized-output covariances, and the spectral filters derived from them.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;

/// `0.5 * (A + A^H)`, removing the anti-Hermitian round-off component.
pub fn hermitianize(m: &CMat) -> CMat {
    let adj = m.adjoint();
    (m + adj).scale(0.5)
}

/// Largest absolute deviation from Hermitian symmetry.
pub fn hermitian_deviation(m: &CMat) -> f64 {
    let n = m.nrows();
    let mut dev: f64 = 0.0;
    for i in 0..n {
        for j in i..n {
            dev = dev.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    dev
}

/// Largest absolute deviation from Toeplitz structure (constant diagonals).
pub fn toeplitz_deviation(m: &CMat) -> f64 {
    let n = m.nrows();
    let mut dev: f64 = 0.0;
    for i in 1..n {
        for j in 1..n {
            dev = dev.max((m[(i, j)] - m[(i - 1, j - 1)]).norm());
        }
    }
    dev
}

/// Real trace of a (nominally Hermitian) matrix.
pub fn trace_real(m: &CMat) -> f64 {
    (0..m.nrows()).map(|i| m[(i, i)].re).sum()
}

/// Eigendecomposition of a Hermitian matrix: real eigenvalues plus a unitary
/// eigenvector matrix.
pub struct HermitianEigen {
    pub values: Vec<f64>,
    pub vectors: CMat,
}

pub fn hermitian_eigen(m: &CMat) -> HermitianEigen {
    let se = hermitianize(m).symmetric_eigen();
    HermitianEigen {
        values: se.eigenvalues.iter().cloned().collect(),
        vectors: se.eigenvectors,
    }
}

/// Applies a real spectral function to a Hermitian matrix:
/// `U f(Lambda) U^H`. Eigenvalues are passed to `f` as-is (including any
/// slightly negative round-off values), so `f` decides on clamping.
pub fn spectral_map(m: &CMat, f: impl Fn(f64) -> f64) -> CMat {
    let eig = hermitian_eigen(m);
    let n = m.nrows();
    let mut scaled = eig.vectors.clone();
    for (j, &lam) in eig.values.iter().enumerate() {
        let fv = Complex64::new(f(lam), 0.0);
        for i in 0..n {
            scaled[(i, j)] *= fv;
        }
    }
    &scaled * eig.vectors.adjoint()
}

/// PSD square root with negative round-off eigenvalues clamped to zero.
pub fn psd_sqrt(m: &CMat) -> CMat {
    spectral_map(m, |lam| lam.max(0.0).sqrt())
}

/// Cholesky factorization of a Hermitian positive-definite matrix, retaining
/// the lower factor and the log-determinant for repeated density evaluations
/// and solves.
pub struct HermitianFactor {
    lower: CMat,
    log_det: f64,
    loading_added: f64,
}

impl HermitianFactor {
    /// Factorizes `m` directly; fails if `m` is not numerically positive
    /// definite.
    pub fn new(m: &CMat) -> Result<Self> {
        Self::factorize(m.clone(), 0.0)
    }

    /// Factorizes `m`, escalating a diagonal loading `delta * I` by factors
    /// of 100 (starting from `initial_loading`) until the factorization
    /// succeeds or `max_attempts` is exhausted.
    pub fn with_loading_escalation(
        m: &CMat,
        initial_loading: f64,
        max_attempts: u32,
    ) -> Result<Self> {
        if let Ok(f) = Self::factorize(m.clone(), 0.0) {
            return Ok(f);
        }
        let mut delta = initial_loading;
        for _ in 0..max_attempts {
            let mut loaded = m.clone();
            for i in 0..m.nrows() {
                loaded[(i, i)] += Complex64::new(delta, 0.0);
            }
            if let Ok(f) = Self::factorize(loaded, delta) {
                return Ok(f);
            }
            delta *= 100.0;
        }
        Err(Error::FactorizationFailed(format!(
            "Cholesky failed after loading escalation up to {:.3e}",
            delta / 100.0
        )))
    }

    fn factorize(m: CMat, loading_added: f64) -> Result<Self> {
        let n = m.nrows();
        let chol = nalgebra::Cholesky::new(m)
            .ok_or_else(|| Error::FactorizationFailed("matrix not positive definite".into()))?;
        let lower = chol.unpack();
        let mut log_det = 0.0;
        for i in 0..n {
            let d = lower[(i, i)].re;
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::FactorizationFailed(
                    "non-positive pivot in Cholesky".into(),
                ));
            }
            log_det += 2.0 * d.ln();
        }
        Ok(Self {
            lower,
            log_det,
            loading_added,
        })
    }

    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    pub fn loading_added(&self) -> f64 {
        self.loading_added
    }

    /// Solves `C x = b` using the stored factor.
    pub fn solve(&self, b: &CVec) -> CVec {
        let mut x = b.clone();
        self.lower.solve_lower_triangular_mut(&mut x);
        self.lower.adjoint().solve_upper_triangular_mut(&mut x);
        x
    }

    /// Quadratic form `x^H C^{-1} x = |L^{-1} x|^2`.
    pub fn quad_form(&self, x: &CVec) -> f64 {
        let mut z = x.clone();
        self.lower.solve_lower_triangular_mut(&mut z);
        z.norm_squared()
    }

    /// In-place variant of [`quad_form`] reusing a scratch buffer.
    pub fn quad_form_into(&self, x: &CVec, scratch: &mut CVec) -> f64 {
        scratch.copy_from(x);
        self.lower.solve_lower_triangular_mut(scratch);
        scratch.norm_squared()
    }

    /// `L L^H`; reconstructs the factorized matrix (including any loading).
    pub fn reconstruct(&self) -> CMat {
        &self.lower * self.lower.adjoint()
    }
}

/// Zero-mean complex Gaussian log-density
/// `-x^H C^{-1} x - log det C - n log(pi)` evaluated with a prepared factor.
pub fn complex_gaussian_log_density(factor: &HermitianFactor, x: &CVec) -> f64 {
    -factor.quad_form(x) - factor.log_det() - factor.dim() as f64 * std::f64::consts::PI.ln()
}
