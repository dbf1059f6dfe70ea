//! Pilot design, the linear measurement operator, complex one-bit
//! quantization, and the second-order statistics of the quantized output.
//!
//! The measurement operator is `A = a kron I`, applied block-wise so the
//! dense matrix is never materialized. With the channel normalization
//! `E[|h|^2] = N` and the pilot power `|a|^2 = P`, the SNR is `1/sigma^2`.
//! The covariance of the unquantized output is built as
//! `C_y = A C_h A^H + sigma^2 I`.

use std::f64::consts::FRAC_1_SQRT_2;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{CMat, CVec};
use crate::numerics::arcsine_map;

pub mod io;

/// Pilot vector, array size and noise level; the measurement operator.
#[derive(Debug, Clone)]
pub struct PilotSystem {
    pilots: Vec<Complex64>,
    n_antennas: usize,
    noise_var: f64,
}

impl PilotSystem {
    /// `noise_var` is the total complex noise variance per entry
    /// (`sigma^2 / 2` per real dimension).
    pub fn new(pilots: Vec<Complex64>, n_antennas: usize, noise_var: f64) -> Result<Self> {
        if pilots.is_empty() || n_antennas == 0 {
            return Err(Error::InvalidArgument(
                "pilot count and antenna count must be positive".into(),
            ));
        }
        if !(noise_var > 0.0) || !noise_var.is_finite() {
            return Err(Error::InvalidArgument("noise variance must be positive".into()));
        }
        let power: f64 = pilots.iter().map(|a| a.norm_sqr()).sum();
        if (power - pilots.len() as f64).abs() > 1e-10 * pilots.len() as f64 {
            return Err(Error::InvalidArgument(format!(
                "pilot power {power} violates |a|^2 = P = {}",
                pilots.len()
            )));
        }
        Ok(Self {
            pilots,
            n_antennas,
            noise_var,
        })
    }

    /// Standard pilot design at a given SNR in dB (`sigma^2 = 10^(-snr/10)`).
    pub fn from_snr_db(n_pilots: usize, n_antennas: usize, snr_db: f64) -> Result<Self> {
        Self::new(
            make_pilots(n_pilots)?,
            n_antennas,
            10f64.powf(-snr_db / 10.0),
        )
    }

    pub fn pilots(&self) -> &[Complex64] {
        &self.pilots
    }

    pub fn n_pilots(&self) -> usize {
        self.pilots.len()
    }

    pub fn n_antennas(&self) -> usize {
        self.n_antennas
    }

    /// Total complex noise variance per observation entry.
    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    /// Output dimension `N * P`.
    pub fn dim(&self) -> usize {
        self.n_antennas * self.pilots.len()
    }

    fn check_channel_dim(&self, h: &CVec) -> Result<()> {
        if h.len() != self.n_antennas {
            return Err(Error::DimensionMismatch(format!(
                "channel length {} != n_antennas {}",
                h.len(),
                self.n_antennas
            )));
        }
        Ok(())
    }

    fn check_output_dim(&self, y: &CVec) -> Result<()> {
        if y.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "output length {} != N*P = {}",
                y.len(),
                self.dim()
            )));
        }
        Ok(())
    }

    /// `(a kron I) h`: block `p` of the output is `a_p * h`.
    pub fn apply_forward(&self, h: &CVec) -> Result<CVec> {
        self.check_channel_dim(h)?;
        let n = self.n_antennas;
        let mut out = CVec::zeros(self.dim());
        for (p, &a) in self.pilots.iter().enumerate() {
            for i in 0..n {
                out[p * n + i] = a * h[i];
            }
        }
        Ok(out)
    }

    /// Adjoint `A^H y = sum_p conj(a_p) * y_block_p`.
    pub fn apply_adjoint(&self, y: &CVec) -> Result<CVec> {
        self.check_output_dim(y)?;
        let n = self.n_antennas;
        let mut out = CVec::zeros(n);
        for (p, &a) in self.pilots.iter().enumerate() {
            let ac = a.conj();
            for i in 0..n {
                out[i] += ac * y[p * n + i];
            }
        }
        Ok(out)
    }

    /// Covariance of the unquantized output for a channel covariance `cov`:
    /// `(a a^H) kron cov + sigma^2 I`, exploiting the Kronecker structure.
    pub fn output_covariance(&self, cov: &CMat) -> Result<CMat> {
        if cov.nrows() != self.n_antennas || cov.ncols() != self.n_antennas {
            return Err(Error::DimensionMismatch(
                "channel covariance does not match n_antennas".into(),
            ));
        }
        let n = self.n_antennas;
        let p = self.n_pilots();
        let mut out = CMat::zeros(n * p, n * p);
        for bp in 0..p {
            for bq in 0..p {
                let s = self.pilots[bp] * self.pilots[bq].conj();
                for i in 0..n {
                    for j in 0..n {
                        out[(bp * n + i, bq * n + j)] = s * cov[(i, j)];
                    }
                }
            }
        }
        for d in 0..n * p {
            out[(d, d)] += Complex64::new(self.noise_var, 0.0);
        }
        Ok(out)
    }

    /// Adds circularly-symmetric Gaussian noise and quantizes.
    pub fn observe<R: Rng>(&self, h: &CVec, rng: &mut R) -> Result<QuantizedObservation> {
        let mut y = self.apply_forward(h)?;
        let sd = (self.noise_var / 2.0).sqrt();
        for v in y.iter_mut() {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            *v += Complex64::new(sd * re, sd * im);
        }
        Ok(QuantizedObservation {
            values: quantize_one_bit(y.as_slice()),
            n_antennas: self.n_antennas,
            n_pilots: self.pilots.len(),
        })
    }
}

/// Pilot vector with linearly increasing amplitude and phase, normalized to
/// `|a|^2 = P`. For `P = 1` the amplitude/phase spacing is undefined and the
/// single pilot is 1.
pub fn make_pilots(n_pilots: usize) -> Result<Vec<Complex64>> {
    match n_pilots {
        0 => Err(Error::InvalidArgument("need at least one pilot".into())),
        1 => Ok(vec![Complex64::new(1.0, 0.0)]),
        p => {
            let mut pilots: Vec<Complex64> = (0..p)
                .map(|i| {
                    let beta = 0.5 + i as f64 / (2.0 * (p as f64 - 1.0));
                    let phase = std::f64::consts::PI * i as f64 / (2.0 * p as f64);
                    Complex64::from_polar(beta, phase)
                })
                .collect();
            let power: f64 = pilots.iter().map(|a| a.norm_sqr()).sum();
            let scale = (p as f64 / power).sqrt();
            for a in &mut pilots {
                *a = a.scale(scale);
            }
            Ok(pilots)
        }
    }
}

/// Entrywise complex one-bit quantizer `(sign(Re) + j sign(Im)) / sqrt(2)`,
/// with `sign(0) := +1`.
pub fn quantize_one_bit(y: &[Complex64]) -> Vec<Complex64> {
    y.iter()
        .map(|v| {
            let re = if v.re >= 0.0 { 1.0 } else { -1.0 };
            let im = if v.im >= 0.0 { 1.0 } else { -1.0 };
            Complex64::new(re * FRAC_1_SQRT_2, im * FRAC_1_SQRT_2)
        })
        .collect()
}

/// One-bit quantized pilot observation; every entry lies in
/// `{(+-1 +- j)/sqrt(2)}`.
#[derive(Debug, Clone)]
pub struct QuantizedObservation {
    values: Vec<Complex64>,
    n_antennas: usize,
    n_pilots: usize,
}

impl QuantizedObservation {
    pub fn from_values(values: Vec<Complex64>, n_antennas: usize, n_pilots: usize) -> Result<Self> {
        if values.len() != n_antennas * n_pilots {
            return Err(Error::DimensionMismatch(
                "observation length != N*P".into(),
            ));
        }
        Ok(Self {
            values,
            n_antennas,
            n_pilots,
        })
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn as_vector(&self) -> CVec {
        CVec::from_column_slice(&self.values)
    }

    pub fn n_antennas(&self) -> usize {
        self.n_antennas
    }

    pub fn n_pilots(&self) -> usize {
        self.n_pilots
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Checks that this observation was produced by a compatible system.
    pub fn check_system(&self, system: &PilotSystem) -> Result<()> {
        if self.n_antennas != system.n_antennas() || self.n_pilots != system.n_pilots() {
            return Err(Error::DimensionMismatch(format!(
                "observation ({}x{}) does not match system ({}x{})",
                self.n_antennas,
                self.n_pilots,
                system.n_antennas(),
                system.n_pilots()
            )));
        }
        Ok(())
    }

    /// Packs the quantizer signs into bytes (2 bits per entry), used for
    /// pairing hashes in evaluation reports.
    pub fn sign_bits(&self) -> Vec<u8> {
        let mut bits = Vec::with_capacity(self.values.len() / 4 + 1);
        let mut acc = 0u8;
        let mut filled = 0;
        for v in &self.values {
            acc = (acc << 1) | (v.re > 0.0) as u8;
            acc = (acc << 1) | (v.im > 0.0) as u8;
            filled += 2;
            if filled == 8 {
                bits.push(acc);
                acc = 0;
                filled = 0;
            }
        }
        if filled > 0 {
            bits.push(acc << (8 - filled));
        }
        bits
    }
}

/// Covariance of the one-bit quantized output of a zero-mean complex
/// Gaussian with covariance `c_y`, via the arcsine law applied to the
/// normalized correlation matrix. The result is Hermitian with an exactly
/// unit diagonal.
pub fn quantized_covariance(c_y: &CMat) -> Result<CMat> {
    let m = c_y.nrows();
    if c_y.ncols() != m {
        return Err(Error::DimensionMismatch("covariance must be square".into()));
    }
    let mut inv_sqrt_diag = Vec::with_capacity(m);
    for i in 0..m {
        let d = c_y[(i, i)].re;
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "nonpositive diagonal entry {d} at {i} (degenerate component)"
            )));
        }
        inv_sqrt_diag.push(1.0 / d.sqrt());
    }
    let mut out = CMat::zeros(m, m);
    for i in 0..m {
        out[(i, i)] = Complex64::new(1.0, 0.0);
        for j in (i + 1)..m {
            let rho = c_y[(i, j)] * (inv_sqrt_diag[i] * inv_sqrt_diag[j]);
            let v = Complex64::new(arcsine_map(rho.re), arcsine_map(rho.im));
            out[(i, j)] = v;
            out[(j, i)] = v.conj();
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_rng;
    use std::f64::consts::PI;

    #[test]
    fn pilots_p2_known_values() {
        // Unnormalized: [0.5, exp(j pi/4)]; power 1.25, scale sqrt(1.6).
        let a = make_pilots(2).unwrap();
        let scale = (2.0f64 / 1.25).sqrt();
        assert!((a[0] - Complex64::new(0.5 * scale, 0.0)).norm() < 1e-14);
        let want = Complex64::from_polar(scale, PI / 4.0);
        assert!((a[1] - want).norm() < 1e-14);
        let power: f64 = a.iter().map(|x| x.norm_sqr()).sum();
        assert!((power - 2.0).abs() < 1e-12);
    }

    #[test]
    fn pilots_phase_and_amplitude_profile() {
        for p in [2usize, 5, 16, 32] {
            let a = make_pilots(p).unwrap();
            assert!((a[0].arg() - 0.0).abs() < 1e-14);
            let last_phase = a[p - 1].arg();
            let want = PI * (p as f64 - 1.0) / (2.0 * p as f64);
            assert!((last_phase - want).abs() < 1e-12);
            assert!(last_phase < PI / 2.0);
            for i in 1..p {
                assert!(a[i].arg() > a[i - 1].arg());
                assert!(a[i].norm() > a[i - 1].norm());
            }
        }
        // Amplitude spacing endpoint: beta_P = 1.0 exactly before scaling.
        let p = 16;
        let beta_last = 0.5 + (p as f64 - 1.0) / (2.0 * (p as f64 - 1.0));
        assert_eq!(beta_last, 1.0);
    }

    #[test]
    fn pilots_p1_is_unit() {
        let a = make_pilots(1).unwrap();
        assert_eq!(a.len(), 1);
        assert!((a[0] - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        assert!(make_pilots(0).is_err());
    }

    #[test]
    fn forward_kronecker_blocks() {
        let pilots = vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 1.0)];
        let sys = PilotSystem::new(pilots, 3, 0.5).unwrap();
        let h = CVec::from_vec(vec![
            Complex64::new(1.0, 2.0),
            Complex64::new(-0.5, 0.0),
            Complex64::new(0.0, -1.0),
        ]);
        let y = sys.apply_forward(&h).unwrap();
        for i in 0..3 {
            assert!((y[i] - h[i]).norm() < 1e-15);
            assert!((y[3 + i] - h[i] * Complex64::i()).norm() < 1e-15);
        }
        let h_bad = CVec::zeros(4);
        assert!(sys.apply_forward(&h_bad).is_err());
    }

    #[test]
    fn forward_matches_dense_and_preserves_power() {
        let mut rng = derive_rng(3, &[10]);
        let sys = PilotSystem::from_snr_db(4, 8, 5.0).unwrap();
        let h = CVec::from_fn(8, |_, _| {
            Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
        });
        let y = sys.apply_forward(&h).unwrap();
        // Dense oracle.
        let mut dense = CMat::zeros(32, 8);
        for (p, &a) in sys.pilots().iter().enumerate() {
            for i in 0..8 {
                dense[(p * 8 + i, i)] = a;
            }
        }
        let y_dense = &dense * &h;
        assert!((&y - &y_dense).norm() < 1e-12);
        // |Ah|^2 = P |h|^2 and A^H A h = P h.
        assert!((y.norm_squared() - 4.0 * h.norm_squared()).abs() < 1e-10);
        let back = sys.apply_adjoint(&y).unwrap();
        assert!((&back - h.scale(4.0)).norm() < 1e-10);
    }

    #[test]
    fn quantizer_known_values() {
        let q = quantize_one_bit(&[
            Complex64::new(1.0, 2.0),
            Complex64::new(-0.1, -3.0),
            Complex64::new(0.0, 0.0),
        ]);
        let s = FRAC_1_SQRT_2;
        assert_eq!(q[0], Complex64::new(s, s));
        assert_eq!(q[1], Complex64::new(-s, -s));
        assert_eq!(q[2], Complex64::new(s, s));
        for v in &q {
            assert!((v.norm() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn observe_noiseless_limit_and_reproducibility() {
        let sys = PilotSystem::new(make_pilots(3).unwrap(), 4, 1e-30).unwrap();
        let mut rng = derive_rng(1, &[7]);
        let h = CVec::from_fn(4, |i, _| Complex64::new(1.0 + i as f64, -0.3));
        let obs = sys.observe(&h, &mut rng).unwrap();
        let want = quantize_one_bit(sys.apply_forward(&h).unwrap().as_slice());
        assert_eq!(obs.values(), want.as_slice());

        let mut rng_a = derive_rng(5, &[8]);
        let mut rng_b = derive_rng(5, &[8]);
        let sys = PilotSystem::from_snr_db(3, 4, 0.0).unwrap();
        let a = sys.observe(&h, &mut rng_a).unwrap();
        let b = sys.observe(&h, &mut rng_b).unwrap();
        assert_eq!(a.values(), b.values());
    }

    #[test]
    fn observe_sign_probability_matches_gaussian_orthant() {
        // Scalar check: P(Re r = +) = Phi(b_re * sqrt(2/sigma^2)).
        let sigma2 = 0.8;
        let sys = PilotSystem::new(vec![Complex64::new(1.0, 0.0)], 1, sigma2).unwrap();
        let h = CVec::from_vec(vec![Complex64::new(0.35, -0.2)]);
        let n = 1_000_000usize;
        let mut rng = derive_rng(17, &[21]);
        let mut plus = 0usize;
        for _ in 0..n {
            let obs = sys.observe(&h, &mut rng).unwrap();
            if obs.values()[0].re > 0.0 {
                plus += 1;
            }
        }
        let p_hat = plus as f64 / n as f64;
        let p = crate::numerics::normal_cdf(0.35 * (2.0 / sigma2).sqrt());
        let mc_sigma = (p * (1.0 - p) / n as f64).sqrt();
        assert!(
            (p_hat - p).abs() < 3.0 * mc_sigma,
            "p_hat {p_hat} vs p {p} (3 sigma = {})",
            3.0 * mc_sigma
        );
    }

    #[test]
    fn quantized_covariance_identity_and_diag() {
        let c = CMat::identity(4, 4).scale(3.7);
        let q = quantized_covariance(&c).unwrap();
        assert!((q - CMat::identity(4, 4)).norm() < 1e-14);

        let mut c = CMat::identity(3, 3);
        c[(0, 1)] = Complex64::new(0.4, 0.2);
        c[(1, 0)] = Complex64::new(0.4, -0.2);
        c[(0, 0)] = Complex64::new(2.0, 0.0);
        let q = quantized_covariance(&c).unwrap();
        for i in 0..3 {
            assert_eq!(q[(i, i)], Complex64::new(1.0, 0.0));
        }
        assert!(crate::linalg::hermitian_deviation(&q) < 1e-15);
        for i in 0..3 {
            for j in 0..3 {
                assert!(q[(i, j)].re.abs() <= 1.0 + 1e-15);
                assert!(q[(i, j)].im.abs() <= 1.0 + 1e-15);
            }
        }
    }

    #[test]
    fn quantized_covariance_rejects_bad_diag() {
        let mut c = CMat::identity(2, 2);
        c[(1, 1)] = Complex64::new(0.0, 0.0);
        assert!(quantized_covariance(&c).is_err());
    }

    #[test]
    fn sign_bits_pack() {
        let s = FRAC_1_SQRT_2;
        let obs = QuantizedObservation::from_values(
            vec![Complex64::new(s, -s), Complex64::new(-s, s)],
            2,
            1,
        )
        .unwrap();
        // (+,-),(-,+) -> bits 10 01 -> byte 1001_0000.
        assert_eq!(obs.sign_bits(), vec![0b1001_0000]);
    }
}
