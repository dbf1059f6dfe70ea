//! Zero-mean Gaussian mixture prior over channels.
//!
//! The mixture is fitted offline to a channel dataset (see [`fit`]) with
//! full, Toeplitz or circulant component covariances. Online, the component
//! responsibilities for a one-bit observation are evaluated under the
//! arcsine-law output statistics, and the most responsible component
//! parameterizes the EM estimator's M-step.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{complex_gaussian_log_density, CMat, HermitianFactor};
use crate::numerics::log_sum_exp;
use crate::signal_model::{quantized_covariance, PilotSystem, QuantizedObservation};

mod fit;
pub mod io;
mod structure;

pub use fit::{fit_gmm, FitConfig, FitReport};
pub use structure::{structure_matrix, CovarianceStructure, SpectralBasis};

/// Initial diagonal loading for factorizing quantized-output covariances,
/// relative to their unit diagonal. Escalated by factors of 100 on failure.
const STATS_BASE_LOADING: f64 = 1e-10;
const STATS_LOADING_ATTEMPTS: u32 = 6;

/// Covariance of one mixture component, either dense or parameterized by a
/// nonnegative spectrum (see [`SpectralBasis`]).
#[derive(Debug, Clone)]
pub enum ComponentCovariance {
    Full(CMat),
    Toeplitz(Vec<f64>),
    Circulant(Vec<f64>),
}

impl ComponentCovariance {
    pub fn structure(&self) -> CovarianceStructure {
        match self {
            Self::Full(_) => CovarianceStructure::Full,
            Self::Toeplitz(_) => CovarianceStructure::Toeplitz,
            Self::Circulant(_) => CovarianceStructure::Circulant,
        }
    }

    /// Dense N x N covariance matrix.
    pub fn dense(&self, n_antennas: usize) -> Result<CMat> {
        match self {
            Self::Full(m) => Ok(m.clone()),
            Self::Toeplitz(c) => {
                Ok(SpectralBasis::new(CovarianceStructure::Toeplitz, n_antennas)?.reconstruct(c))
            }
            Self::Circulant(c) => {
                Ok(SpectralBasis::new(CovarianceStructure::Circulant, n_antennas)?.reconstruct(c))
            }
        }
    }

    pub fn spectrum(&self) -> Option<&[f64]> {
        match self {
            Self::Full(_) => None,
            Self::Toeplitz(c) | Self::Circulant(c) => Some(c),
        }
    }
}

/// Mixing weights and per-component zero-mean covariances.
#[derive(Debug, Clone)]
pub struct GmmPrior {
    weights: Vec<f64>,
    components: Vec<ComponentCovariance>,
    structure: CovarianceStructure,
    n_antennas: usize,
}

impl GmmPrior {
    pub fn from_parts(
        weights: Vec<f64>,
        components: Vec<ComponentCovariance>,
        structure: CovarianceStructure,
        n_antennas: usize,
    ) -> Result<Self> {
        if weights.is_empty() || weights.len() != components.len() {
            return Err(Error::InvalidArgument(
                "weights and components must be non-empty and of equal length".into(),
            ));
        }
        let sum: f64 = weights.iter().sum();
        if weights.iter().any(|w| *w < 0.0) || (sum - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidArgument(format!(
                "mixing weights must be nonnegative and sum to 1 (sum = {sum})"
            )));
        }
        if components.iter().any(|c| c.structure() != structure) {
            return Err(Error::InvalidArgument(
                "component structure does not match prior structure".into(),
            ));
        }
        let expected_len = match structure {
            CovarianceStructure::Full => 0,
            CovarianceStructure::Toeplitz => 2 * n_antennas,
            CovarianceStructure::Circulant => n_antennas,
        };
        for c in &components {
            match c {
                ComponentCovariance::Full(m) => {
                    if m.nrows() != n_antennas || m.ncols() != n_antennas {
                        return Err(Error::DimensionMismatch(
                            "component covariance size != n_antennas".into(),
                        ));
                    }
                }
                ComponentCovariance::Toeplitz(v) | ComponentCovariance::Circulant(v) => {
                    if v.len() != expected_len {
                        return Err(Error::DimensionMismatch(format!(
                            "spectrum length {} != expected {expected_len}",
                            v.len()
                        )));
                    }
                    if v.iter().any(|x| *x < 0.0) {
                        return Err(Error::InvalidArgument(
                            "spectral covariance entries must be nonnegative".into(),
                        ));
                    }
                }
            }
        }
        Ok(Self {
            weights,
            components,
            structure,
            n_antennas,
        })
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn n_antennas(&self) -> usize {
        self.n_antennas
    }

    pub fn structure(&self) -> CovarianceStructure {
        self.structure
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn component(&self, k: usize) -> &ComponentCovariance {
        &self.components[k]
    }

    /// Dense covariance of component `k`.
    pub fn dense_covariance(&self, k: usize) -> Result<CMat> {
        self.components[k].dense(self.n_antennas)
    }
}

/// Precomputed quantized-domain statistics of a (prior, pilot system) pair:
/// per component the factorized arcsine-law covariance of the one-bit
/// output, ready for repeated responsibility evaluations.
pub struct QuantizedComponentStats {
    factors: Vec<HermitianFactor>,
    log_weights: Vec<f64>,
    n_antennas: usize,
    n_pilots: usize,
    noise_var: f64,
}

impl QuantizedComponentStats {
    pub fn n_components(&self) -> usize {
        self.factors.len()
    }

    pub fn factor(&self, k: usize) -> &HermitianFactor {
        &self.factors[k]
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    /// MAP component of an observation assumed dimensionally compatible
    /// (ties break to the lowest index).
    pub fn map_component_unchecked(&self, r: &QuantizedObservation) -> usize {
        let logs = log_posteriors(self, r);
        let mut best = 0;
        for (k, &l) in logs.iter().enumerate() {
            if l > logs[best] {
                best = k;
            }
        }
        best
    }

    pub fn check_compatible(
        &self,
        prior: &GmmPrior,
        system: &PilotSystem,
        r: &QuantizedObservation,
    ) -> Result<()> {
        r.check_system(system)?;
        if self.n_antennas != system.n_antennas()
            || self.n_pilots != system.n_pilots()
            || self.noise_var != system.noise_var()
        {
            return Err(Error::DimensionMismatch(
                "stats were precomputed for a different pilot system".into(),
            ));
        }
        if self.factors.len() != prior.n_components() {
            return Err(Error::DimensionMismatch(
                "stats were precomputed for a different prior".into(),
            ));
        }
        Ok(())
    }
}

/// Builds the per-component quantized-output covariances
/// `C_r|k = arcsine(normalize(A C_h|k A^H + sigma^2 I))` and factorizes
/// them, with diagonal-loading escalation if an arcsine-law covariance is
/// numerically singular.
pub fn precompute_stats(prior: &GmmPrior, system: &PilotSystem) -> Result<QuantizedComponentStats> {
    if prior.n_antennas() != system.n_antennas() {
        return Err(Error::DimensionMismatch(
            "prior antenna count does not match system".into(),
        ));
    }
    let mut factors = Vec::with_capacity(prior.n_components());
    for k in 0..prior.n_components() {
        let dense = prior.dense_covariance(k)?;
        let c_y = system.output_covariance(&dense)?;
        let c_r = quantized_covariance(&c_y)?;
        let factor =
            HermitianFactor::with_loading_escalation(&c_r, STATS_BASE_LOADING, STATS_LOADING_ATTEMPTS)?;
        factors.push(factor);
    }
    let log_weights = prior
        .weights()
        .iter()
        .map(|&w| if w > 0.0 { w.ln() } else { f64::NEG_INFINITY })
        .collect();
    Ok(QuantizedComponentStats {
        factors,
        log_weights,
        n_antennas: system.n_antennas(),
        n_pilots: system.n_pilots(),
        noise_var: system.noise_var(),
    })
}

/// Per-component log of `p(k) * CN(r; 0, C_r|k)` (unnormalized posterior).
fn log_posteriors(stats: &QuantizedComponentStats, r: &QuantizedObservation) -> Vec<f64> {
    let rv = r.as_vector();
    stats
        .factors
        .iter()
        .zip(&stats.log_weights)
        .map(|(factor, &lw)| lw + complex_gaussian_log_density(factor, &rv))
        .collect()
}

/// Posterior probabilities of the mixture components given a one-bit
/// observation, evaluated through the precomputed arcsine-law statistics.
pub fn responsibilities(
    prior: &GmmPrior,
    stats: &QuantizedComponentStats,
    system: &PilotSystem,
    r: &QuantizedObservation,
) -> Result<Vec<f64>> {
    stats.check_compatible(prior, system, r)?;
    let logs = log_posteriors(stats, r);
    let lse = log_sum_exp(&logs);
    if !lse.is_finite() {
        return Err(Error::InvalidArgument(
            "responsibilities are degenerate (all components have zero posterior)".into(),
        ));
    }
    let mut probs: Vec<f64> = logs.iter().map(|&l| (l - lse).exp()).collect();
    let total: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= total);
    Ok(probs)
}

/// Index of the most responsible component; ties break to the lowest index.
pub fn map_component(
    prior: &GmmPrior,
    stats: &QuantizedComponentStats,
    system: &PilotSystem,
    r: &QuantizedObservation,
) -> Result<usize> {
    stats.check_compatible(prior, system, r)?;
    let logs = log_posteriors(stats, r);
    let mut best = 0;
    for (k, &l) in logs.iter().enumerate() {
        if l > logs[best] {
            best = k;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel_model::{build_covariance, ClusterParams};
    use crate::linalg::CVec;
    use crate::rng::derive_rng;

    fn unit_prior(n: usize) -> GmmPrior {
        GmmPrior::from_parts(
            vec![1.0],
            vec![ComponentCovariance::Full(CMat::identity(n, n))],
            CovarianceStructure::Full,
            n,
        )
        .unwrap()
    }

    #[test]
    fn identity_chain_gives_identity_stats() {
        // C_h = I, a = [1], sigma^2 = 1: C_y = 2I, C_r = I.
        let prior = unit_prior(3);
        let system = PilotSystem::new(vec![Complex64::new(1.0, 0.0)], 3, 1.0).unwrap();
        let stats = precompute_stats(&prior, &system).unwrap();
        let rec = stats.factor(0).reconstruct();
        assert!((rec - CMat::identity(3, 3)).norm() < 1e-9);
        assert!(stats.factor(0).log_det().abs() < 1e-9);
    }

    #[test]
    fn single_component_responsibility_is_one() {
        let prior = unit_prior(4);
        let system = PilotSystem::from_snr_db(2, 4, 0.0).unwrap();
        let stats = precompute_stats(&prior, &system).unwrap();
        let mut rng = derive_rng(1, &[2]);
        let h = CVec::from_fn(4, |i, _| Complex64::new(1.0, i as f64 * 0.2));
        let r = system.observe(&h, &mut rng).unwrap();
        let resp = responsibilities(&prior, &stats, &system, &r).unwrap();
        assert_eq!(resp.len(), 1);
        assert!((resp[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identical_components_split_by_weight() {
        let n = 3;
        let cov = || ComponentCovariance::Full(CMat::identity(n, n));
        let prior = GmmPrior::from_parts(
            vec![0.3, 0.7],
            vec![cov(), cov()],
            CovarianceStructure::Full,
            n,
        )
        .unwrap();
        let system = PilotSystem::from_snr_db(2, n, 5.0).unwrap();
        let stats = precompute_stats(&prior, &system).unwrap();
        let mut rng = derive_rng(7, &[3]);
        let h = CVec::from_fn(n, |i, _| Complex64::new(-0.5 + i as f64, 0.7));
        let r = system.observe(&h, &mut rng).unwrap();
        let resp = responsibilities(&prior, &stats, &system, &r).unwrap();
        assert!((resp[0] - 0.3).abs() < 1e-10);
        assert!((resp[1] - 0.7).abs() < 1e-10);
        // MAP picks the heavier one; exact ties break to the lowest index.
        assert_eq!(map_component(&prior, &stats, &system, &r).unwrap(), 1);
        let tied = GmmPrior::from_parts(
            vec![0.5, 0.5],
            vec![cov(), cov()],
            CovarianceStructure::Full,
            n,
        )
        .unwrap();
        let stats = precompute_stats(&tied, &system).unwrap();
        assert_eq!(map_component(&tied, &stats, &system, &r).unwrap(), 0);
    }

    #[test]
    fn responsibilities_recover_generating_component() {
        // Well-separated two-component prior from distant cluster angles.
        let n = 16;
        let spread = crate::channel_model::DEFAULT_ANGLE_SPREAD;
        let cov_a = build_covariance(
            &ClusterParams::new(vec![-1.0], vec![1.0], spread).unwrap(),
            n,
            720,
        )
        .unwrap()
        .into_matrix();
        let cov_b = build_covariance(
            &ClusterParams::new(vec![1.0], vec![1.0], spread).unwrap(),
            n,
            720,
        )
        .unwrap()
        .into_matrix();
        let prior = GmmPrior::from_parts(
            vec![0.5, 0.5],
            vec![
                ComponentCovariance::Full(cov_a.clone()),
                ComponentCovariance::Full(cov_b.clone()),
            ],
            CovarianceStructure::Full,
            n,
        )
        .unwrap();
        let system = PilotSystem::from_snr_db(8, n, 10.0).unwrap();
        let stats = precompute_stats(&prior, &system).unwrap();

        let sqrt_a = crate::linalg::psd_sqrt(&cov_a);
        let sqrt_b = crate::linalg::psd_sqrt(&cov_b);
        let mut hits = 0;
        let trials = 1000;
        let mut rng = derive_rng(99, &[4]);
        for t in 0..trials {
            let truth = t % 2;
            let sqrt = if truth == 0 { &sqrt_a } else { &sqrt_b };
            let w = CVec::from_fn(n, |_, _| {
                use rand_distr::{Distribution, StandardNormal};
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                Complex64::new(re, im).scale(std::f64::consts::FRAC_1_SQRT_2)
            });
            let h = sqrt * w;
            let r = system.observe(&h, &mut rng).unwrap();
            if map_component(&prior, &stats, &system, &r).unwrap() == truth {
                hits += 1;
            }
        }
        let rate = hits as f64 / trials as f64;
        assert!(rate >= 0.90, "classification rate {rate}");
    }

    #[test]
    fn responsibilities_stable_at_extreme_snr() {
        let n = 4;
        let spread = crate::channel_model::DEFAULT_ANGLE_SPREAD;
        let cov = build_covariance(
            &ClusterParams::new(vec![0.5], vec![1.0], spread).unwrap(),
            n,
            720,
        )
        .unwrap()
        .into_matrix();
        let prior = GmmPrior::from_parts(
            vec![0.5, 0.5],
            vec![
                ComponentCovariance::Full(cov),
                ComponentCovariance::Full(CMat::identity(n, n)),
            ],
            CovarianceStructure::Full,
            n,
        )
        .unwrap();
        let h = CVec::from_fn(n, |i, _| Complex64::new(0.4 - 0.1 * i as f64, 0.3));
        for noise_var in [1e-8, 1e8] {
            let system = PilotSystem::new(
                crate::signal_model::make_pilots(2).unwrap(),
                n,
                noise_var,
            )
            .unwrap();
            let stats = precompute_stats(&prior, &system).unwrap();
            let mut rng = derive_rng(3, &[noise_var.to_bits()]);
            let r = system.observe(&h, &mut rng).unwrap();
            let resp = responsibilities(&prior, &stats, &system, &r).unwrap();
            assert!(resp.iter().all(|p| p.is_finite()), "noise_var={noise_var}");
            assert!((resp.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn prior_validation() {
        let n = 3;
        assert!(GmmPrior::from_parts(vec![], vec![], CovarianceStructure::Full, n).is_err());
        assert!(GmmPrior::from_parts(
            vec![0.6, 0.6],
            vec![
                ComponentCovariance::Full(CMat::identity(n, n)),
                ComponentCovariance::Full(CMat::identity(n, n)),
            ],
            CovarianceStructure::Full,
            n,
        )
        .is_err());
        assert!(GmmPrior::from_parts(
            vec![1.0],
            vec![ComponentCovariance::Circulant(vec![1.0; n])],
            CovarianceStructure::Full,
            n,
        )
        .is_err());
    }
}
