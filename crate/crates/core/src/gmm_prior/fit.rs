//! Offline EM fitting of the zero-mean Gaussian mixture.
//!
//! The E-step evaluates component responsibilities in the log domain; the
//! M-step updates mixing weights and responsibility-weighted sample
//! covariances, projecting the latter onto the requested structure and
//! adding diagonal loading. Samples are processed in fixed-size chunks that
//! are combined in order, so parallel and serial fits are bit-identical.

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;

use super::structure::{CovarianceStructure, SpectralBasis};
use super::{ComponentCovariance, GmmPrior};
use crate::channel_model::ChannelDataset;
use crate::error::{Error, Result};
use crate::linalg::{hermitianize, trace_real, CMat, CVec, HermitianFactor};
use crate::numerics::log_sum_exp;
use crate::rng::{derive_rng, stream};

const CHUNK: usize = 512;
/// Mixing weights below this floor count as degenerate (underflowed)
/// components. Small-but-alive weights are legitimate; the floor only
/// catches components that no longer claim any responsibility mass.
const WEIGHT_FLOOR: f64 = 1e-15;
/// Responsibilities below this threshold are skipped in the covariance
/// accumulation; the cutoff is deterministic, so reproducibility holds.
const RESP_CUTOFF: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct FitConfig {
    pub max_iters: usize,
    /// Relative log-likelihood change below which the fit stops.
    pub tol: f64,
    /// Diagonal loading added to every covariance update, as a fraction of
    /// the average eigenvalue (trace / N).
    pub loading_eps: f64,
    /// Scale of the random diagonal perturbation used to break the symmetry
    /// of the initial components, as a fraction of trace / N.
    pub perturbation: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_iters: 300,
            tol: 1e-6,
            loading_eps: 1e-6,
            perturbation: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitReport {
    /// Mean per-sample log-likelihood at the start of every iteration.
    pub log_likelihoods: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Number of degenerate-component re-seeds that occurred.
    pub reseeds: usize,
}

/// Per-component density evaluator for one EM iteration.
enum Evaluator {
    Dense(HermitianFactor),
    Spectral { inv_spectrum: Vec<f64>, log_det: f64 },
}

struct ChunkStats {
    ll_sum: f64,
    resp_sums: Vec<f64>,
    /// Upper-triangular accumulators of `sum_t resp_tk h_t h_t^H`.
    scatter: Vec<CMat>,
}

fn accumulate_chunk(
    samples: &[CVec],
    evaluators: &[Evaluator],
    log_weights: &[f64],
    basis: Option<&SpectralBasis>,
    n: usize,
) -> ChunkStats {
    let k_count = evaluators.len();
    let mut stats = ChunkStats {
        ll_sum: 0.0,
        resp_sums: vec![0.0; k_count],
        scatter: vec![CMat::zeros(n, n); k_count],
    };
    let log_pi_term = n as f64 * std::f64::consts::PI.ln();
    let mut logs = vec![0.0; k_count];
    let mut scratch = CVec::zeros(n);
    for h in samples {
        let transformed = basis.map(|b| b.unitary_transform(h));
        for (k, ev) in evaluators.iter().enumerate() {
            let (quad, log_det) = match ev {
                Evaluator::Dense(f) => (f.quad_form_into(h, &mut scratch), f.log_det()),
                Evaluator::Spectral {
                    inv_spectrum,
                    log_det,
                } => {
                    let t = transformed.as_ref().expect("spectral path needs transform");
                    let quad: f64 = t
                        .iter()
                        .zip(inv_spectrum)
                        .map(|(v, &ic)| v.norm_sqr() * ic)
                        .sum();
                    (quad, *log_det)
                }
            };
            logs[k] = log_weights[k] - quad - log_det - log_pi_term;
        }
        let lse = log_sum_exp(&logs);
        stats.ll_sum += lse;
        for k in 0..k_count {
            let resp = (logs[k] - lse).exp();
            if resp < RESP_CUTOFF {
                continue;
            }
            stats.resp_sums[k] += resp;
            let sc = &mut stats.scatter[k];
            for i in 0..n {
                let hi = h[i] * resp;
                for j in i..n {
                    sc[(i, j)] += hi * h[j].conj();
                }
            }
        }
    }
    stats
}

fn mirror_upper(m: &mut CMat) {
    let n = m.nrows();
    for i in 0..n {
        m[(i, i)] = Complex64::new(m[(i, i)].re, 0.0);
        for j in 0..i {
            m[(i, j)] = m[(j, i)].conj();
        }
    }
}

/// One mixture component during fitting.
#[derive(Clone)]
enum Component {
    Dense(CMat),
    Spectral(Vec<f64>),
}

impl Component {
    fn evaluator(&self, basis: Option<&SpectralBasis>) -> Result<Evaluator> {
        match self {
            Component::Dense(c) => Ok(Evaluator::Dense(
                HermitianFactor::with_loading_escalation(c, 1e-12 * trace_real(c).max(1.0), 4)?,
            )),
            Component::Spectral(c) => {
                if basis.map(|b| b.structure()) == Some(CovarianceStructure::Circulant) {
                    if c.iter().any(|&v| !(v > 0.0)) {
                        return Err(Error::FactorizationFailed(
                            "nonpositive circulant spectrum entry".into(),
                        ));
                    }
                    Ok(Evaluator::Spectral {
                        inv_spectrum: c.iter().map(|&v| 1.0 / v).collect(),
                        log_det: c.iter().map(|&v| v.ln()).sum(),
                    })
                } else {
                    // Toeplitz: densities are evaluated on the dense
                    // reconstruction (the semi-unitary basis does not
                    // diagonalize the inverse).
                    let dense = basis.expect("spectral component needs basis").reconstruct(c);
                    Ok(Evaluator::Dense(HermitianFactor::with_loading_escalation(
                        &dense,
                        1e-12 * trace_real(&dense).max(1.0),
                        4,
                    )?))
                }
            }
        }
    }
}

fn perturbed_initial(
    base_dense: &CMat,
    base_spectrum: Option<&[f64]>,
    avg_power: f64,
    config: &FitConfig,
    k: usize,
    generation: u64,
) -> Component {
    let mut rng = derive_rng(config.seed, &[stream::FIT_INIT, k as u64, generation]);
    let scale = config.perturbation * avg_power;
    let loading = config.loading_eps * avg_power;
    match base_spectrum {
        None => {
            let mut c = base_dense.clone();
            for i in 0..c.nrows() {
                c[(i, i)] += Complex64::new(scale * rng.gen::<f64>() + loading, 0.0);
            }
            Component::Dense(c)
        }
        Some(spec) => Component::Spectral(
            spec.iter()
                .map(|&v| v + scale * rng.gen::<f64>() + loading)
                .collect(),
        ),
    }
}

/// Re-seed for a degenerate component: a jittered copy of a donor (the
/// heaviest component), which keeps the density scale competitive. A copy of
/// the broad sample covariance would be hopeless next to the concentrated
/// survivors.
fn split_perturb(donor: &Component, seed: u64, k: usize, generation: u64) -> Component {
    let mut rng = derive_rng(seed, &[stream::FIT_INIT, 0xFF, k as u64, generation]);
    // Concentrated components have enormous density peaks, so anything more
    // than a symmetry-breaking jitter starves the new twin immediately.
    let jitter = 1e-3;
    let mut draw = move || 1.0 + jitter * (rng.gen::<f64>() - 0.5);
    match donor {
        Component::Dense(c) => {
            let n = c.nrows();
            let d: Vec<f64> = (0..n).map(|_| draw()).collect();
            let mut out = c.clone();
            for i in 0..n {
                for j in 0..n {
                    out[(i, j)] *= Complex64::new(d[i] * d[j], 0.0);
                }
            }
            Component::Dense(out)
        }
        Component::Spectral(c) => Component::Spectral(c.iter().map(|&v| v * draw()).collect()),
    }
}

/// Fits a zero-mean Gaussian mixture to the dataset.
///
/// Components are initialized as the global sample covariance plus a small
/// random diagonal perturbation with uniform weights. A component whose
/// weight underflows is re-seeded once; a second underflow aborts the fit.
pub fn fit_gmm(
    dataset: &ChannelDataset,
    n_components: usize,
    structure: CovarianceStructure,
    config: &FitConfig,
) -> Result<(GmmPrior, FitReport)> {
    let t_count = dataset.n_samples();
    let n = dataset.n_antennas();
    if n_components == 0 {
        return Err(Error::InvalidArgument("need at least one component".into()));
    }
    if t_count < n_components {
        return Err(Error::InvalidArgument(format!(
            "dataset has {t_count} samples but {n_components} components requested"
        )));
    }

    let basis = match structure {
        CovarianceStructure::Full => None,
        s => Some(SpectralBasis::new(s, n)?),
    };

    let sample_cov = dataset.sample_covariance();
    let avg_power = trace_real(&sample_cov) / n as f64;
    let base_spectrum = basis.as_ref().map(|b| b.project(&sample_cov));

    let mut components: Vec<Component> = (0..n_components)
        .map(|k| {
            perturbed_initial(
                &sample_cov,
                base_spectrum.as_deref(),
                avg_power,
                config,
                k,
                0,
            )
        })
        .collect();
    let mut weights = vec![1.0 / n_components as f64; n_components];
    let mut reseed_count = vec![0usize; n_components];

    let mut report = FitReport {
        log_likelihoods: Vec::new(),
        iterations: 0,
        converged: false,
        reseeds: 0,
    };

    let samples = dataset.samples();
    // Only the circulant basis diagonalizes densities; Toeplitz components
    // are evaluated densely.
    let estep_basis = basis
        .as_ref()
        .filter(|b| b.structure() == CovarianceStructure::Circulant);
    // For full and circulant covariances the M-step is the exact maximizer
    // of the expected complete log-likelihood, so the likelihood is monotone
    // up to the diagonal loading. The Toeplitz spectral projection is an
    // approximation; its likelihood may dip mid-fit, so that fit climbs
    // through dips and keeps the best iterate.
    let exact_family = structure != CovarianceStructure::Toeplitz;
    let mut skip_convergence_check = false;
    let mut prev_state: Option<(Vec<f64>, Vec<Component>)> = None;
    let mut best: Option<(f64, Vec<f64>, Vec<Component>)> = None;
    for _iter in 0..config.max_iters {
        report.iterations += 1;
        let evaluators: Vec<Evaluator> = components
            .iter()
            .map(|c| c.evaluator(basis.as_ref()))
            .collect::<Result<_>>()?;
        let log_weights: Vec<f64> = weights
            .iter()
            .map(|&w| if w > 0.0 { w.ln() } else { f64::NEG_INFINITY })
            .collect();

        let chunk_stats: Vec<ChunkStats> = samples
            .par_chunks(CHUNK)
            .map(|chunk| accumulate_chunk(chunk, &evaluators, &log_weights, estep_basis, n))
            .collect();

        let mut ll_sum = 0.0;
        let mut resp_sums = vec![0.0; n_components];
        let mut scatter = vec![CMat::zeros(n, n); n_components];
        for cs in chunk_stats {
            ll_sum += cs.ll_sum;
            for k in 0..n_components {
                resp_sums[k] += cs.resp_sums[k];
                scatter[k] += &cs.scatter[k];
            }
        }
        let ll = ll_sum / t_count as f64;

        // Convergence on the relative log-likelihood change. The diagonal
        // loading keeps the M-step slightly off the exact maximizer, so the
        // likelihood can dip by O(loading) once converged; terminating at
        // the peak (and returning the peak parameters) handles that.
        if !skip_convergence_check {
            if let Some(&prev) = report.log_likelihoods.last() {
                let delta = ll - prev;
                if delta.abs() <= config.tol * prev.abs().max(f64::MIN_POSITIVE) {
                    report.log_likelihoods.push(ll);
                    report.converged = true;
                    break;
                }
                if delta < 0.0 && exact_family {
                    if let Some((w, c)) = prev_state.take() {
                        weights = w;
                        components = c;
                    }
                    report.converged = true;
                    break;
                }
            }
        }
        report.log_likelihoods.push(ll);
        skip_convergence_check = false;
        prev_state = Some((weights.clone(), components.clone()));
        if best.as_ref().map_or(true, |(b, _, _)| ll > *b) {
            best = Some((ll, weights.clone(), components.clone()));
        }

        // M-step: update the healthy components first.
        let mut degenerate = Vec::new();
        for k in 0..n_components {
            let w = resp_sums[k] / t_count as f64;
            if !(w > WEIGHT_FLOOR) {
                degenerate.push(k);
                continue;
            }
            weights[k] = w;
            let mut s_k = scatter[k].clone();
            mirror_upper(&mut s_k);
            s_k.scale_mut(1.0 / resp_sums[k]);
            let loading = config.loading_eps * (trace_real(&s_k) / n as f64);
            components[k] = match &basis {
                None => {
                    let mut c = hermitianize(&s_k);
                    for i in 0..n {
                        c[(i, i)] += Complex64::new(loading, 0.0);
                    }
                    Component::Dense(c)
                }
                Some(b) => {
                    let mut spec = b.project(&s_k);
                    spec.iter_mut().for_each(|v| *v += loading);
                    Component::Spectral(spec)
                }
            };
        }
        // Re-seed degenerates by splitting the heaviest healthy component.
        if !degenerate.is_empty() {
            for &k in &degenerate {
                if reseed_count[k] >= 1 {
                    return Err(Error::FitFailed(format!(
                        "component {k} degenerated twice (weight {:.3e})",
                        resp_sums[k] / t_count as f64
                    )));
                }
                reseed_count[k] += 1;
                report.reseeds += 1;
                let donor = (0..n_components)
                    .filter(|j| !degenerate.contains(j))
                    .max_by(|&a, &b| weights[a].partial_cmp(&weights[b]).unwrap())
                    .ok_or_else(|| {
                        Error::FitFailed("all mixture components degenerated".into())
                    })?;
                components[k] =
                    split_perturb(&components[donor], config.seed, k, reseed_count[k] as u64);
                let half = weights[donor] / 2.0;
                weights[donor] = half;
                weights[k] = half;
            }
            let total: f64 = weights.iter().sum();
            weights.iter_mut().for_each(|w| *w /= total);
            // Give the re-seeded components a clean E-step before checking
            // convergence again.
            skip_convergence_check = true;
        }
    }

    // A non-exact family may end below its best visited likelihood.
    if !exact_family {
        if let Some((best_ll, w, c)) = best {
            let last = report.log_likelihoods.last().copied().unwrap_or(f64::NEG_INFINITY);
            if best_ll > last {
                weights = w;
                components = c;
            }
        }
    }

    let final_components: Vec<ComponentCovariance> = components
        .into_iter()
        .map(|c| match c {
            Component::Dense(m) => ComponentCovariance::Full(m),
            Component::Spectral(v) => match structure {
                CovarianceStructure::Toeplitz => ComponentCovariance::Toeplitz(v),
                CovarianceStructure::Circulant => ComponentCovariance::Circulant(v),
                CovarianceStructure::Full => unreachable!(),
            },
        })
        .collect();
    // Guard against round-off drift in the weight normalization.
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    let prior = GmmPrior::from_parts(weights, final_components, structure, n)?;
    Ok((prior, report))
}
