//! Expectation-maximization for full-covariance Gaussian mixtures.

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::log_sum_exp;
use crate::rng::{derive_seed, rng_from_seed, Rng};

use super::{Dataset, GaussianComponent, GaussianMixture};

/// A component whose total responsibility falls below this fraction of the
/// data is re-seeded at a random data point.
const COLLAPSE_WEIGHT: f64 = 1e-8;
const E_STEP_CHUNK: usize = 1024;
const LLOYD_MAX_ITER: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    pub max_iter: usize,
    /// Convergence threshold on the change of mean log-likelihood, in nats.
    pub tol: f64,
    /// Added to every covariance diagonal after each M-step.
    pub reg_eps: f64,
    pub n_restarts: usize,
    /// Supplied by the caller per fit; never read from config files.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_iter: 500,
            tol: 1e-6,
            reg_eps: 1e-6,
            n_restarts: 5,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter < 1 {
            return Err(Error::invalid("max_iter must be ≥ 1"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::invalid("tol must be > 0"));
        }
        if !(self.reg_eps > 0.0) {
            return Err(Error::invalid("reg_eps must be > 0"));
        }
        if self.n_restarts < 1 {
            return Err(Error::invalid("n_restarts must be ≥ 1"));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }
}

/// Outcome of [`fit_em_with_report`] for the winning restart.
#[derive(Debug, Clone)]
pub struct FitReport {
    pub mixture: GaussianMixture,
    /// Mean log-likelihood after initialization and after every M-step.
    pub log_likelihood_trace: Vec<f64>,
    /// Trace positions produced by an M-step that re-seeded a component.
    pub reseed_iterations: Vec<usize>,
    pub converged: bool,
    pub best_restart: usize,
    /// Final mean log-likelihood of every restart, in restart order.
    pub restart_log_likelihoods: Vec<f64>,
}

impl FitReport {
    pub fn final_log_likelihood(&self) -> f64 {
        *self
            .log_likelihood_trace
            .last()
            .expect("trace holds the initial evaluation")
    }
}

pub fn fit_em(data: &Dataset, k: usize, cfg: &FitConfig) -> Result<GaussianMixture> {
    fit_em_with_report(data, k, cfg).map(|r| r.mixture)
}

/// Fits a `k`-component mixture by EM, keeping the best of `cfg.n_restarts`
/// k-means++ seeded runs (ties go to the earliest restart).
pub fn fit_em_with_report(data: &Dataset, k: usize, cfg: &FitConfig) -> Result<FitReport> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("cannot fit an empty dataset"));
    }
    if k == 0 {
        return Err(Error::invalid("number of components must be ≥ 1"));
    }
    let n = data.len();
    if n < k {
        return Err(Error::invalid(format!(
            "{n} points cannot seed {k} components"
        )));
    }
    if n < k * (data.dim() + 1) {
        warn!(
            "fitting {k} components to only {n} points in {} dimensions",
            data.dim()
        );
    }

    let runs = (0..cfg.n_restarts)
        .into_par_iter()
        .map(|r| run_restart(data, k, cfg, derive_seed(cfg.seed, r as u64)))
        .collect::<Vec<_>>();

    let mut best: Option<(usize, Restart)> = None;
    let mut finals = Vec::with_capacity(runs.len());
    for (r, run) in runs.into_iter().enumerate() {
        let run = run?;
        let ll = run.final_ll();
        finals.push(ll);
        if best.as_ref().is_none_or(|(_, b)| ll > b.final_ll()) {
            best = Some((r, run));
        }
    }
    let (best_restart, run) = best.expect("n_restarts ≥ 1");
    debug!(
        "EM best restart {best_restart} with mean log-likelihood {:.6}",
        run.final_ll()
    );
    Ok(FitReport {
        mixture: GaussianMixture::new(run.components, run.weights)?,
        log_likelihood_trace: run.trace,
        reseed_iterations: run.reseed_iterations,
        converged: run.converged,
        best_restart,
        restart_log_likelihoods: finals,
    })
}

struct Restart {
    components: Vec<GaussianComponent>,
    weights: Vec<f64>,
    trace: Vec<f64>,
    reseed_iterations: Vec<usize>,
    converged: bool,
}

impl Restart {
    fn final_ll(&self) -> f64 {
        *self.trace.last().unwrap()
    }
}

fn run_restart(data: &Dataset, k: usize, cfg: &FitConfig, seed: u64) -> Result<Restart> {
    let mut rng = rng_from_seed(seed);
    let d = data.dim();
    let ridge = DMatrix::<f64>::identity(d, d) * cfg.reg_eps;
    let global_cov = data.covariance() + &ridge;

    let seeds = kmeans_plus_plus(data, k, &mut rng);
    let mut components = lloyd_refine(data, seeds, LLOYD_MAX_ITER)
        .into_iter()
        .map(|m| GaussianComponent::new(m, global_cov.clone()))
        .collect::<Result<Vec<_>>>()?;
    let mut weights = vec![1.0 / k as f64; k];
    let mut resp = vec![0.0; data.len() * k];

    let mut trace = vec![e_step(data, &components, &weights, &mut resp)];
    let mut reseed_iterations = Vec::new();
    let mut converged = false;
    for _ in 0..cfg.max_iter {
        let reseeded = m_step(
            data,
            &resp,
            &ridge,
            &global_cov,
            &mut rng,
            &mut components,
            &mut weights,
        )?;
        let ll = e_step(data, &components, &weights, &mut resp);
        let prev = *trace.last().unwrap();
        trace.push(ll);
        if reseeded {
            reseed_iterations.push(trace.len() - 1);
            continue;
        }
        if (ll - prev).abs() < cfg.tol {
            converged = true;
            break;
        }
    }
    Ok(Restart {
        components,
        weights,
        trace,
        reseed_iterations,
        converged,
    })
}

/// k-means++ seeding: the first center uniformly, later centers with
/// probability proportional to squared distance from the nearest chosen one.
fn kmeans_plus_plus(data: &Dataset, k: usize, rng: &mut Rng) -> Vec<DVector<f64>> {
    let n = data.len();
    let first = rng.random_range(0..n);
    let mut centers = vec![data.row(first).to_vec()];
    let mut dist2: Vec<f64> = data.rows().map(|r| sq_dist(r, &centers[0])).collect();
    while centers.len() < k {
        let next = match WeightedIndex::new(&dist2) {
            Ok(w) => w.sample(rng),
            // every point already coincides with a center
            Err(_) => rng.random_range(0..n),
        };
        let c = data.row(next).to_vec();
        for (dd, r) in dist2.iter_mut().zip(data.rows()) {
            *dd = dd.min(sq_dist(r, &c));
        }
        centers.push(c);
    }
    centers.into_iter().map(DVector::from_vec).collect()
}

/// Lloyd iterations from the seeded centers until assignments stop changing.
/// A center that loses all its points stays where it is.
fn lloyd_refine(
    data: &Dataset,
    mut centers: Vec<DVector<f64>>,
    max_iter: usize,
) -> Vec<DVector<f64>> {
    let (k, d) = (centers.len(), data.dim());
    let mut assignment = vec![usize::MAX; data.len()];
    for _ in 0..max_iter {
        let mut changed = false;
        for (a, r) in assignment.iter_mut().zip(data.rows()) {
            let nearest = (0..k)
                .map(|j| sq_dist(r, centers[j].as_slice()))
                .enumerate()
                .fold(
                    (0, f64::INFINITY),
                    |best, (j, dd)| if dd < best.1 { (j, dd) } else { best },
                )
                .0;
            changed |= *a != nearest;
            *a = nearest;
        }
        if !changed {
            break;
        }
        let mut sums = vec![DVector::<f64>::zeros(d); k];
        let mut counts = vec![0usize; k];
        for (&a, r) in assignment.iter().zip(data.rows()) {
            sums[a] += DVector::from_column_slice(r);
            counts[a] += 1;
        }
        for j in 0..k {
            if counts[j] > 0 {
                centers[j] = &sums[j] / counts[j] as f64;
            }
        }
    }
    centers
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Fills responsibilities and returns the mean log-likelihood. Chunks are
/// fixed-size and reduced in order, so the result does not depend on the
/// number of worker threads.
fn e_step(
    data: &Dataset,
    components: &[GaussianComponent],
    weights: &[f64],
    resp: &mut [f64],
) -> f64 {
    let k = components.len();
    let log_w: Vec<f64> = weights.iter().map(|w| w.ln()).collect();
    let chunk_sums: Vec<f64> = resp
        .par_chunks_mut(E_STEP_CHUNK * k)
        .enumerate()
        .map(|(c, block)| {
            let mut sum = 0.0;
            for (i, r) in block.chunks_exact_mut(k).enumerate() {
                let x = data.row(c * E_STEP_CHUNK + i);
                for ((rk, comp), lw) in r.iter_mut().zip(components).zip(&log_w) {
                    *rk = lw + comp.log_pdf(x);
                }
                let lse = log_sum_exp(r);
                for rk in r.iter_mut() {
                    *rk = (*rk - lse).exp();
                }
                sum += lse;
            }
            sum
        })
        .collect();
    chunk_sums.iter().sum::<f64>() / data.len() as f64
}

fn m_step(
    data: &Dataset,
    resp: &[f64],
    ridge: &DMatrix<f64>,
    global_cov: &DMatrix<f64>,
    rng: &mut Rng,
    components: &mut [GaussianComponent],
    weights: &mut [f64],
) -> Result<bool> {
    let k = components.len();
    let d = data.dim();
    let n = data.len();
    let mut reseeded = false;
    for j in 0..k {
        let nk: f64 = resp.iter().skip(j).step_by(k).sum();
        if nk < COLLAPSE_WEIGHT * n as f64 {
            let idx = rng.random_range(0..n);
            warn!("EM component {j} collapsed (mass {nk:.3e}); re-seeding at data point {idx}");
            components[j] = GaussianComponent::new(
                DVector::from_column_slice(data.row(idx)),
                global_cov.clone(),
            )?;
            weights[j] = 1.0 / k as f64;
            reseeded = true;
            continue;
        }
        let mut mean = DVector::zeros(d);
        for (x, r) in data.rows().zip(resp.iter().skip(j).step_by(k)) {
            for (m, xi) in mean.iter_mut().zip(x) {
                *m += r * xi;
            }
        }
        mean /= nk;
        let mut cov = DMatrix::zeros(d, d);
        for (x, r) in data.rows().zip(resp.iter().skip(j).step_by(k)) {
            for a in 0..d {
                let da = r * (x[a] - mean[a]);
                for b in 0..=a {
                    cov[(a, b)] += da * (x[b] - mean[b]);
                }
            }
        }
        for a in 0..d {
            for b in 0..a {
                cov[(b, a)] = cov[(a, b)];
            }
        }
        cov = cov / nk + ridge;
        components[j] = GaussianComponent::new(mean, cov).map_err(|e| match e {
            Error::NotPositiveDefinite { .. } => Error::NotPositiveDefinite { component: j },
            other => other,
        })?;
        weights[j] = nk / n as f64;
    }
    let total: f64 = weights.iter().sum();
    for w in weights.iter_mut() {
        *w /= total;
    }
    Ok(reseeded)
}
